//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_TAPE_HPP
#define UNIMOL_TAPE_HPP

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "unimol/mat.hpp"

namespace unimol {

// Define-by-run reverse-mode autodiff over Mat values. Values are computed
// eagerly as nodes are appended, so the node list is topologically ordered
// and backward() is a single reverse sweep. Graphs are rebuilt per molecule;
// parameters enter as grad-tracked leaves and their gradients are read back
// after backward().

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kConcatCols,
  kAddRow,        // matrix + broadcast row vector
  kBroadcastRow,  // row vector -> n identical rows
  kGatherRows,
  kLookupMasked,  // embedding lookup with per-row mask substitute
  kRelu,
  kLeakyRelu,
  kSigmoid,
  kRowNorm,       // per-row L2 norm -> m x 1
  kMolNorm,       // normalize per channel over rows
  kFeatNorm,      // normalize per row over channels
  kMeanRows,      // 1 x c mean over rows
  kSumAll,        // 1 x 1
  kSegSoftmax,    // softmax of an m x 1 score column within segments
  kSegWeightedSum,
  kCrossEntropy,  // mean NLL over selected rows
  kBceLogits,     // summed binary cross-entropy over labeled entries
};

class Tape {
 public:
  using NodeId = int;

  struct Node {
    Op op = Op::kLeaf;
    std::array<NodeId, 3> in{-1, -1, -1};
    std::vector<NodeId> in_many;   // ConcatCols inputs
    std::vector<int> idx;          // gather/permute indices, segment ids, CE rows
    std::vector<int> idx2;         // CE targets, lookup ids
    std::vector<char> flags;       // lookup mask, BCE label mask
    std::vector<double> reals;     // BCE labels
    double scalar = 0.0;           // scale factor / slope / epsilon
    int extent = 0;                // broadcast rows / segment count
    Mat val;
    Mat aux;   // op-specific cache (normalized values, probabilities, weights)
    Mat aux2;  // op-specific cache (inverse std)
    Mat grad;
    bool needs_grad = false;
  };

  int size() const { return static_cast<int>(nodes_.size()); }
  const Mat& val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].val; }

  /// Gradient accumulated at a node; zero-shaped like the value when the
  /// node was not reached by backward().
  const Mat& grad(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Mat::zeros(n.val.rows(), n.val.cols());
    return n.grad;
  }

  NodeId leaf(Mat value, bool needs_grad) {
    Node n;
    n.op = Op::kLeaf;
    n.val = std::move(value);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  NodeId constant(Mat value) { return leaf(std::move(value), false); }

  NodeId add(NodeId a, NodeId b) {
    const Mat& va = val(a);
    const Mat& vb = val(b);
    if (!va.same_shape(vb)) throw Error("tape add: shape mismatch");
    Node n = binary(Op::kAdd, a, b);
    n.val = va;
    add_inplace(n.val, vb);
    return push(std::move(n));
  }

  NodeId sub(NodeId a, NodeId b) {
    const Mat& va = val(a);
    const Mat& vb = val(b);
    if (!va.same_shape(vb)) throw Error("tape sub: shape mismatch");
    Node n = binary(Op::kSub, a, b);
    n.val = va;
    axpy_inplace(n.val, -1.0, vb);
    return push(std::move(n));
  }

  NodeId mul(NodeId a, NodeId b) {
    const Mat& va = val(a);
    const Mat& vb = val(b);
    if (!va.same_shape(vb)) throw Error("tape mul: shape mismatch");
    Node n = binary(Op::kMul, a, b);
    n.val = va;
    double* d = n.val.data();
    const double* s = vb.data();
    for (std::size_t i = 0; i < n.val.size(); ++i) d[i] *= s[i];
    return push(std::move(n));
  }

  NodeId scale(NodeId a, double factor) {
    Node n = unary(Op::kScale, a);
    n.scalar = factor;
    n.val = val(a);
    double* d = n.val.data();
    for (std::size_t i = 0; i < n.val.size(); ++i) d[i] *= factor;
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) {
    Node n = binary(Op::kMatMul, a, b);
    n.val = unimol::matmul(val(a), val(b));
    return push(std::move(n));
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw Error("tape concat: no inputs");
    const int rows = val(parts[0]).rows();
    int cols = 0;
    for (NodeId p : parts) {
      if (val(p).rows() != rows) throw Error("tape concat: row mismatch");
      cols += val(p).cols();
    }
    Node n;
    n.op = Op::kConcatCols;
    n.in_many = parts;
    n.val = Mat(rows, cols);
    int at = 0;
    for (NodeId p : parts) {
      const Mat& v = val(p);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < v.cols(); ++c) n.val(r, at + c) = v(r, c);
      at += v.cols();
      n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(p)].needs_grad;
    }
    return push(std::move(n));
  }

  /// matrix (n x c) plus a 1 x c row vector broadcast over rows.
  NodeId add_row(NodeId a, NodeId row) {
    const Mat& va = val(a);
    const Mat& vr = val(row);
    if (vr.rows() != 1 || vr.cols() != va.cols()) throw Error("tape add_row: need 1 x cols row");
    Node n = binary(Op::kAddRow, a, row);
    n.val = va;
    for (int r = 0; r < va.rows(); ++r)
      for (int c = 0; c < va.cols(); ++c) n.val(r, c) += vr(0, c);
    return push(std::move(n));
  }

  NodeId broadcast_row(NodeId row, int rows) {
    const Mat& vr = val(row);
    if (vr.rows() != 1) throw Error("tape broadcast_row: input must be a row vector");
    Node n = unary(Op::kBroadcastRow, row);
    n.extent = rows;
    n.val = Mat(rows, vr.cols());
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < vr.cols(); ++c) n.val(r, c) = vr(0, c);
    return push(std::move(n));
  }

  NodeId gather_rows(NodeId a, std::vector<int> rows) {
    const Mat& va = val(a);
    Node n = unary(Op::kGatherRows, a);
    n.val = Mat(static_cast<int>(rows.size()), va.cols());
    for (int r = 0; r < n.val.rows(); ++r) {
      const int src = rows[static_cast<std::size_t>(r)];
      if (src < 0 || src >= va.rows()) throw Error("tape gather: row out of range");
      for (int c = 0; c < va.cols(); ++c) n.val(r, c) = va(src, c);
    }
    n.idx = std::move(rows);
    return push(std::move(n));
  }

  /// Row j of the result is row perm[j] of the input (alpha(R) semantics).
  NodeId permute_rows(NodeId a, const std::vector<int>& perm) {
    if (static_cast<int>(perm.size()) != val(a).rows()) throw Error("tape permute: length mismatch");
    return gather_rows(a, perm);
  }

  /// Embedding lookup: row r of the result is table[ids[r]], or the 1 x d
  /// mask row when masked[r] is set.
  NodeId lookup_masked(NodeId table, NodeId mask_row, std::vector<int> ids, std::vector<char> masked) {
    const Mat& vt = val(table);
    const Mat& vm = val(mask_row);
    if (vm.rows() != 1 || vm.cols() != vt.cols()) throw Error("tape lookup: mask row shape");
    if (ids.size() != masked.size()) throw Error("tape lookup: ids/mask size mismatch");
    Node n;
    n.op = Op::kLookupMasked;
    n.in = {table, mask_row, -1};
    n.needs_grad = nodes_[static_cast<std::size_t>(table)].needs_grad ||
                   nodes_[static_cast<std::size_t>(mask_row)].needs_grad;
    n.val = Mat(static_cast<int>(ids.size()), vt.cols());
    for (int r = 0; r < n.val.rows(); ++r) {
      if (masked[static_cast<std::size_t>(r)]) {
        for (int c = 0; c < vt.cols(); ++c) n.val(r, c) = vm(0, c);
      } else {
        const int id = ids[static_cast<std::size_t>(r)];
        if (id < 0 || id >= vt.rows()) throw Error("tape lookup: id out of vocabulary range");
        for (int c = 0; c < vt.cols(); ++c) n.val(r, c) = vt(id, c);
      }
    }
    n.idx2 = std::move(ids);
    n.flags = std::move(masked);
    return push(std::move(n));
  }

  NodeId relu(NodeId a) {
    Node n = unary(Op::kRelu, a);
    n.val = val(a);
    double* d = n.val.data();
    for (std::size_t i = 0; i < n.val.size(); ++i) d[i] = d[i] > 0.0 ? d[i] : 0.0;
    return push(std::move(n));
  }

  NodeId leaky_relu(NodeId a, double slope) {
    Node n = unary(Op::kLeakyRelu, a);
    n.scalar = slope;
    n.val = val(a);
    double* d = n.val.data();
    for (std::size_t i = 0; i < n.val.size(); ++i) d[i] = d[i] > 0.0 ? d[i] : slope * d[i];
    return push(std::move(n));
  }

  NodeId sigmoid(NodeId a) {
    Node n = unary(Op::kSigmoid, a);
    n.val = val(a);
    double* d = n.val.data();
    for (std::size_t i = 0; i < n.val.size(); ++i) d[i] = 1.0 / (1.0 + std::exp(-d[i]));
    return push(std::move(n));
  }

  /// Per-row Euclidean norm: (m x c) -> (m x 1).
  NodeId row_norm(NodeId a) {
    const Mat& va = val(a);
    Node n = unary(Op::kRowNorm, a);
    n.val = Mat(va.rows(), 1);
    for (int r = 0; r < va.rows(); ++r) {
      double s = 0.0;
      for (int c = 0; c < va.cols(); ++c) s += va(r, c) * va(r, c);
      n.val(r, 0) = std::sqrt(s);
    }
    return push(std::move(n));
  }

  /// Normalization with statistics per channel across the rows of the
  /// molecule (atoms or bonds): x_hat = (x - mean) / sqrt(var + eps),
  /// y = x_hat * gamma + beta. gamma/beta are 1 x c.
  NodeId mol_norm(NodeId a, NodeId gamma, NodeId beta, double eps) {
    const Mat& va = val(a);
    const Mat& vg = val(gamma);
    const Mat& vb = val(beta);
    if (vg.rows() != 1 || vg.cols() != va.cols() || vb.rows() != 1 || vb.cols() != va.cols())
      throw Error("tape mol_norm: gamma/beta must be 1 x cols");
    Node n;
    n.op = Op::kMolNorm;
    n.in = {a, gamma, beta};
    n.scalar = eps;
    n.needs_grad = nodes_[static_cast<std::size_t>(a)].needs_grad ||
                   nodes_[static_cast<std::size_t>(gamma)].needs_grad ||
                   nodes_[static_cast<std::size_t>(beta)].needs_grad;
    const int rows = va.rows(), cols = va.cols();
    n.aux = Mat(rows, cols);   // x_hat
    n.aux2 = Mat(1, cols);     // 1/sqrt(var+eps)
    n.val = Mat(rows, cols);
    for (int c = 0; c < cols; ++c) {
      double mean = 0.0;
      for (int r = 0; r < rows; ++r) mean += va(r, c);
      mean /= rows;
      double var = 0.0;
      for (int r = 0; r < rows; ++r) {
        const double d = va(r, c) - mean;
        var += d * d;
      }
      var /= rows;
      const double inv = 1.0 / std::sqrt(var + eps);
      n.aux2(0, c) = inv;
      for (int r = 0; r < rows; ++r) {
        const double xh = (va(r, c) - mean) * inv;
        n.aux(r, c) = xh;
        n.val(r, c) = xh * vg(0, c) + vb(0, c);
      }
    }
    return push(std::move(n));
  }

  /// Normalization with statistics per row across channels (used where a
  /// single vector flows through an FF and row statistics would degenerate).
  NodeId feat_norm(NodeId a, NodeId gamma, NodeId beta, double eps) {
    const Mat& va = val(a);
    const Mat& vg = val(gamma);
    const Mat& vb = val(beta);
    if (vg.rows() != 1 || vg.cols() != va.cols() || vb.rows() != 1 || vb.cols() != va.cols())
      throw Error("tape feat_norm: gamma/beta must be 1 x cols");
    Node n;
    n.op = Op::kFeatNorm;
    n.in = {a, gamma, beta};
    n.scalar = eps;
    n.needs_grad = nodes_[static_cast<std::size_t>(a)].needs_grad ||
                   nodes_[static_cast<std::size_t>(gamma)].needs_grad ||
                   nodes_[static_cast<std::size_t>(beta)].needs_grad;
    const int rows = va.rows(), cols = va.cols();
    n.aux = Mat(rows, cols);
    n.aux2 = Mat(rows, 1);
    n.val = Mat(rows, cols);
    for (int r = 0; r < rows; ++r) {
      double mean = 0.0;
      for (int c = 0; c < cols; ++c) mean += va(r, c);
      mean /= cols;
      double var = 0.0;
      for (int c = 0; c < cols; ++c) {
        const double d = va(r, c) - mean;
        var += d * d;
      }
      var /= cols;
      const double inv = 1.0 / std::sqrt(var + eps);
      n.aux2(r, 0) = inv;
      for (int c = 0; c < cols; ++c) {
        const double xh = (va(r, c) - mean) * inv;
        n.aux(r, c) = xh;
        n.val(r, c) = xh * vg(0, c) + vb(0, c);
      }
    }
    return push(std::move(n));
  }

  NodeId mean_rows(NodeId a) {
    const Mat& va = val(a);
    if (va.rows() < 1) throw Error("tape mean_rows: empty input");
    Node n = unary(Op::kMeanRows, a);
    n.val = Mat(1, va.cols());
    for (int c = 0; c < va.cols(); ++c) {
      double s = 0.0;
      for (int r = 0; r < va.rows(); ++r) s += va(r, c);
      n.val(0, c) = s / va.rows();
    }
    return push(std::move(n));
  }

  NodeId sum_all(NodeId a) {
    const Mat& va = val(a);
    Node n = unary(Op::kSumAll, a);
    n.val = Mat(1, 1);
    double s = 0.0;
    const double* d = va.data();
    for (std::size_t i = 0; i < va.size(); ++i) s += d[i];
    n.val(0, 0) = s;
    return push(std::move(n));
  }

  /// Stable softmax of an m x 1 score column within segments; segment[e] in
  /// [0, n_segments). Weights in each segment sum to 1.
  NodeId segment_softmax(NodeId scores, std::vector<int> segment, int n_segments) {
    const Mat& vs = val(scores);
    if (vs.cols() != 1 || static_cast<int>(segment.size()) != vs.rows())
      throw Error("tape segment_softmax: need m x 1 scores and per-row segments");
    Node n = unary(Op::kSegSoftmax, scores);
    n.extent = n_segments;
    const int m = vs.rows();
    std::vector<double> seg_max(static_cast<std::size_t>(n_segments), -1e300);
    for (int e = 0; e < m; ++e) {
      const int s = segment[static_cast<std::size_t>(e)];
      seg_max[static_cast<std::size_t>(s)] = std::max(seg_max[static_cast<std::size_t>(s)], vs(e, 0));
    }
    std::vector<double> seg_sum(static_cast<std::size_t>(n_segments), 0.0);
    n.val = Mat(m, 1);
    for (int e = 0; e < m; ++e) {
      const int s = segment[static_cast<std::size_t>(e)];
      const double w = std::exp(vs(e, 0) - seg_max[static_cast<std::size_t>(s)]);
      n.val(e, 0) = w;
      seg_sum[static_cast<std::size_t>(s)] += w;
    }
    for (int e = 0; e < m; ++e) n.val(e, 0) /= seg_sum[static_cast<std::size_t>(segment[static_cast<std::size_t>(e)])];
    n.idx = std::move(segment);
    return push(std::move(n));
  }

  /// out[segment[e]] += w[e] * values[e]; rows without incident entries
  /// stay zero.
  NodeId segment_weighted_sum(NodeId weights, NodeId values, std::vector<int> segment, int n_segments) {
    const Mat& vw = val(weights);
    const Mat& vv = val(values);
    if (vw.cols() != 1 || vw.rows() != vv.rows() || static_cast<int>(segment.size()) != vv.rows())
      throw Error("tape segment_weighted_sum: shape mismatch");
    Node n = binary(Op::kSegWeightedSum, weights, values);
    n.extent = n_segments;
    n.val = Mat(n_segments, vv.cols());
    for (int e = 0; e < vv.rows(); ++e) {
      const int s = segment[static_cast<std::size_t>(e)];
      const double w = vw(e, 0);
      for (int c = 0; c < vv.cols(); ++c) n.val(s, c) += w * vv(e, c);
    }
    n.idx = std::move(segment);
    return push(std::move(n));
  }

  /// Mean negative log-softmax probability of the target class over the
  /// selected rows. Empty selection yields 0.
  NodeId cross_entropy(NodeId logits, std::vector<int> rows, std::vector<int> targets) {
    const Mat& vl = val(logits);
    if (rows.size() != targets.size()) throw Error("tape cross_entropy: rows/targets size mismatch");
    Node n = unary(Op::kCrossEntropy, logits);
    const int k = static_cast<int>(rows.size());
    n.aux = Mat(k, vl.cols());  // softmax probabilities per selected row
    double total = 0.0;
    for (int r = 0; r < k; ++r) {
      const int row = rows[static_cast<std::size_t>(r)];
      const int target = targets[static_cast<std::size_t>(r)];
      if (row < 0 || row >= vl.rows()) throw Error("tape cross_entropy: row out of range");
      if (target < 0 || target >= vl.cols()) throw Error("tape cross_entropy: target out of range");
      double mx = vl(row, 0);
      for (int c = 1; c < vl.cols(); ++c) mx = std::max(mx, vl(row, c));
      double z = 0.0;
      for (int c = 0; c < vl.cols(); ++c) z += std::exp(vl(row, c) - mx);
      for (int c = 0; c < vl.cols(); ++c) n.aux(r, c) = std::exp(vl(row, c) - mx) / z;
      total += -(vl(row, target) - mx - std::log(z));
    }
    n.val = Mat(1, 1);
    n.val(0, 0) = k > 0 ? total / k : 0.0;
    n.idx = std::move(rows);
    n.idx2 = std::move(targets);
    return push(std::move(n));
  }

  /// Summed binary cross-entropy with logits over labeled entries of a
  /// 1 x t prediction row; entries with labeled[t] unset contribute nothing.
  NodeId bce_logits(NodeId logits, std::vector<double> labels, std::vector<char> labeled) {
    const Mat& vl = val(logits);
    if (vl.rows() != 1 || static_cast<int>(labels.size()) != vl.cols() || labels.size() != labeled.size())
      throw Error("tape bce_logits: need 1 x t logits with matching labels");
    Node n = unary(Op::kBceLogits, logits);
    double total = 0.0;
    for (int t = 0; t < vl.cols(); ++t) {
      if (!labeled[static_cast<std::size_t>(t)]) continue;
      const double z = vl(0, t);
      const double y = labels[static_cast<std::size_t>(t)];
      // softplus(z) - y*z, stable for both signs of z
      const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      total += softplus - y * z;
    }
    n.val = Mat(1, 1);
    n.val(0, 0) = total;
    n.reals = std::move(labels);
    n.flags = std::move(labeled);
    return push(std::move(n));
  }

  /// Seeds d(output)/d(output) = 1 and runs the reverse sweep. The output
  /// must be scalar (1 x 1).
  void backward(NodeId output) {
    Node& out = nodes_[static_cast<std::size_t>(output)];
    if (out.val.rows() != 1 || out.val.cols() != 1) throw Error("tape backward: output must be scalar");
    if (!out.needs_grad) return;
    ensure_grad(out);
    out.grad(0, 0) = 1.0;
    for (int id = output; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.empty() || !n.needs_grad) continue;
      accumulate(n);
    }
  }

 private:
  std::vector<Node> nodes_;

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  Node unary(Op op, NodeId a) {
    Node n;
    n.op = op;
    n.in = {a, -1, -1};
    n.needs_grad = nodes_[static_cast<std::size_t>(a)].needs_grad;
    return n;
  }

  Node binary(Op op, NodeId a, NodeId b) {
    Node n;
    n.op = op;
    n.in = {a, b, -1};
    n.needs_grad = nodes_[static_cast<std::size_t>(a)].needs_grad ||
                   nodes_[static_cast<std::size_t>(b)].needs_grad;
    return n;
  }

  void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = Mat::zeros(n.val.rows(), n.val.cols());
  }

  Mat* grad_sink(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return nullptr;
    ensure_grad(n);
    return &n.grad;
  }

  void accumulate(Node& n) {
    const Mat& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        if (Mat* da = grad_sink(n.in[0])) add_inplace(*da, g);
        if (Mat* db = grad_sink(n.in[1])) add_inplace(*db, g);
        break;
      }
      case Op::kSub: {
        if (Mat* da = grad_sink(n.in[0])) add_inplace(*da, g);
        if (Mat* db = grad_sink(n.in[1])) axpy_inplace(*db, -1.0, g);
        break;
      }
      case Op::kMul: {
        const Mat& va = val(n.in[0]);
        const Mat& vb = val(n.in[1]);
        if (Mat* da = grad_sink(n.in[0])) {
          double* d = da->data();
          const double* gg = g.data();
          const double* b = vb.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += gg[i] * b[i];
        }
        if (Mat* db = grad_sink(n.in[1])) {
          double* d = db->data();
          const double* gg = g.data();
          const double* a = va.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += gg[i] * a[i];
        }
        break;
      }
      case Op::kScale: {
        if (Mat* da = grad_sink(n.in[0])) axpy_inplace(*da, n.scalar, g);
        break;
      }
      case Op::kMatMul: {
        const Mat& va = val(n.in[0]);
        const Mat& vb = val(n.in[1]);
        if (Mat* da = grad_sink(n.in[0])) add_inplace(*da, matmul_nt(g, vb));
        if (Mat* db = grad_sink(n.in[1])) add_inplace(*db, matmul_tn(va, g));
        break;
      }
      case Op::kConcatCols: {
        int at = 0;
        for (NodeId p : n.in_many) {
          const int cols = val(p).cols();
          if (Mat* dp = grad_sink(p)) {
            for (int r = 0; r < g.rows(); ++r)
              for (int c = 0; c < cols; ++c) (*dp)(r, c) += g(r, at + c);
          }
          at += cols;
        }
        break;
      }
      case Op::kAddRow: {
        if (Mat* da = grad_sink(n.in[0])) add_inplace(*da, g);
        if (Mat* dr = grad_sink(n.in[1])) {
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) (*dr)(0, c) += g(r, c);
        }
        break;
      }
      case Op::kBroadcastRow: {
        if (Mat* dr = grad_sink(n.in[0])) {
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) (*dr)(0, c) += g(r, c);
        }
        break;
      }
      case Op::kGatherRows: {
        if (Mat* da = grad_sink(n.in[0])) {
          for (int r = 0; r < g.rows(); ++r) {
            const int src = n.idx[static_cast<std::size_t>(r)];
            for (int c = 0; c < g.cols(); ++c) (*da)(src, c) += g(r, c);
          }
        }
        break;
      }
      case Op::kLookupMasked: {
        Mat* dt = grad_sink(n.in[0]);
        Mat* dm = grad_sink(n.in[1]);
        for (int r = 0; r < g.rows(); ++r) {
          if (n.flags[static_cast<std::size_t>(r)]) {
            if (dm)
              for (int c = 0; c < g.cols(); ++c) (*dm)(0, c) += g(r, c);
          } else if (dt) {
            const int id = n.idx2[static_cast<std::size_t>(r)];
            for (int c = 0; c < g.cols(); ++c) (*dt)(id, c) += g(r, c);
          }
        }
        break;
      }
      case Op::kRelu: {
        if (Mat* da = grad_sink(n.in[0])) {
          const Mat& va = val(n.in[0]);
          double* d = da->data();
          const double* gg = g.data();
          const double* x = va.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += x[i] > 0.0 ? gg[i] : 0.0;
        }
        break;
      }
      case Op::kLeakyRelu: {
        if (Mat* da = grad_sink(n.in[0])) {
          const Mat& va = val(n.in[0]);
          double* d = da->data();
          const double* gg = g.data();
          const double* x = va.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += x[i] > 0.0 ? gg[i] : n.scalar * gg[i];
        }
        break;
      }
      case Op::kSigmoid: {
        if (Mat* da = grad_sink(n.in[0])) {
          double* d = da->data();
          const double* gg = g.data();
          const double* s = n.val.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += gg[i] * s[i] * (1.0 - s[i]);
        }
        break;
      }
      case Op::kRowNorm: {
        if (Mat* da = grad_sink(n.in[0])) {
          const Mat& va = val(n.in[0]);
          for (int r = 0; r < va.rows(); ++r) {
            const double norm = n.val(r, 0);
            if (norm <= 0.0) continue;
            const double gr = g(r, 0) / norm;
            for (int c = 0; c < va.cols(); ++c) (*da)(r, c) += gr * va(r, c);
          }
        }
        break;
      }
      case Op::kMolNorm: {
        backward_norm(n, /*per_channel=*/true);
        break;
      }
      case Op::kFeatNorm: {
        backward_norm(n, /*per_channel=*/false);
        break;
      }
      case Op::kMeanRows: {
        if (Mat* da = grad_sink(n.in[0])) {
          const double inv = 1.0 / da->rows();
          for (int r = 0; r < da->rows(); ++r)
            for (int c = 0; c < da->cols(); ++c) (*da)(r, c) += g(0, c) * inv;
        }
        break;
      }
      case Op::kSumAll: {
        if (Mat* da = grad_sink(n.in[0])) {
          const double gg = g(0, 0);
          double* d = da->data();
          for (std::size_t i = 0; i < da->size(); ++i) d[i] += gg;
        }
        break;
      }
      case Op::kSegSoftmax: {
        if (Mat* da = grad_sink(n.in[0])) {
          std::vector<double> seg_dot(static_cast<std::size_t>(n.extent), 0.0);
          for (int e = 0; e < g.rows(); ++e)
            seg_dot[static_cast<std::size_t>(n.idx[static_cast<std::size_t>(e)])] += g(e, 0) * n.val(e, 0);
          for (int e = 0; e < g.rows(); ++e) {
            const int s = n.idx[static_cast<std::size_t>(e)];
            (*da)(e, 0) += n.val(e, 0) * (g(e, 0) - seg_dot[static_cast<std::size_t>(s)]);
          }
        }
        break;
      }
      case Op::kSegWeightedSum: {
        const Mat& vw = val(n.in[0]);
        const Mat& vv = val(n.in[1]);
        Mat* dw = grad_sink(n.in[0]);
        Mat* dv = grad_sink(n.in[1]);
        for (int e = 0; e < vv.rows(); ++e) {
          const int s = n.idx[static_cast<std::size_t>(e)];
          if (dw) {
            double dot = 0.0;
            for (int c = 0; c < vv.cols(); ++c) dot += vv(e, c) * g(s, c);
            (*dw)(e, 0) += dot;
          }
          if (dv) {
            const double w = vw(e, 0);
            for (int c = 0; c < vv.cols(); ++c) (*dv)(e, c) += w * g(s, c);
          }
        }
        break;
      }
      case Op::kCrossEntropy: {
        if (Mat* da = grad_sink(n.in[0])) {
          const int k = static_cast<int>(n.idx.size());
          if (k == 0) break;
          const double gg = g(0, 0) / k;
          for (int r = 0; r < k; ++r) {
            const int row = n.idx[static_cast<std::size_t>(r)];
            const int target = n.idx2[static_cast<std::size_t>(r)];
            for (int c = 0; c < da->cols(); ++c) {
              const double onehot = (c == target) ? 1.0 : 0.0;
              (*da)(row, c) += gg * (n.aux(r, c) - onehot);
            }
          }
        }
        break;
      }
      case Op::kBceLogits: {
        if (Mat* da = grad_sink(n.in[0])) {
          const double gg = g(0, 0);
          const Mat& vl = val(n.in[0]);
          for (int t = 0; t < vl.cols(); ++t) {
            if (!n.flags[static_cast<std::size_t>(t)]) continue;
            const double z = vl(0, t);
            const double sig = 1.0 / (1.0 + std::exp(-z));
            (*da)(0, t) += gg * (sig - n.reals[static_cast<std::size_t>(t)]);
          }
        }
        break;
      }
    }
  }

  /// Shared backward for MolNorm (stats over rows per channel) and FeatNorm
  /// (stats over channels per row):
  ///   dx = gamma * inv_std * (dy - mean(dy) - x_hat * mean(dy * x_hat))
  void backward_norm(Node& n, bool per_channel) {
    const Mat& g = n.grad;
    const Mat& vg = val(n.in[1]);
    Mat* da = grad_sink(n.in[0]);
    Mat* dgamma = grad_sink(n.in[1]);
    Mat* dbeta = grad_sink(n.in[2]);
    const int rows = g.rows(), cols = g.cols();

    if (dgamma || dbeta) {
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          if (dgamma) (*dgamma)(0, c) += g(r, c) * n.aux(r, c);
          if (dbeta) (*dbeta)(0, c) += g(r, c);
        }
    }
    if (!da) return;

    if (per_channel) {
      for (int c = 0; c < cols; ++c) {
        double mean_dy = 0.0, mean_dyxh = 0.0;
        for (int r = 0; r < rows; ++r) {
          const double dxh = g(r, c) * vg(0, c);
          mean_dy += dxh;
          mean_dyxh += dxh * n.aux(r, c);
        }
        mean_dy /= rows;
        mean_dyxh /= rows;
        const double inv = n.aux2(0, c);
        for (int r = 0; r < rows; ++r) {
          const double dxh = g(r, c) * vg(0, c);
          (*da)(r, c) += inv * (dxh - mean_dy - n.aux(r, c) * mean_dyxh);
        }
      }
    } else {
      for (int r = 0; r < rows; ++r) {
        double mean_dy = 0.0, mean_dyxh = 0.0;
        for (int c = 0; c < cols; ++c) {
          const double dxh = g(r, c) * vg(0, c);
          mean_dy += dxh;
          mean_dyxh += dxh * n.aux(r, c);
        }
        mean_dy /= cols;
        mean_dyxh /= cols;
        const double inv = n.aux2(r, 0);
        for (int c = 0; c < cols; ++c) {
          const double dxh = g(r, c) * vg(0, c);
          (*da)(r, c) += inv * (dxh - mean_dy - n.aux(r, c) * mean_dyxh);
        }
      }
    }
  }
};

}  // namespace unimol

#endif  // UNIMOL_TAPE_HPP
