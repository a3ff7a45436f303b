//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_OBJECTIVES_HPP
#define UNIMOL_OBJECTIVES_HPP

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "unimol/align.hpp"
#include "unimol/encoder.hpp"
#include "unimol/symmetry.hpp"

namespace unimol {

// The four pre-training objectives. Cross-entropy terms are per-token mean
// negative log-likelihood; coordinate terms are per-token mean squared
// error, minimized over the automorphism set (and, for the 2D->3D loss,
// over proper rigid motions via the quaternion alignment). The minima pick
// a branch from current values and differentiate through it, which is the
// exact envelope gradient away from ties.

struct LossWeights {
  double atom = 1.0;
  double coord = 1.0;
  double two_three = 1.0;  // 2D -> 3D
  double three_two = 1.0;  // 3D -> 2D

  bool any_reconstruction() const { return atom != 0.0 || coord != 0.0; }
};

enum class LossSelector { kAtom, kCoord, kTwoDThreeD, kThreeDTwoD, kSum };

struct LossReport {
  double l_atom = 0.0;
  double l_coord = 0.0;
  double l_2d3d = 0.0;
  double l_3d2d = 0.0;
  double total = 0.0;
  int masked_atoms = 0;
  int masked_coords = 0;
};

// ---------------------------------------------------------------------------
// Tape builders. Each appends the loss expression over an existing node and
// returns the scalar node.

inline Tape::NodeId build_loss_atom(Tape& tape, Tape::NodeId logits, const std::vector<int>& targets,
                                    const std::vector<int>& masked) {
  std::vector<int> masked_targets;
  masked_targets.reserve(masked.size());
  for (int i : masked) {
    if (i < 0 || i >= static_cast<int>(targets.size())) throw Error("loss_atom: masked index out of range");
    masked_targets.push_back(targets[static_cast<std::size_t>(i)]);
  }
  return tape.cross_entropy(logits, masked, masked_targets);
}

/// Mean squared error over the masked rows between ref and the best
/// automorphism image of pred. No rigid alignment: the unmasked rows pin
/// the frame.
inline Tape::NodeId build_loss_coord(Tape& tape, Tape::NodeId pred, const Mat& ref,
                                     const std::vector<int>& masked, const AutomorphismSet& aut) {
  const Mat& pv = tape.val(pred);
  if (!pv.same_shape(ref)) throw Error("loss_coord: shape mismatch");
  if (aut.perms.empty()) throw Error("loss_coord: empty automorphism set");
  if (masked.empty()) return tape.constant(Mat(1, 1));

  // Pick the branch by value, then build the expression for that branch.
  const Permutation* best = nullptr;
  double best_value = std::numeric_limits<double>::infinity();
  for (const Permutation& alpha : aut.perms) {
    double s = 0.0;
    for (int j : masked) {
      const int src = alpha.map[static_cast<std::size_t>(j)];
      for (int c = 0; c < 3; ++c) {
        const double d = ref(j, c) - pv(src, c);
        s += d * d;
      }
    }
    if (s < best_value) {
      best_value = s;
      best = &alpha;
    }
  }

  Tape::NodeId permuted = tape.permute_rows(pred, best->map);
  Tape::NodeId picked = tape.gather_rows(permuted, masked);
  Mat ref_masked(static_cast<int>(masked.size()), 3);
  for (int r = 0; r < ref_masked.rows(); ++r)
    for (int c = 0; c < 3; ++c) ref_masked(r, c) = ref(masked[static_cast<std::size_t>(r)], c);
  Tape::NodeId diff = tape.sub(picked, tape.constant(std::move(ref_masked)));
  return tape.scale(tape.sum_all(tape.mul(diff, diff)), 1.0 / static_cast<double>(masked.size()));
}

/// Mean squared error over masked rows without the automorphism minimum.
inline Tape::NodeId build_loss_coord_naive(Tape& tape, Tape::NodeId pred, const Mat& ref,
                                           const std::vector<int>& masked) {
  AutomorphismSet identity = AutomorphismSet::identity_only(ref.rows());
  return build_loss_coord(tape, pred, ref, masked, identity);
}

/// (1/|V|) min over alpha in P and proper rigid motions of the squared
/// residual; equals the squared symmetry-minimized RMSD. The optimal
/// rotation enters the tape as a constant, so the gradient is the envelope
/// gradient at the chosen branch.
inline Tape::NodeId build_loss_2d3d(Tape& tape, Tape::NodeId pred, const Mat& ref,
                                    const AutomorphismSet& aut) {
  const Mat& pv = tape.val(pred);
  if (!pv.same_shape(ref)) throw Error("loss_2d3d: shape mismatch");
  if (aut.perms.empty()) throw Error("loss_2d3d: empty automorphism set");
  const int n = ref.rows();

  const Permutation* best = nullptr;
  AlignResult best_align;
  double best_rmsd = std::numeric_limits<double>::infinity();
  for (const Permutation& alpha : aut.perms) {
    const AlignResult res = optimal_alignment(ref, apply_permutation(alpha, pv));
    if (res.rmsd < best_rmsd) {
      best_rmsd = res.rmsd;
      best_align = res;
      best = &alpha;
    }
  }

  Tape::NodeId permuted = tape.permute_rows(pred, best->map);
  Tape::NodeId rotated = tape.matmul(permuted, tape.constant(best_align.transform.rotation));
  Mat t_row(1, 3);
  for (int c = 0; c < 3; ++c) t_row(0, c) = best_align.transform.translation[static_cast<std::size_t>(c)];
  Tape::NodeId moved = tape.add_row(rotated, tape.constant(std::move(t_row)));
  Tape::NodeId diff = tape.sub(moved, tape.constant(ref));
  return tape.scale(tape.sum_all(tape.mul(diff, diff)), 1.0 / static_cast<double>(n));
}

/// Mean negative log-likelihood of the true atom types over all atoms; the
/// all-masked counterpart of the atom reconstruction loss.
inline Tape::NodeId build_loss_3d2d(Tape& tape, Tape::NodeId logits, const std::vector<int>& targets) {
  std::vector<int> rows(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) rows[i] = static_cast<int>(i);
  return tape.cross_entropy(logits, rows, targets);
}

// ---------------------------------------------------------------------------
// Plain evaluators (thin wrappers over the builders, so both paths share
// one implementation).

inline double loss_atom(const Mat& logits, const std::vector<int>& targets, const std::vector<int>& masked) {
  Tape tape;
  return tape.val(build_loss_atom(tape, tape.constant(logits), targets, masked))(0, 0);
}

inline double loss_coord(const Mat& ref, const Mat& pred, const std::vector<int>& masked,
                         const AutomorphismSet& aut) {
  Tape tape;
  return tape.val(build_loss_coord(tape, tape.constant(pred), ref, masked, aut))(0, 0);
}

inline double loss_coord_naive(const Mat& ref, const Mat& pred, const std::vector<int>& masked) {
  Tape tape;
  return tape.val(build_loss_coord_naive(tape, tape.constant(pred), ref, masked))(0, 0);
}

inline double loss_2d3d(const Mat& ref, const Mat& pred, const AutomorphismSet& aut) {
  Tape tape;
  return tape.val(build_loss_2d3d(tape, tape.constant(pred), ref, aut))(0, 0);
}

inline double loss_3d2d(const Mat& logits, const std::vector<int>& targets) {
  Tape tape;
  return tape.val(build_loss_3d2d(tape, tape.constant(logits), targets))(0, 0);
}

// ---------------------------------------------------------------------------
// Batched pre-training loss and its gradients.

/// One molecule's pre-training inputs: the pass-1 mask plan and the pass-2
/// random input conformation. Pass 3 needs no extra data (all atoms masked,
/// true coordinates). The automorphism set is cached here because it is a
/// per-molecule constant.
struct PretrainExample {
  Molecule mol;
  AutomorphismSet aut;
  MaskPlan plan;
  Mat conf_2d3d;

  std::vector<int> atom_targets() const {
    std::vector<int> t(static_cast<std::size_t>(mol.n_atoms()));
    for (int i = 0; i < mol.n_atoms(); ++i) t[static_cast<std::size_t>(i)] = mol.atoms[static_cast<std::size_t>(i)].atomic_number;
    return t;
  }
};

struct GradResult {
  NamedTensors grads;
  LossReport report;
};

namespace detail {

struct MoleculeLossNodes {
  Tape::NodeId atom = -1;
  Tape::NodeId coord = -1;
  Tape::NodeId two_three = -1;
  Tape::NodeId three_two = -1;
};

/// Builds the passes required by the selector for one molecule on one tape.
inline MoleculeLossNodes build_molecule_losses(Tape& tape, const ModelParams& params,
                                               const PretrainExample& ex, LossSelector sel,
                                               const LossWeights& weights, bool track,
                                               std::vector<std::pair<std::string, Tape::NodeId>>* leaves) {
  if (!ex.mol.coords) throw Error("pretraining: molecule '" + ex.mol.id + "' has no coordinates");
  const Mat& ref = *ex.mol.coords;
  const auto targets = ex.atom_targets();
  const int n = ex.mol.n_atoms();

  const bool want_atom = (sel == LossSelector::kAtom) || (sel == LossSelector::kSum && weights.atom != 0.0);
  const bool want_coord = (sel == LossSelector::kCoord) || (sel == LossSelector::kSum && weights.coord != 0.0);
  const bool want_23 = (sel == LossSelector::kTwoDThreeD) || (sel == LossSelector::kSum && weights.two_three != 0.0);
  const bool want_32 = (sel == LossSelector::kThreeDTwoD) || (sel == LossSelector::kSum && weights.three_two != 0.0);

  MoleculeLossNodes nodes;
  auto collect = [&](const ForwardGraph& fg) {
    if (leaves)
      for (const auto& kv : fg.param_leaves) leaves->push_back(kv);
  };

  if (want_atom || want_coord) {
    const ForwardGraph fg = build_forward(tape, params, ex.mol, ref, ex.plan, track);
    collect(fg);
    if (want_atom) nodes.atom = build_loss_atom(tape, fg.atom_logits, targets, ex.plan.masked_atoms(n));
    if (want_coord)
      nodes.coord = build_loss_coord(tape, fg.pred_conf, ref, ex.plan.masked_coords(n), ex.aut);
  }
  if (want_23) {
    if (ex.conf_2d3d.rows() != n || ex.conf_2d3d.cols() != 3)
      throw Error("pretraining: 2D->3D input conformation shape mismatch for '" + ex.mol.id + "'");
    const ForwardGraph fg = build_forward(tape, params, ex.mol, ex.conf_2d3d, MaskPlan::none(n), track);
    collect(fg);
    nodes.two_three = build_loss_2d3d(tape, fg.pred_conf, ref, ex.aut);
  }
  if (want_32) {
    const ForwardGraph fg = build_forward(tape, params, ex.mol, ref, MaskPlan::all_atoms_masked(n), track);
    collect(fg);
    nodes.three_two = build_loss_3d2d(tape, fg.atom_logits, targets);
  }
  return nodes;
}

}  // namespace detail

/// Exact reverse-mode gradients of the selected scalar loss, averaged over
/// the batch, with respect to every parameter tensor. Per-molecule
/// contributions are accumulated in batch order.
inline GradResult gradients(const ModelParams& params, const std::vector<PretrainExample>& batch,
                            LossSelector sel, const LossWeights& weights = {}, int threads = 1) {
  if (batch.empty()) throw Error("gradients: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  struct PerMolecule {
    NamedTensors grads;
    LossReport report;
  };
  std::vector<PerMolecule> partial(batch.size());

  parallel_for(static_cast<int>(batch.size()), threads, [&](int bi) {
    const PretrainExample& ex = batch[static_cast<std::size_t>(bi)];
    Tape tape;
    std::vector<std::pair<std::string, Tape::NodeId>> leaves;
    const auto nodes =
        detail::build_molecule_losses(tape, params, ex, sel, weights, /*track=*/true, &leaves);

    LossReport& rep = partial[static_cast<std::size_t>(bi)].report;
    const int n = ex.mol.n_atoms();
    rep.masked_atoms = static_cast<int>(ex.plan.masked_atoms(n).size());
    rep.masked_coords = static_cast<int>(ex.plan.masked_coords(n).size());

    // Weighted scalar for the selected combination.
    Tape::NodeId total = -1;
    auto accumulate_term = [&](Tape::NodeId node, double weight, double* slot) {
      if (node < 0) return;
      *slot = tape.val(node)(0, 0);
      if (weight == 0.0) return;
      Tape::NodeId term = (weight == 1.0) ? node : tape.scale(node, weight);
      total = (total < 0) ? term : tape.add(total, term);
    };
    const bool sum_mode = (sel == LossSelector::kSum);
    accumulate_term(nodes.atom, sum_mode ? weights.atom : 1.0, &rep.l_atom);
    accumulate_term(nodes.coord, sum_mode ? weights.coord : 1.0, &rep.l_coord);
    accumulate_term(nodes.two_three, sum_mode ? weights.two_three : 1.0, &rep.l_2d3d);
    accumulate_term(nodes.three_two, sum_mode ? weights.three_two : 1.0, &rep.l_3d2d);

    NamedTensors grads = params.tensors.zeros_like();
    if (total >= 0) {
      const double value = tape.val(total)(0, 0);
      if (!std::isfinite(value))
        throw Error("gradients: non-finite loss for molecule '" + ex.mol.id + "'");
      rep.total = value;
      tape.backward(total);
      for (const auto& [name, leaf] : leaves) add_inplace(grads.at(name), tape.grad(leaf));
    }
    partial[static_cast<std::size_t>(bi)].grads = std::move(grads);
  });

  GradResult out;
  out.grads = params.tensors.zeros_like();
  for (const PerMolecule& pm : partial) {
    for (int i = 0; i < out.grads.count(); ++i) axpy_inplace(out.grads.value(i), inv_b, pm.grads.item(i).second);
    out.report.l_atom += inv_b * pm.report.l_atom;
    out.report.l_coord += inv_b * pm.report.l_coord;
    out.report.l_2d3d += inv_b * pm.report.l_2d3d;
    out.report.l_3d2d += inv_b * pm.report.l_3d2d;
    out.report.total += inv_b * pm.report.total;
    out.report.masked_atoms += pm.report.masked_atoms;
    out.report.masked_coords += pm.report.masked_coords;
  }
  return out;
}

/// Forward-only loss evaluation with the same batch semantics as
/// gradients().
inline LossReport evaluate_losses(const ModelParams& params, const std::vector<PretrainExample>& batch,
                                  const LossWeights& weights = {}, int threads = 1) {
  if (batch.empty()) throw Error("evaluate_losses: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<LossReport> partial(batch.size());
  parallel_for(static_cast<int>(batch.size()), threads, [&](int bi) {
    const PretrainExample& ex = batch[static_cast<std::size_t>(bi)];
    Tape tape;
    const auto nodes = detail::build_molecule_losses(tape, params, ex, LossSelector::kSum, weights,
                                                     /*track=*/false, nullptr);
    LossReport& rep = partial[static_cast<std::size_t>(bi)];
    const int n = ex.mol.n_atoms();
    rep.masked_atoms = static_cast<int>(ex.plan.masked_atoms(n).size());
    rep.masked_coords = static_cast<int>(ex.plan.masked_coords(n).size());
    if (nodes.atom >= 0) rep.l_atom = tape.val(nodes.atom)(0, 0);
    if (nodes.coord >= 0) rep.l_coord = tape.val(nodes.coord)(0, 0);
    if (nodes.two_three >= 0) rep.l_2d3d = tape.val(nodes.two_three)(0, 0);
    if (nodes.three_two >= 0) rep.l_3d2d = tape.val(nodes.three_two)(0, 0);
    rep.total = weights.atom * rep.l_atom + weights.coord * rep.l_coord +
                weights.two_three * rep.l_2d3d + weights.three_two * rep.l_3d2d;
  });
  LossReport out;
  for (const LossReport& rep : partial) {
    out.l_atom += inv_b * rep.l_atom;
    out.l_coord += inv_b * rep.l_coord;
    out.l_2d3d += inv_b * rep.l_2d3d;
    out.l_3d2d += inv_b * rep.l_3d2d;
    out.total += inv_b * rep.total;
    out.masked_atoms += rep.masked_atoms;
    out.masked_coords += rep.masked_coords;
  }
  return out;
}

}  // namespace unimol

#endif  // UNIMOL_OBJECTIVES_HPP
