//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_PARAMS_HPP
#define UNIMOL_PARAMS_HPP

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unimol/mat.hpp"

namespace unimol {

/// Encoder hyperparameters. Defaults mirror the 12-block, 256-wide
/// configuration; tests and desk-scale runs shrink them.
struct ModelConfig {
  int layers = 12;
  int hidden = 256;
  int atom_vocab = 119;  // indexed directly by atomic number, 1..118
  int bond_vocab = 4;
  double leaky_slope = 0.01;
  double norm_eps = 1e-5;

  void validate() const {
    if (layers < 1) throw Error("ModelConfig: layers must be >= 1");
    if (hidden < 2) throw Error("ModelConfig: hidden must be >= 2");
    if (atom_vocab < 2 || bond_vocab < 2) throw Error("ModelConfig: vocab sizes must be >= 2");
    if (norm_eps <= 0.0) throw Error("ModelConfig: norm_eps must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Ordered collection of named tensors. Parameters, gradients and Adam
/// moments all share one schema so they can be iterated in lockstep.
class NamedTensors {
 public:
  Mat& add(const std::string& name, Mat value) {
    if (index_.count(name)) throw Error("NamedTensors: duplicate tensor '" + name + "'");
    index_.emplace(name, static_cast<int>(items_.size()));
    items_.emplace_back(name, std::move(value));
    return items_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Mat& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("NamedTensors: unknown tensor '" + name + "'");
    return items_[static_cast<std::size_t>(it->second)].second;
  }

  const Mat& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("NamedTensors: unknown tensor '" + name + "'");
    return items_[static_cast<std::size_t>(it->second)].second;
  }

  int count() const { return static_cast<int>(items_.size()); }
  const std::pair<std::string, Mat>& item(int i) const { return items_[static_cast<std::size_t>(i)]; }
  Mat& value(int i) { return items_[static_cast<std::size_t>(i)].second; }
  const std::string& name(int i) const { return items_[static_cast<std::size_t>(i)].first; }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  /// Same names, same order, same shapes.
  static bool same_schema(const NamedTensors& a, const NamedTensors& b) {
    if (a.count() != b.count()) return false;
    for (int i = 0; i < a.count(); ++i) {
      if (a.name(i) != b.name(i)) return false;
      if (!a.item(i).second.same_shape(b.item(i).second)) return false;
    }
    return true;
  }

  /// Zero tensors matching this schema.
  NamedTensors zeros_like() const {
    NamedTensors out;
    for (const auto& [name, value] : items_) out.add(name, Mat::zeros(value.rows(), value.cols()));
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, value] : items_) n += value.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, value] : items_) {
      if (!value.all_finite()) return false;
    }
    return true;
  }

  friend bool operator==(const NamedTensors& a, const NamedTensors& b) { return a.items_ == b.items_; }

 private:
  std::vector<std::pair<std::string, Mat>> items_;
  std::unordered_map<std::string, int> index_;
};

enum class InitKind { kWeight, kEmbedding, kNormScale, kNormShift, kBias };

struct ParamSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  InitKind kind = InitKind::kWeight;
};

/// Single source of truth for every learnable tensor and its shape. The
/// two-layer FF blocks are (in -> hidden -> out) with normalization between
/// the layers, so each carries w1, norm scale g1 / shift b1, w2 and bias b2.
inline std::vector<ParamSpec> param_schema(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.hidden;
  std::vector<ParamSpec> specs;
  auto ff = [&](const std::string& prefix, int in, int out) {
    specs.push_back({prefix + ".w1", in, d, InitKind::kWeight});
    specs.push_back({prefix + ".g1", 1, d, InitKind::kNormScale});
    specs.push_back({prefix + ".b1", 1, d, InitKind::kNormShift});
    specs.push_back({prefix + ".w2", d, out, InitKind::kWeight});
    specs.push_back({prefix + ".b2", 1, out, InitKind::kBias});
  };

  specs.push_back({"atom_embed", cfg.atom_vocab, d, InitKind::kEmbedding});
  specs.push_back({"bond_embed", cfg.bond_vocab, d, InitKind::kEmbedding});
  specs.push_back({"mask_atom", 1, d, InitKind::kEmbedding});
  specs.push_back({"mask_bond", 1, d, InitKind::kEmbedding});
  specs.push_back({"global_init", 1, d, InitKind::kEmbedding});

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "blk" + std::to_string(l);
    ff(p + ".coord_ff", 3, d);
    ff(p + ".dist_ff", 1, d);
    ff(p + ".bond_ff", 4 * d, d);
    specs.push_back({p + ".att_q", d, d, InitKind::kWeight});
    specs.push_back({p + ".att_k", 2 * d, d, InitKind::kWeight});
    specs.push_back({p + ".att_v", 2 * d, d, InitKind::kWeight});
    specs.push_back({p + ".att_a", d, 1, InitKind::kWeight});
    ff(p + ".atom_mlp", 3 * d, d);
    ff(p + ".global_ff", 3 * d, d);
    ff(p + ".disp_ff", d, 3);
  }
  ff("atom_head", d, cfg.atom_vocab);
  return specs;
}

/// All learnable tensors of the encoder plus its configuration.
struct ModelParams {
  ModelConfig config;
  NamedTensors tensors;
};

/// Deterministic initialization: weight matrices uniform in
/// +-sqrt(6/fan_in), embeddings uniform in +-0.1, normalization scale 1 and
/// shift 0, biases 0. Tensors are drawn in schema order from one stream.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams params;
  params.config = cfg;
  Rng rng(mix_seed(seed, 0x1a17));
  for (const ParamSpec& spec : param_schema(cfg)) {
    Mat m(spec.rows, spec.cols);
    switch (spec.kind) {
      case InitKind::kWeight: {
        const double bound = std::sqrt(6.0 / spec.rows);
        for (int r = 0; r < spec.rows; ++r)
          for (int c = 0; c < spec.cols; ++c) m(r, c) = rng.uniform_pm1() * bound;
        break;
      }
      case InitKind::kEmbedding: {
        for (int r = 0; r < spec.rows; ++r)
          for (int c = 0; c < spec.cols; ++c) m(r, c) = rng.uniform_pm1() * 0.1;
        break;
      }
      case InitKind::kNormScale:
        m.fill(1.0);
        break;
      case InitKind::kNormShift:
      case InitKind::kBias:
        break;  // zeros
    }
    params.tensors.add(spec.name, std::move(m));
  }
  return params;
}

}  // namespace unimol

#endif  // UNIMOL_PARAMS_HPP
