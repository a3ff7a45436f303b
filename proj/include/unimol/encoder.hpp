//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_ENCODER_HPP
#define UNIMOL_ENCODER_HPP

#include <array>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unimol/molecule.hpp"
#include "unimol/params.hpp"
#include "unimol/tape.hpp"

namespace unimol {

/// Which atoms and coordinate rows stay visible to the network, plus the
/// uniform [-1, 1] replacement rows for masked coordinates. Masked atoms
/// embed as the atom mask embedding (and their incident bonds as the bond
/// mask embedding); masked coordinate rows are value-replaced before the
/// first block, so the network never sees an explicit coordinate mask.
struct MaskPlan {
  std::vector<int> unmasked_atoms;   // I_a, ascending
  std::vector<int> unmasked_coords;  // I_c, ascending
  double mask_ratio = 0.0;
  std::map<int, std::array<double, 3>> replacements;  // keyed by V \ I_c

  static MaskPlan none(int n_atoms) {
    MaskPlan plan;
    plan.unmasked_atoms.resize(static_cast<std::size_t>(n_atoms));
    plan.unmasked_coords.resize(static_cast<std::size_t>(n_atoms));
    for (int i = 0; i < n_atoms; ++i) {
      plan.unmasked_atoms[static_cast<std::size_t>(i)] = i;
      plan.unmasked_coords[static_cast<std::size_t>(i)] = i;
    }
    return plan;
  }

  /// All atoms masked, all coordinates kept: the 3D -> 2D configuration.
  static MaskPlan all_atoms_masked(int n_atoms) {
    MaskPlan plan = none(n_atoms);
    plan.unmasked_atoms.clear();
    plan.mask_ratio = 1.0;
    return plan;
  }

  std::vector<char> atom_mask_flags(int n_atoms) const {
    std::vector<char> masked(static_cast<std::size_t>(n_atoms), 1);
    for (int i : unmasked_atoms) masked[static_cast<std::size_t>(i)] = 0;
    return masked;
  }

  std::vector<char> coord_mask_flags(int n_atoms) const {
    std::vector<char> masked(static_cast<std::size_t>(n_atoms), 1);
    for (int i : unmasked_coords) masked[static_cast<std::size_t>(i)] = 0;
    return masked;
  }

  std::vector<int> masked_atoms(int n_atoms) const {
    std::vector<int> out;
    const auto flags = atom_mask_flags(n_atoms);
    for (int i = 0; i < n_atoms; ++i)
      if (flags[static_cast<std::size_t>(i)]) out.push_back(i);
    return out;
  }

  std::vector<int> masked_coords(int n_atoms) const {
    std::vector<int> out;
    const auto flags = coord_mask_flags(n_atoms);
    for (int i = 0; i < n_atoms; ++i)
      if (flags[static_cast<std::size_t>(i)]) out.push_back(i);
    return out;
  }

  void validate(int n_atoms) const {
    auto check_indices = [&](const std::vector<int>& v, const char* what) {
      for (int i : v)
        if (i < 0 || i >= n_atoms) throw Error(std::string("MaskPlan: ") + what + " index out of range");
    };
    check_indices(unmasked_atoms, "unmasked atom");
    check_indices(unmasked_coords, "unmasked coordinate");
    const auto flags = coord_mask_flags(n_atoms);
    for (int i = 0; i < n_atoms; ++i) {
      const bool masked = flags[static_cast<std::size_t>(i)] != 0;
      if (masked != (replacements.count(i) != 0))
        throw Error("MaskPlan: replacements must be keyed exactly by the masked coordinate rows");
    }
  }
};

struct EncoderOutput {
  Mat atom_reprs;               // |V| x d
  Mat global_repr;              // 1 x d
  Mat predicted_conformation;   // |V| x 3, refined conformation after block L
  Mat atom_logits;              // |V| x atom_vocab
  std::vector<Mat> per_block_conformations;
  std::vector<std::vector<double>> per_block_attention;  // directed-edge weights
};

/// Tape handles of one forward build; used by the loss builders.
struct ForwardGraph {
  Tape::NodeId atom_reprs = -1;
  Tape::NodeId global_repr = -1;
  Tape::NodeId pred_conf = -1;
  Tape::NodeId atom_logits = -1;
  std::vector<Tape::NodeId> block_confs;
  std::vector<Tape::NodeId> block_attention;
  std::vector<std::pair<std::string, Tape::NodeId>> param_leaves;
  // Directed half-edges: edge e runs from owner[e] (the atom it updates)
  // to nbr[e]; every bond contributes both orientations.
  std::vector<int> edge_owner;
  std::vector<int> edge_nbr;
};

namespace detail {

/// Registers parameter tensors as tape leaves on first use.
class ParamLeaves {
 public:
  ParamLeaves(Tape& tape, const ModelParams& params, bool track, ForwardGraph& fg)
      : tape_(tape), params_(params), track_(track), fg_(fg) {}

  Tape::NodeId operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    const Tape::NodeId id = tape_.leaf(params_.tensors.at(name), track_);
    cache_.emplace(name, id);
    fg_.param_leaves.emplace_back(name, id);
    return id;
  }

 private:
  Tape& tape_;
  const ModelParams& params_;
  bool track_;
  ForwardGraph& fg_;
  std::unordered_map<std::string, Tape::NodeId> cache_;
};

}  // namespace detail

/// Builds the encoder computation graph on the tape. When track_params is
/// set, every parameter leaf tracks gradients.
inline ForwardGraph build_forward(Tape& tape, const ModelParams& params, const Molecule& mol,
                                  const Mat& conf, const MaskPlan& plan, bool track_params) {
  const ModelConfig& cfg = params.config;
  const int n = mol.n_atoms();
  mol.validate();
  plan.validate(n);
  if (conf.rows() != n || conf.cols() != 3) throw Error("encoder: conformation shape mismatch");
  if (!conf.all_finite()) throw Error("encoder: non-finite input conformation");

  ForwardGraph fg;
  detail::ParamLeaves P(tape, params, track_params, fg);

  // Directed half-edges in deterministic order: per atom, bond-list order.
  const auto adjacency = mol.adjacency();
  std::vector<int> edge_order;
  for (int i = 0; i < n; ++i) {
    for (auto [j, bidx] : adjacency[static_cast<std::size_t>(i)]) {
      fg.edge_owner.push_back(i);
      fg.edge_nbr.push_back(j);
      edge_order.push_back(static_cast<int>(mol.bonds[static_cast<std::size_t>(bidx)].order));
    }
  }
  const int m = static_cast<int>(fg.edge_owner.size());

  const auto atom_masked = plan.atom_mask_flags(n);
  std::vector<int> atom_ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int z = mol.atoms[static_cast<std::size_t>(i)].atomic_number;
    if (z >= cfg.atom_vocab)
      throw Error("encoder: atomic number " + std::to_string(z) + " outside atom vocabulary of " +
                  std::to_string(cfg.atom_vocab));
    atom_ids[static_cast<std::size_t>(i)] = z;
  }
  std::vector<char> edge_masked(static_cast<std::size_t>(m), 0);
  for (int e = 0; e < m; ++e) {
    edge_masked[static_cast<std::size_t>(e)] =
        atom_masked[static_cast<std::size_t>(fg.edge_owner[static_cast<std::size_t>(e)])] ||
        atom_masked[static_cast<std::size_t>(fg.edge_nbr[static_cast<std::size_t>(e)])];
    if (edge_order[static_cast<std::size_t>(e)] >= cfg.bond_vocab)
      throw Error("encoder: bond order outside bond vocabulary");
  }

  // Input conformation with masked rows value-replaced.
  Mat r0 = conf;
  for (const auto& [row, xyz] : plan.replacements)
    for (int c = 0; c < 3; ++c) r0(row, c) = xyz[static_cast<std::size_t>(c)];

  // Two-layer FF: linear -> normalization -> ReLU -> linear (+bias).
  enum class NormKind { kMol, kFeat };
  auto ff = [&](const std::string& prefix, Tape::NodeId input, NormKind norm) {
    Tape::NodeId h = tape.matmul(input, P(prefix + ".w1"));
    h = (norm == NormKind::kMol) ? tape.mol_norm(h, P(prefix + ".g1"), P(prefix + ".b1"), cfg.norm_eps)
                                 : tape.feat_norm(h, P(prefix + ".g1"), P(prefix + ".b1"), cfg.norm_eps);
    h = tape.relu(h);
    return tape.add_row(tape.matmul(h, P(prefix + ".w2")), P(prefix + ".b2"));
  };

  Tape::NodeId x = tape.lookup_masked(P("atom_embed"), P("mask_atom"), atom_ids, atom_masked);
  Tape::NodeId u = P("global_init");
  Tape::NodeId r = tape.constant(std::move(r0));
  Tape::NodeId e = -1;
  if (m > 0) e = tape.lookup_masked(P("bond_embed"), P("mask_bond"), edge_order, edge_masked);

  fg.block_confs.push_back(r);

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string blk = "blk" + std::to_string(l);

    // (1) Fuse geometry: coordinates into atoms, interatomic distances
    // into bonds.
    Tape::NodeId x_bar = tape.add(x, ff(blk + ".coord_ff", r, NormKind::kMol));
    Tape::NodeId e_bar = -1;
    if (m > 0) {
      Tape::NodeId diff = tape.sub(tape.gather_rows(r, fg.edge_owner), tape.gather_rows(r, fg.edge_nbr));
      e_bar = tape.add(e, ff(blk + ".dist_ff", tape.row_norm(diff), NormKind::kMol));
    }

    Tape::NodeId x_bar_owner = -1, x_bar_nbr = -1;
    Tape::NodeId e_new = e;
    if (m > 0) {
      x_bar_owner = tape.gather_rows(x_bar, fg.edge_owner);
      x_bar_nbr = tape.gather_rows(x_bar, fg.edge_nbr);
      // (2) Bond update from endpoint atoms, fused bond, and the global node.
      Tape::NodeId bond_in = tape.concat_cols({x_bar_owner, x_bar_nbr, e_bar, tape.broadcast_row(u, m)});
      e_new = tape.add(e, ff(blk + ".bond_ff", bond_in, NormKind::kMol));
    }

    // (3) Attentive atom update over incident edges.
    Tape::NodeId x_tilde;
    if (m > 0) {
      Tape::NodeId q = tape.matmul(x_bar_owner, P(blk + ".att_q"));
      Tape::NodeId k = tape.matmul(tape.concat_cols({x_bar_nbr, e_bar}), P(blk + ".att_k"));
      Tape::NodeId score =
          tape.matmul(tape.leaky_relu(tape.add(q, k), cfg.leaky_slope), P(blk + ".att_a"));
      Tape::NodeId w = tape.segment_softmax(score, fg.edge_owner, n);
      fg.block_attention.push_back(w);
      Tape::NodeId msg = tape.matmul(tape.concat_cols({e_new, x_bar_nbr}), P(blk + ".att_v"));
      x_tilde = tape.segment_weighted_sum(w, msg, fg.edge_owner, n);
    } else {
      // Empty neighborhoods contribute the neutral zero summary.
      fg.block_attention.push_back(tape.constant(Mat(0, 1)));
      x_tilde = tape.constant(Mat(n, cfg.hidden));
    }
    Tape::NodeId atom_in = tape.concat_cols({x, x_tilde, tape.broadcast_row(u, n)});
    Tape::NodeId x_new = tape.add(x, ff(blk + ".atom_mlp", atom_in, NormKind::kMol));

    // (4) Global update from mean atom and bond representations. Statistics
    // run over channels here; a single row has no batch dimension.
    Tape::NodeId edge_mean = (m > 0) ? tape.mean_rows(e_new) : tape.constant(Mat(1, cfg.hidden));
    Tape::NodeId glob_in = tape.concat_cols({tape.mean_rows(x_new), edge_mean, u});
    Tape::NodeId u_new = tape.add(u, ff(blk + ".global_ff", glob_in, NormKind::kFeat));

    // (5) Mean-centered displacement refines the conformation.
    Tape::NodeId delta = ff(blk + ".disp_ff", x_new, NormKind::kMol);
    Tape::NodeId centered = tape.sub(delta, tape.broadcast_row(tape.mean_rows(delta), n));
    Tape::NodeId r_new = tape.add(r, centered);

    x = x_new;
    e = e_new;
    u = u_new;
    r = r_new;
    fg.block_confs.push_back(r);

    if (!tape.val(x).all_finite() || !tape.val(u).all_finite() || !tape.val(r).all_finite())
      throw Error("encoder: non-finite value after block " + std::to_string(l) + " (molecule '" + mol.id +
                  "')");
  }

  fg.atom_reprs = x;
  fg.global_repr = u;
  fg.pred_conf = r;
  fg.atom_logits = ff("atom_head", x, NormKind::kMol);
  if (!tape.val(fg.atom_logits).all_finite())
    throw Error("encoder: non-finite logits (molecule '" + mol.id + "')");
  return fg;
}

/// Runs the encoder and extracts plain values.
inline EncoderOutput forward(const ModelParams& params, const Molecule& mol, const Mat& conf,
                             const MaskPlan& plan) {
  Tape tape;
  const ForwardGraph fg = build_forward(tape, params, mol, conf, plan, /*track_params=*/false);
  EncoderOutput out;
  out.atom_reprs = tape.val(fg.atom_reprs);
  out.global_repr = tape.val(fg.global_repr);
  out.predicted_conformation = tape.val(fg.pred_conf);
  out.atom_logits = tape.val(fg.atom_logits);
  // Entry 0 is the (masked/random) input conformation, entry l the
  // refinement after block l.
  for (const Tape::NodeId conf_node : fg.block_confs)
    out.per_block_conformations.push_back(tape.val(conf_node));
  for (Tape::NodeId w : fg.block_attention) {
    const Mat& weights = tape.val(w);
    std::vector<double> row(static_cast<std::size_t>(weights.rows()));
    for (int i = 0; i < weights.rows(); ++i) row[static_cast<std::size_t>(i)] = weights(i, 0);
    out.per_block_attention.push_back(std::move(row));
  }
  return out;
}

}  // namespace unimol

#endif  // UNIMOL_ENCODER_HPP
