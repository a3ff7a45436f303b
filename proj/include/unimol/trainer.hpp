//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_TRAINER_HPP
#define UNIMOL_TRAINER_HPP

#include <cstring>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unimol/objectives.hpp"
#include "unimol/synthetic.hpp"

namespace unimol {

struct TrainConfig {
  double lr = 2e-4;
  int batch_size = 8;
  int epochs = 100;
  double mask_ratio = 0.25;
  std::uint64_t seed = 0;
  LossWeights weights;
  double val_fraction = 0.05;
  int threads = 1;
  int aut_cap = 1000;
  // Adam constants; the canonical defaults.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (lr <= 0.0) throw Error("TrainConfig: lr must be positive");
    if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
    if (epochs < 0) throw Error("TrainConfig: epochs must be >= 0");
    if (mask_ratio <= 0.0 || mask_ratio >= 1.0) throw Error("TrainConfig: mask_ratio must be in (0,1)");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw Error("TrainConfig: val_fraction must be in [0,1)");
    if (threads < 1) throw Error("TrainConfig: threads must be >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Adam first/second moments, shaped like the parameters.
struct AdamState {
  NamedTensors m;
  NamedTensors v;
};

/// Everything needed to continue training bit-identically: parameters,
/// optimizer moments, counters, and the seed that all randomness derives
/// from (mask draws are stateless functions of seed/step/molecule).
struct TrainState {
  ModelParams params;
  AdamState adam;
  std::int64_t step = 0;
  std::int64_t epochs_done = 0;
  std::uint64_t seed = 0;
  TrainConfig config;
};

inline TrainState init_train_state(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  train_cfg.validate();
  TrainState state;
  state.params = init_params(model_cfg, train_cfg.seed);
  state.adam.m = state.params.tensors.zeros_like();
  state.adam.v = state.params.tensors.zeros_like();
  state.seed = train_cfg.seed;
  state.config = train_cfg;
  return state;
}

/// Independently masks each atom and each coordinate row with probability
/// p; masked coordinates receive fresh uniform [-1, 1] replacements.
/// Deterministic per (molecule id, seed).
inline MaskPlan make_mask_plan(const Molecule& mol, double p, std::uint64_t seed) {
  if (p <= 0.0 || p >= 1.0) throw Error("make_mask_plan: p must be in (0,1)");
  const int n = mol.n_atoms();
  Rng rng(mix_seed(seed, hash_string(mol.id), 0x3a5c));
  MaskPlan plan;
  plan.mask_ratio = p;
  for (int i = 0; i < n; ++i) {
    if (!rng.bernoulli(p)) plan.unmasked_atoms.push_back(i);
    if (rng.bernoulli(p)) {
      plan.replacements[i] = {rng.uniform_pm1(), rng.uniform_pm1(), rng.uniform_pm1()};
    } else {
      plan.unmasked_coords.push_back(i);
    }
  }
  return plan;
}

/// Pass-1 mask plan plus pass-2 random input coordinates for one step.
inline PretrainExample make_pretrain_example(const Molecule& mol, const AutomorphismSet& aut, double p,
                                             std::uint64_t seed) {
  PretrainExample ex;
  ex.mol = mol;
  ex.aut = aut;
  ex.plan = make_mask_plan(mol, p, seed);
  ex.conf_2d3d = random_coordinates(mol.n_atoms(), mix_seed(seed, hash_string(mol.id), 0x23d3));
  return ex;
}

/// Textbook Adam with bias correction; step_number starts at 1.
inline void adam_update(NamedTensors& params, AdamState& adam, const NamedTensors& grads,
                        std::int64_t step_number, const TrainConfig& cfg) {
  if (!NamedTensors::same_schema(params, grads)) throw Error("adam_update: gradient schema mismatch");
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step_number));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step_number));
  for (int t = 0; t < params.count(); ++t) {
    Mat& p = params.value(t);
    Mat& m = adam.m.value(t);
    Mat& v = adam.v.value(t);
    const Mat& g = grads.item(t).second;
    double* pp = p.data();
    double* pm = m.data();
    double* pv = v.data();
    const double* pg = g.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      pm[i] = cfg.adam_beta1 * pm[i] + (1.0 - cfg.adam_beta1) * pg[i];
      pv[i] = cfg.adam_beta2 * pv[i] + (1.0 - cfg.adam_beta2) * pg[i] * pg[i];
      const double mhat = pm[i] / bc1;
      const double vhat = pv[i] / bc2;
      pp[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

/// Molecule with its cached automorphism set, computed once per dataset.
struct TrainMolecule {
  Molecule mol;
  AutomorphismSet aut;
};

inline std::vector<TrainMolecule> prepare_dataset(const std::vector<Molecule>& dataset, int aut_cap = 1000,
                                                  int threads = 1) {
  std::vector<TrainMolecule> out(dataset.size());
  parallel_for(static_cast<int>(dataset.size()), threads, [&](int i) {
    out[static_cast<std::size_t>(i)].mol = dataset[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)].aut = find_automorphisms(dataset[static_cast<std::size_t>(i)], aut_cap);
  });
  return out;
}

/// One step of the pre-training workflow: the masked-reconstruction pass,
/// the all-random-coordinates pass and the all-atoms-masked pass, followed
/// by a single Adam update on the weighted summed loss. Returns the
/// pre-update report.
inline LossReport pretrain_step(TrainState& state, const std::vector<const TrainMolecule*>& batch) {
  if (batch.empty()) throw Error("pretrain_step: empty batch");
  std::vector<PretrainExample> examples;
  examples.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainMolecule& tm = *batch[i];
    if (!tm.mol.coords) throw Error("pretrain_step: molecule '" + tm.mol.id + "' has no coordinates");
    const std::uint64_t step_seed =
        mix_seed(state.seed, static_cast<std::uint64_t>(state.step), static_cast<std::uint64_t>(i));
    examples.push_back(make_pretrain_example(tm.mol, tm.aut, state.config.mask_ratio, step_seed));
  }
  GradResult result =
      gradients(state.params, examples, LossSelector::kSum, state.config.weights, state.config.threads);
  if (!std::isfinite(result.report.total))
    throw Error("pretrain_step: non-finite loss at step " + std::to_string(state.step));
  ++state.step;
  adam_update(state.params.tensors, state.adam, result.grads, state.step, state.config);
  return result.report;
}

/// Convenience overload computing automorphism sets on the fly.
inline LossReport pretrain_step(TrainState& state, const std::vector<Molecule>& batch) {
  std::vector<TrainMolecule> prepared = prepare_dataset(batch, state.config.aut_cap, state.config.threads);
  std::vector<const TrainMolecule*> ptrs;
  ptrs.reserve(prepared.size());
  for (const TrainMolecule& tm : prepared) ptrs.push_back(&tm);
  return pretrain_step(state, ptrs);
}

// ---------------------------------------------------------------------------
// Config <-> JSON (checkpoint header and CLI config files).

inline nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"layers", cfg.layers},           {"hidden", cfg.hidden},
          {"atom_vocab", cfg.atom_vocab},   {"bond_vocab", cfg.bond_vocab},
          {"leaky_slope", cfg.leaky_slope}, {"norm_eps", cfg.norm_eps}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.layers = j.at("layers").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  cfg.atom_vocab = j.at("atom_vocab").get<int>();
  cfg.bond_vocab = j.at("bond_vocab").get<int>();
  cfg.leaky_slope = j.at("leaky_slope").get<double>();
  cfg.norm_eps = j.at("norm_eps").get<double>();
  return cfg;
}

inline nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"mask_ratio", cfg.mask_ratio},
          {"seed", cfg.seed},
          {"w_atom", cfg.weights.atom},
          {"w_coord", cfg.weights.coord},
          {"w_2d3d", cfg.weights.two_three},
          {"w_3d2d", cfg.weights.three_two},
          {"val_fraction", cfg.val_fraction},
          {"threads", cfg.threads},
          {"aut_cap", cfg.aut_cap},
          {"adam_beta1", cfg.adam_beta1},
          {"adam_beta2", cfg.adam_beta2},
          {"adam_eps", cfg.adam_eps}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.lr = j.at("lr").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.mask_ratio = j.at("mask_ratio").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.weights.atom = j.at("w_atom").get<double>();
  cfg.weights.coord = j.at("w_coord").get<double>();
  cfg.weights.two_three = j.at("w_2d3d").get<double>();
  cfg.weights.three_two = j.at("w_3d2d").get<double>();
  cfg.val_fraction = j.at("val_fraction").get<double>();
  cfg.threads = j.at("threads").get<int>();
  cfg.aut_cap = j.at("aut_cap").get<int>();
  cfg.adam_beta1 = j.at("adam_beta1").get<double>();
  cfg.adam_beta2 = j.at("adam_beta2").get<double>();
  cfg.adam_eps = j.at("adam_eps").get<double>();
  return cfg;
}

// ---------------------------------------------------------------------------
// Checkpointing: magic + JSON header (version, configs, counters, tensor
// shapes, payload checksum) + little-endian float64 payload in header order.

namespace detail {

constexpr char kCheckpointMagic[8] = {'U', 'N', 'I', 'M', 'O', 'L', 'C', 'K'};
constexpr int kCheckpointVersion = 1;

inline void append_tensor_list(nlohmann::json& list, const NamedTensors& tensors, const std::string& prefix) {
  for (const auto& [name, value] : tensors)
    list.push_back({{"name", prefix + name}, {"rows", value.rows()}, {"cols", value.cols()}});
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

}  // namespace detail

/// Optional task-head payload stored alongside the encoder in finetuned
/// checkpoints.
struct FinetuneHeader {
  std::vector<std::string> task_names;
  std::string kind;  // "classification" | "regression"
  NamedTensors head;
};

inline void save_checkpoint(const TrainState& state, const std::string& path,
                            const FinetuneHeader* finetune = nullptr) {
  nlohmann::json header;
  header["format_version"] = detail::kCheckpointVersion;
  header["model_config"] = to_json(state.params.config);
  header["train_config"] = to_json(state.config);
  header["step"] = state.step;
  header["epochs_done"] = state.epochs_done;
  header["seed"] = state.seed;
  auto tensor_list = nlohmann::json::array();
  detail::append_tensor_list(tensor_list, state.params.tensors, "");
  detail::append_tensor_list(tensor_list, state.adam.m, "adam_m/");
  detail::append_tensor_list(tensor_list, state.adam.v, "adam_v/");
  if (finetune) {
    header["finetune"] = {{"tasks", finetune->task_names}, {"kind", finetune->kind}};
    detail::append_tensor_list(tensor_list, finetune->head, "head/");
  }
  header["tensors"] = std::move(tensor_list);

  // Assemble the payload to checksum it before writing the header.
  std::vector<double> payload;
  auto append_payload = [&payload](const NamedTensors& tensors) {
    for (const auto& [name, value] : tensors)
      payload.insert(payload.end(), value.data(), value.data() + value.size());
  };
  append_payload(state.params.tensors);
  append_payload(state.adam.m);
  append_payload(state.adam.v);
  if (finetune) append_payload(finetune->head);

  const std::size_t payload_bytes = payload.size() * sizeof(double);
  header["payload_bytes"] = payload_bytes;
  header["payload_fnv1a"] = detail::hex64(detail::fnv1a64(payload.data(), payload_bytes));

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  const std::uint64_t header_len = header_text.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

struct LoadedCheckpoint {
  TrainState state;
  std::optional<FinetuneHeader> finetune;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw Error("'" + path + "' is not a unimol checkpoint");
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) throw Error("truncated checkpoint '" + path + "'");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error("truncated checkpoint '" + path + "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt checkpoint header in '" + path + "': " + e.what());
  }
  const int version = header.at("format_version").get<int>();
  if (version != detail::kCheckpointVersion)
    throw Error("checkpoint '" + path + "' has unsupported format version " + std::to_string(version));

  const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
  std::vector<double> payload(payload_bytes / sizeof(double));
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
  if (static_cast<std::size_t>(in.gcount()) != payload_bytes)
    throw Error("truncated checkpoint '" + path + "'");
  const std::string checksum = detail::hex64(detail::fnv1a64(payload.data(), payload_bytes));
  if (checksum != header.at("payload_fnv1a").get<std::string>())
    throw Error("checkpoint checksum mismatch in '" + path + "'");

  LoadedCheckpoint out;
  out.state.params.config = model_config_from_json(header.at("model_config"));
  out.state.config = train_config_from_json(header.at("train_config"));
  out.state.step = header.at("step").get<std::int64_t>();
  out.state.epochs_done = header.at("epochs_done").get<std::int64_t>();
  out.state.seed = header.at("seed").get<std::uint64_t>();
  if (header.contains("finetune")) {
    FinetuneHeader ft;
    ft.task_names = header.at("finetune").at("tasks").get<std::vector<std::string>>();
    ft.kind = header.at("finetune").at("kind").get<std::string>();
    out.finetune = std::move(ft);
  }

  std::size_t offset = 0;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const int rows = entry.at("rows").get<int>();
    const int cols = entry.at("cols").get<int>();
    Mat value(rows, cols);
    const std::size_t count = value.size();
    if (offset + count > payload.size()) throw Error("checkpoint payload shorter than tensor table");
    std::memcpy(value.data(), payload.data() + offset, count * sizeof(double));
    offset += count;
    if (name.rfind("adam_m/", 0) == 0) {
      out.state.adam.m.add(name.substr(7), std::move(value));
    } else if (name.rfind("adam_v/", 0) == 0) {
      out.state.adam.v.add(name.substr(7), std::move(value));
    } else if (name.rfind("head/", 0) == 0) {
      if (!out.finetune) throw Error("checkpoint has head tensors without a finetune header");
      out.finetune->head.add(name.substr(5), std::move(value));
    } else {
      out.state.params.tensors.add(name, std::move(value));
    }
  }
  if (offset != payload.size()) throw Error("checkpoint payload longer than tensor table");
  return out;
}

/// Load and verify tensor shapes against the schema of an expected model
/// configuration; the error names the first mismatching tensor.
inline LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  LoadedCheckpoint ck = load_checkpoint(path);
  for (const ParamSpec& spec : param_schema(expected)) {
    if (!ck.state.params.tensors.has(spec.name))
      throw Error("checkpoint '" + path + "' is missing tensor '" + spec.name + "'");
    const Mat& value = ck.state.params.tensors.at(spec.name);
    if (value.rows() != spec.rows || value.cols() != spec.cols)
      throw Error("checkpoint tensor '" + spec.name + "' has shape " + std::to_string(value.rows()) + "x" +
                  std::to_string(value.cols()) + ", expected " + std::to_string(spec.rows) + "x" +
                  std::to_string(spec.cols));
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Epoch loop.

struct EpochMetrics {
  int epoch = 0;
  LossReport train;
  LossReport val;
  bool has_val = false;
};

struct TrainResult {
  TrainState state;
  TrainState best_state;  // by validation total; equals state when no split
  bool has_best = false;
  std::vector<EpochMetrics> epochs;
};

namespace detail {

inline void write_metrics_row(std::ostream* out, int epoch, std::int64_t step, const char* split,
                              const LossReport& rep) {
  if (!out) return;
  nlohmann::ordered_json row;
  row["epoch"] = epoch;
  row["step"] = step;
  row["split"] = split;
  row["l_atom"] = rep.l_atom;
  row["l_coord"] = rep.l_coord;
  row["l_2d3d"] = rep.l_2d3d;
  row["l_3d2d"] = rep.l_3d2d;
  row["total"] = rep.total;
  (*out) << row.dump() << '\n';
}

}  // namespace detail

/// Runs the pre-training loop: deterministic validation split, per-epoch
/// shuffling, Adam steps, per-epoch metrics, best-validation state
/// retention. Pass a resume state to continue a previous run bit-exactly.
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         const std::vector<Molecule>& dataset, std::ostream* metrics = nullptr,
                         const TrainState* resume = nullptr) {
  train_cfg.validate();
  model_cfg.validate();
  if (dataset.empty()) throw Error("train: empty dataset");
  {
    std::string missing;
    for (const Molecule& mol : dataset)
      if (!mol.coords) missing += missing.empty() ? mol.id : (", " + mol.id);
    if (!missing.empty()) throw Error("train: molecules missing coordinates: " + missing);
  }

  const std::vector<TrainMolecule> prepared =
      prepare_dataset(dataset, train_cfg.aut_cap, train_cfg.threads);

  // Deterministic split: shuffle indices once, take the head as validation.
  const int n = static_cast<int>(dataset.size());
  std::vector<int> indices(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
  {
    Rng rng(mix_seed(train_cfg.seed, 0x5b117));
    rng.shuffle(indices);
  }
  const int n_val = static_cast<int>(train_cfg.val_fraction * n);
  std::vector<int> val_idx(indices.begin(), indices.begin() + n_val);
  std::vector<int> train_idx(indices.begin() + n_val, indices.end());
  if (train_idx.empty()) throw Error("train: validation split leaves no training molecules");

  TrainState state;
  if (resume) {
    state = *resume;
    if (!(state.config == train_cfg))
      throw Error("train: resume state was produced with a different training configuration");
    if (!(state.params.config == model_cfg))
      throw Error("train: resume state was produced with a different model configuration");
  } else {
    state = init_train_state(model_cfg, train_cfg);
  }

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  result.has_best = false;

  for (std::int64_t epoch = state.epochs_done; epoch < train_cfg.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    {
      Rng rng(mix_seed(train_cfg.seed, 0xe70c, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);
    }

    LossReport epoch_train;
    int steps_in_epoch = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(train_cfg.batch_size)) {
      std::vector<const TrainMolecule*> batch;
      for (std::size_t k = at; k < std::min(order.size(), at + static_cast<std::size_t>(train_cfg.batch_size)); ++k)
        batch.push_back(&prepared[static_cast<std::size_t>(order[k])]);
      const LossReport rep = pretrain_step(state, batch);
      detail::write_metrics_row(metrics, static_cast<int>(epoch), state.step, "train", rep);
      epoch_train.l_atom += rep.l_atom;
      epoch_train.l_coord += rep.l_coord;
      epoch_train.l_2d3d += rep.l_2d3d;
      epoch_train.l_3d2d += rep.l_3d2d;
      epoch_train.total += rep.total;
      ++steps_in_epoch;
    }
    if (steps_in_epoch > 0) {
      epoch_train.l_atom /= steps_in_epoch;
      epoch_train.l_coord /= steps_in_epoch;
      epoch_train.l_2d3d /= steps_in_epoch;
      epoch_train.l_3d2d /= steps_in_epoch;
      epoch_train.total /= steps_in_epoch;
    }

    EpochMetrics em;
    em.epoch = static_cast<int>(epoch);
    em.train = epoch_train;

    if (!val_idx.empty()) {
      std::vector<PretrainExample> val_examples;
      val_examples.reserve(val_idx.size());
      for (std::size_t k = 0; k < val_idx.size(); ++k) {
        const TrainMolecule& tm = prepared[static_cast<std::size_t>(val_idx[k])];
        const std::uint64_t val_seed =
            mix_seed(train_cfg.seed, 0xa1 + static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(k));
        val_examples.push_back(make_pretrain_example(tm.mol, tm.aut, train_cfg.mask_ratio, val_seed));
      }
      em.val = evaluate_losses(state.params, val_examples, train_cfg.weights, train_cfg.threads);
      em.has_val = true;
      detail::write_metrics_row(metrics, static_cast<int>(epoch), state.step, "val", em.val);
      if (em.val.total < best_val) {
        best_val = em.val.total;
        result.best_state = state;
        result.best_state.epochs_done = epoch + 1;
        result.has_best = true;
      }
    }

    state.epochs_done = epoch + 1;
    result.epochs.push_back(em);
  }

  result.state = state;
  if (!result.has_best) result.best_state = result.state;
  return result;
}

}  // namespace unimol

#endif  // UNIMOL_TRAINER_HPP
