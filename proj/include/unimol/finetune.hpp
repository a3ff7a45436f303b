//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_FINETUNE_HPP
#define UNIMOL_FINETUNE_HPP

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "unimol/metrics.hpp"
#include "unimol/trainer.hpp"

namespace unimol {

enum class TaskKind { kBinaryClassification, kRegression };

inline const char* to_string(TaskKind kind) {
  return kind == TaskKind::kBinaryClassification ? "classification" : "regression";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::kBinaryClassification;
  if (s == "regression") return TaskKind::kRegression;
  throw Error("unknown task kind '" + s + "' (use classification|regression)");
}

struct TaskSpec {
  std::vector<std::string> names;
  TaskKind kind = TaskKind::kBinaryClassification;
  bool multitask = true;

  int n_tasks() const { return static_cast<int>(names.size()); }

  void validate() const {
    if (names.empty()) throw Error("TaskSpec: need at least one task");
  }
};

/// Pre-trained encoder plus a two-layer prediction head over the final
/// global representation. Molecules without coordinates get seeded random
/// coordinates, one fixed seed per run.
struct FinetuneModel {
  ModelParams encoder;
  NamedTensors head;  // w1, g1, b1, w2, b2
  TaskSpec spec;
  std::uint64_t coord_seed = 0;
};

struct FinetuneConfig {
  double lr = 1e-3;
  int epochs = 30;
  int batch_size = 8;
  std::uint64_t seed = 0;
  std::uint64_t coord_seed = 0;
  bool freeze_encoder = false;
  int threads = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

namespace detail {

inline NamedTensors init_head(int hidden, int n_tasks, std::uint64_t seed) {
  NamedTensors head;
  Rng rng(mix_seed(seed, 0xead));
  auto weight = [&](int rows, int cols) {
    Mat m(rows, cols);
    const double bound = std::sqrt(6.0 / rows);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform_pm1() * bound;
    return m;
  };
  head.add("w1", weight(hidden, hidden));
  head.add("g1", Mat::full(1, hidden, 1.0));
  head.add("b1", Mat(1, hidden));
  head.add("w2", weight(hidden, n_tasks));
  head.add("b2", Mat(1, n_tasks));
  return head;
}

inline Mat conf_or_random(const Molecule& mol, std::uint64_t coord_seed) {
  if (mol.coords) return *mol.coords;
  return random_coordinates(mol.n_atoms(), mix_seed(coord_seed, hash_string(mol.id)));
}

/// Readout u^(L) -> head output (1 x T) on the tape.
struct HeadGraph {
  Tape::NodeId output = -1;
  std::vector<std::pair<std::string, Tape::NodeId>> encoder_leaves;
  std::vector<std::pair<std::string, Tape::NodeId>> head_leaves;
};

inline HeadGraph build_head_forward(Tape& tape, const FinetuneModel& model, const Molecule& mol,
                                    bool track_encoder, bool track_head) {
  const Mat conf = conf_or_random(mol, model.coord_seed);
  const ForwardGraph fg =
      build_forward(tape, model.encoder, mol, conf, MaskPlan::none(mol.n_atoms()), track_encoder);
  HeadGraph hg;
  hg.encoder_leaves = fg.param_leaves;
  auto leaf = [&](const char* name) {
    const Tape::NodeId id = tape.leaf(model.head.at(name), track_head);
    hg.head_leaves.emplace_back(name, id);
    return id;
  };
  Tape::NodeId h = tape.matmul(fg.global_repr, leaf("w1"));
  h = tape.feat_norm(h, leaf("g1"), leaf("b1"), model.encoder.config.norm_eps);
  h = tape.relu(h);
  hg.output = tape.add_row(tape.matmul(h, leaf("w2")), leaf("b2"));
  return hg;
}

struct LabelRow {
  std::vector<double> values;  // per task; 0 where missing
  std::vector<char> present;
};

inline LabelRow label_row(const Molecule& mol, const TaskSpec& spec) {
  LabelRow row;
  row.values.resize(static_cast<std::size_t>(spec.n_tasks()), 0.0);
  row.present.resize(static_cast<std::size_t>(spec.n_tasks()), 0);
  for (int t = 0; t < spec.n_tasks(); ++t) {
    auto it = mol.labels.find(spec.names[static_cast<std::size_t>(t)]);
    if (it != mol.labels.end() && it->second) {
      row.values[static_cast<std::size_t>(t)] = *it->second;
      row.present[static_cast<std::size_t>(t)] = 1;
    }
  }
  return row;
}

}  // namespace detail

/// Deterministic per-task outputs: probabilities for classification tasks,
/// raw values for regression.
inline std::vector<std::vector<double>> predict(const FinetuneModel& model,
                                                const std::vector<Molecule>& molecules) {
  std::vector<std::vector<double>> out;
  out.reserve(molecules.size());
  for (const Molecule& mol : molecules) {
    Tape tape;
    const auto hg = detail::build_head_forward(tape, model, mol, false, false);
    Tape::NodeId final_node = hg.output;
    if (model.spec.kind == TaskKind::kBinaryClassification) final_node = tape.sigmoid(hg.output);
    const Mat& row = tape.val(final_node);
    std::vector<double> values(static_cast<std::size_t>(row.cols()));
    for (int t = 0; t < row.cols(); ++t) values[static_cast<std::size_t>(t)] = row(0, t);
    out.push_back(std::move(values));
  }
  return out;
}

struct FinetuneResult {
  FinetuneModel model;
  /// Per task, metric name -> value over the provided dataset.
  std::map<std::string, std::map<std::string, double>> metrics;
};

/// Per-task metrics of a model over a labeled dataset.
inline std::map<std::string, std::map<std::string, double>> evaluate_tasks(
    const FinetuneModel& model, const std::vector<Molecule>& dataset) {
  const auto preds = predict(model, dataset);
  std::map<std::string, std::map<std::string, double>> out;
  for (int t = 0; t < model.spec.n_tasks(); ++t) {
    std::vector<double> p, y;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const auto row = detail::label_row(dataset[i], model.spec);
      if (!row.present[static_cast<std::size_t>(t)]) continue;
      p.push_back(preds[i][static_cast<std::size_t>(t)]);
      y.push_back(row.values[static_cast<std::size_t>(t)]);
    }
    const std::string& name = model.spec.names[static_cast<std::size_t>(t)];
    if (p.empty()) continue;
    if (model.spec.kind == TaskKind::kBinaryClassification) {
      out[name]["roc_auc"] = roc_auc(p, y);
      out[name]["ap"] = average_precision(p, y);
    } else {
      if (p.size() >= 2) out[name]["r2"] = r_squared(p, y);
      out[name]["rmse"] = rmse(p, y);
      out[name]["mae"] = mae(p, y);
    }
  }
  return out;
}

/// Attaches a fresh head to a pre-trained encoder and fine-tunes on the
/// labeled dataset: per-task binary cross-entropy (classification) or
/// squared error (regression), missing labels masked out, loss normalized
/// by the number of labeled entries in the batch.
inline FinetuneResult finetune_run(const ModelParams& pretrained, const std::vector<Molecule>& dataset,
                                   const TaskSpec& spec, const FinetuneConfig& config) {
  spec.validate();
  if (dataset.empty()) throw Error("finetune_run: empty dataset");

  // Every task must have at least one labeled example.
  for (const std::string& task : spec.names) {
    bool any = false;
    for (const Molecule& mol : dataset) {
      auto it = mol.labels.find(task);
      if (it != mol.labels.end() && it->second) any = true;
    }
    if (!any) throw Error("finetune_run: no labeled examples for task '" + task + "'");
  }

  FinetuneModel model;
  model.encoder = pretrained;
  model.head = detail::init_head(pretrained.config.hidden, spec.n_tasks(), config.seed);
  model.spec = spec;
  model.coord_seed = config.coord_seed;

  AdamState enc_adam{model.encoder.tensors.zeros_like(), model.encoder.tensors.zeros_like()};
  AdamState head_adam{model.head.zeros_like(), model.head.zeros_like()};
  TrainConfig adam_cfg;
  adam_cfg.lr = config.lr;
  adam_cfg.adam_beta1 = config.adam_beta1;
  adam_cfg.adam_beta2 = config.adam_beta2;
  adam_cfg.adam_eps = config.adam_eps;

  std::vector<int> indices(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) indices[i] = static_cast<int>(i);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> order = indices;
    {
      Rng rng(mix_seed(config.seed, 0xf17e, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);
    }
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(config.batch_size));

      int labeled_in_batch = 0;
      for (std::size_t k = at; k < end; ++k) {
        const auto row = detail::label_row(dataset[static_cast<std::size_t>(order[k])], spec);
        for (char present : row.present) labeled_in_batch += present ? 1 : 0;
      }
      if (labeled_in_batch == 0) continue;

      struct Partial {
        NamedTensors enc;
        NamedTensors head;
      };
      std::vector<Partial> partials(end - at);
      parallel_for(static_cast<int>(end - at), config.threads, [&](int bi) {
        const Molecule& mol = dataset[static_cast<std::size_t>(order[at + static_cast<std::size_t>(bi)])];
        const auto row = detail::label_row(mol, spec);
        Partial& part = partials[static_cast<std::size_t>(bi)];
        part.enc = model.encoder.tensors.zeros_like();
        part.head = model.head.zeros_like();
        bool any = false;
        for (char present : row.present) any = any || present;
        if (!any) return;

        Tape tape;
        const auto hg = detail::build_head_forward(tape, model, mol, !config.freeze_encoder, true);
        Tape::NodeId loss;
        if (spec.kind == TaskKind::kBinaryClassification) {
          loss = tape.bce_logits(hg.output, row.values, row.present);
        } else {
          Mat labels(1, spec.n_tasks()), mask(1, spec.n_tasks());
          for (int t = 0; t < spec.n_tasks(); ++t) {
            labels(0, t) = row.values[static_cast<std::size_t>(t)];
            mask(0, t) = row.present[static_cast<std::size_t>(t)] ? 1.0 : 0.0;
          }
          Tape::NodeId diff =
              tape.mul(tape.sub(hg.output, tape.constant(std::move(labels))), tape.constant(std::move(mask)));
          loss = tape.sum_all(tape.mul(diff, diff));
        }
        loss = tape.scale(loss, 1.0 / labeled_in_batch);
        tape.backward(loss);
        if (!config.freeze_encoder)
          for (const auto& [name, leaf] : hg.encoder_leaves) add_inplace(part.enc.at(name), tape.grad(leaf));
        for (const auto& [name, leaf] : hg.head_leaves) add_inplace(part.head.at(name), tape.grad(leaf));
      });

      NamedTensors enc_grads = model.encoder.tensors.zeros_like();
      NamedTensors head_grads = model.head.zeros_like();
      for (const auto& part : partials) {
        for (int i = 0; i < enc_grads.count(); ++i) add_inplace(enc_grads.value(i), part.enc.item(i).second);
        for (int i = 0; i < head_grads.count(); ++i) add_inplace(head_grads.value(i), part.head.item(i).second);
      }
      ++step;
      if (!config.freeze_encoder) adam_update(model.encoder.tensors, enc_adam, enc_grads, step, adam_cfg);
      adam_update(model.head, head_adam, head_grads, step, adam_cfg);
    }
  }

  FinetuneResult result;
  result.metrics = evaluate_tasks(model, dataset);
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Finetuned-model checkpoint plumbing (reuses the trainer format).

inline void save_finetune_checkpoint(const FinetuneModel& model, const std::string& path) {
  TrainState state;
  state.params = model.encoder;
  state.adam.m = state.params.tensors.zeros_like();
  state.adam.v = state.params.tensors.zeros_like();
  state.seed = model.coord_seed;
  FinetuneHeader header;
  header.task_names = model.spec.names;
  header.kind = to_string(model.spec.kind);
  header.head = model.head;
  save_checkpoint(state, path, &header);
}

inline FinetuneModel load_finetune_checkpoint(const std::string& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  if (!ck.finetune) throw Error("checkpoint '" + path + "' carries no prediction head");
  FinetuneModel model;
  model.encoder = std::move(ck.state.params);
  model.head = std::move(ck.finetune->head);
  model.spec.names = ck.finetune->task_names;
  model.spec.kind = task_kind_from_string(ck.finetune->kind);
  model.coord_seed = ck.state.seed;
  return model;
}

}  // namespace unimol

#endif  // UNIMOL_FINETUNE_HPP
