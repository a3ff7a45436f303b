//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_METRICS_HPP
#define UNIMOL_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "unimol/common.hpp"

namespace unimol {

enum class MetricKind { kRocAuc, kAveragePrecision, kR2, kRmse, kMae };

inline MetricKind metric_from_string(const std::string& s) {
  if (s == "roc_auc") return MetricKind::kRocAuc;
  if (s == "ap" || s == "average_precision") return MetricKind::kAveragePrecision;
  if (s == "r2") return MetricKind::kR2;
  if (s == "rmse") return MetricKind::kRmse;
  if (s == "mae") return MetricKind::kMae;
  throw Error("unknown metric '" + s + "'");
}

namespace detail {

inline void check_binary_labels(const std::vector<double>& labels) {
  int pos = 0, neg = 0;
  for (double y : labels) (y >= 0.5 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw Error("metric needs at least one positive and one negative label");
}

}  // namespace detail

/// Rank-statistic ROC-AUC with midranks for tied predictions.
inline double roc_auc(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size() || preds.empty()) throw Error("roc_auc: size mismatch or empty");
  detail::check_binary_labels(labels);
  const int n = static_cast<int>(preds.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return preds[static_cast<std::size_t>(a)] < preds[static_cast<std::size_t>(b)]; });

  std::vector<double> rank(static_cast<std::size_t>(n), 0.0);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && preds[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])] ==
                            preds[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])])
      ++j;
    const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (int k = i; k <= j; ++k) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = mid;
    i = j + 1;
  }

  double sum_pos = 0.0;
  int n_pos = 0;
  for (int k = 0; k < n; ++k) {
    if (labels[static_cast<std::size_t>(k)] >= 0.5) {
      sum_pos += rank[static_cast<std::size_t>(k)];
      ++n_pos;
    }
  }
  const int n_neg = n - n_pos;
  return (sum_pos - 0.5 * n_pos * (n_pos + 1)) / (static_cast<double>(n_pos) * n_neg);
}

/// Step-integral average precision over distinct-score thresholds.
inline double average_precision(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size() || preds.empty()) throw Error("average_precision: size mismatch or empty");
  detail::check_binary_labels(labels);
  const int n = static_cast<int>(preds.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return preds[static_cast<std::size_t>(a)] > preds[static_cast<std::size_t>(b)]; });

  int total_pos = 0;
  for (double y : labels)
    if (y >= 0.5) ++total_pos;

  double ap = 0.0;
  double prev_recall = 0.0;
  int tp = 0, fp = 0;
  int i = 0;
  while (i < n) {
    int j = i;
    const double score = preds[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    while (j < n && preds[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] == score) {
      if (labels[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] >= 0.5)
        ++tp;
      else
        ++fp;
      ++j;
    }
    const double recall = static_cast<double>(tp) / total_pos;
    const double precision = static_cast<double>(tp) / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

/// Squared Pearson correlation coefficient.
inline double r_squared(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size() || preds.size() < 2) throw Error("r2: need >= 2 paired values");
  const int n = static_cast<int>(preds.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += preds[static_cast<std::size_t>(i)];
    my += labels[static_cast<std::size_t>(i)];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dx = preds[static_cast<std::size_t>(i)] - mx;
    const double dy = labels[static_cast<std::size_t>(i)] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("r2: zero variance in inputs");
  const double r = sxy / std::sqrt(sxx * syy);
  return r * r;
}

inline double rmse(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size() || preds.empty()) throw Error("rmse: size mismatch or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - labels[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(preds.size()));
}

inline double mae(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size() || preds.empty()) throw Error("mae: size mismatch or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - labels[i]);
  return s / static_cast<double>(preds.size());
}

inline double compute_metric(MetricKind kind, const std::vector<double>& preds,
                             const std::vector<double>& labels) {
  switch (kind) {
    case MetricKind::kRocAuc: return roc_auc(preds, labels);
    case MetricKind::kAveragePrecision: return average_precision(preds, labels);
    case MetricKind::kR2: return r_squared(preds, labels);
    case MetricKind::kRmse: return rmse(preds, labels);
    case MetricKind::kMae: return mae(preds, labels);
  }
  throw Error("compute_metric: invalid kind");
}

}  // namespace unimol

#endif  // UNIMOL_METRICS_HPP
