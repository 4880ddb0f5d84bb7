// Copyright 2026 The fanbeats Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Forecast metrics, scenario scoring and reports.

#ifndef FANBEATS_EVAL_HPP
#define FANBEATS_EVAL_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "fanbeats/align.hpp"
#include "fanbeats/data.hpp"
#include "fanbeats/model.hpp"

namespace fanbeats {

/// Sentinel for a metric with a degenerate scale. Printed as "NA".
inline constexpr double kNa = std::numeric_limits<double>::quiet_NaN();
inline bool is_na(double v) { return std::isnan(v); }

/// SMAPE over all N x beta values; same value as smape_loss.
double smape_metric(const Tensor& preds, const Tensor& targets);

/// Mean absolute error over the naive one-step difference magnitude of the
/// targets. The literal form flattens the targets row by row into one sequence
/// (dataset index order, including across-instance adjacencies). With
/// per_instance each row is scaled by its own differences and the non-NA rows
/// are averaged. A scale under 1e-12 yields kNa; fewer than 2 values raise a
/// domain error.
double mase_metric(const Tensor& preds, const Tensor& targets, bool per_instance = false);

struct EvalOptions {
  std::size_t batch_size = 4096;
  bool per_instance_mase = false;
};

struct MetricsRow {
  std::string scenario;    // e.g. "ODG:exchange<-rain+temperature+wind"
  std::string kind;        // odg | cdg | idg, empty for ad hoc rows
  std::string model;       // variant name
  std::string divergence;  // alignment divergence, "none" when lambda is 0
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double smape = 0.0;
  double mase = 0.0;
  std::size_t n_instances = 0;
  double runtime_ms = 0.0;  // per training iteration, 0 if unknown
};

using Predictor = std::function<Tensor(const Tensor&)>;

/// Scores the target's test split in batches of batch_size; metrics are taken
/// over the concatenated predictions. Fills smape, mase and n_instances.
MetricsRow evaluate(Forecaster& model, const DomainDataset& target, const EvalOptions& options);
MetricsRow evaluate(const Predictor& predict, std::size_t alpha, std::size_t beta,
                    const DomainDataset& target, const EvalOptions& options);

/// Median wall time in ms over reps calls of step, after warmup discarded calls.
double runtime_probe(const std::function<void()>& step, std::size_t warmup, std::size_t reps);

/// Mean and sample std over seeds of rows sharing scenario, model, divergence
/// and lambda.
struct SummaryRow {
  std::string scenario;
  std::string model;
  std::string divergence;
  double lambda = 0.0;
  std::size_t seeds = 0;
  double smape_mean = 0.0, smape_std = 0.0;
  double mase_mean = 0.0, mase_std = 0.0;
  double runtime_ms = 0.0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  /// Seed-aggregated rows in first-appearance order.
  std::vector<SummaryRow> summary() const;
  /// One "average" row per (model, divergence, lambda): the mean of the
  /// per-scenario summary means.
  std::vector<SummaryRow> scenario_average() const;
};

/// Per-seed rows followed by summary and average rows, NA written as "NA".
void write_report_csv(const MetricsReport& report, const std::string& path);
std::string format_report_table(const MetricsReport& report);

/// Baseline versus aligned SMAPE for each scenario and seed present in both.
struct PairedRow {
  std::string scenario;
  std::uint64_t seed = 0;
  double baseline_smape = 0.0;
  double aligned_smape = 0.0;
  double gap() const { return baseline_smape - aligned_smape; }
};
std::vector<PairedRow> pair_rows(const std::vector<MetricsRow>& baseline,
                                 const std::vector<MetricsRow>& aligned);
void write_paired_csv(const std::vector<PairedRow>& rows, const std::string& path);

/// Normalized per-stack tap samples for external embedding tools. Columns:
/// stack,domain,superdomain,instance,f0..f{gamma-1}. Up to per_domain instances
/// from the given split of each dataset.
void export_features(Forecaster& model, const std::vector<DomainDataset>& datasets, Split split,
                     std::size_t per_domain, Normalizer normalizer, const std::string& path);

}  // namespace fanbeats

#endif  // FANBEATS_EVAL_HPP
