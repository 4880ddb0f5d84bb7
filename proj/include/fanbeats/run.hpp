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

// Run configuration and the train / eval / ablate drivers.

#ifndef FANBEATS_RUN_HPP
#define FANBEATS_RUN_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fanbeats/data.hpp"
#include "fanbeats/eval.hpp"
#include "fanbeats/model.hpp"
#include "fanbeats/train.hpp"

namespace fanbeats {

// ---------------------------------------------------------------------------
// Structured text config

/// A parsed value: string, number, boolean or a flat array of those, kept as
/// its source text so it can be re-typed on assignment.
struct ConfigValue {
  enum class Kind { kString, kNumber, kBool, kArray };
  Kind kind = Kind::kString;
  std::string text;                 // unquoted for strings
  std::vector<ConfigValue> items;   // kArray
};

/// Dotted key -> value, in file order.
using ConfigTable = std::vector<std::pair<std::string, ConfigValue>>;

/// Parses the TOML subset used by run configs: [table] and [a.b] headers,
/// key = value lines, "strings", numbers, true/false, single-line arrays and
/// # comments. Errors are config errors naming the line.
ConfigTable parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigTable parse_config_file(const std::string& path);

/// Parses the right-hand side of a --set override. Bare words are strings.
ConfigValue parse_config_value(const std::string& text);

// ---------------------------------------------------------------------------
// RunConfig

struct DataConfig {
  std::string source = "synthetic";  // synthetic | csv
  std::string path;                  // csv file when source = csv
  std::uint64_t seed = 0;            // synthetic generator seed
  std::size_t n_instances = 2000;
  std::size_t stride = 1;
  bool strict_split = false;
  bool with_replacement = false;
  /// Superdomain membership for csv data; synthetic data brings its own.
  SuperdomainMap superdomains;
};

struct ScenarioConfig {
  std::vector<ScenarioKind> kinds = {ScenarioKind::kOdg, ScenarioKind::kCdg, ScenarioKind::kIdg};
  std::string target = "exchange";
  std::size_t k = 3;
  /// Explicit sources per kind; an empty list picks the first valid set.
  std::map<ScenarioKind, std::vector<std::string>> sources;
};

struct RunConfig {
  std::string profile = "paper";
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  ScenarioConfig scenario;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t eval_batch = 4096;
  bool per_instance_mase = false;
  std::size_t export_per_domain = 200;
  bool verbose = false;
};

/// Hyperparameter defaults ("paper") or the reduced synthetic setup ("desk").
RunConfig make_profile(const std::string& name);

/// Assigns one dotted key; "lambda" is an alias of alignment.lambda. Unknown
/// keys and ill-typed values raise config errors.
void apply_setting(RunConfig& cfg, const std::string& key, const ConfigValue& value);
void apply_table(RunConfig& cfg, const ConfigTable& table);
/// "key=value".
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Raises a config error on inconsistent settings.
void validate(const RunConfig& cfg);

/// Every setting, in a form that parses back to an identical RunConfig.
std::string to_config_text(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Experiments

/// Data for one (config, seed): the series, superdomain map and scenarios.
struct Workspace {
  SeriesCollection collection;
  SuperdomainMap superdomains;
  std::vector<Scenario> scenarios;
};
Workspace prepare_workspace(const RunConfig& cfg);

/// Source and target datasets of a scenario, built with the given seed.
struct ScenarioData {
  std::vector<DomainDataset> sources;
  DomainDataset target;
};
ScenarioData build_scenario_data(const RunConfig& cfg, const Workspace& ws,
                                 const Scenario& scenario, std::uint64_t seed);

struct ExperimentResult {
  MetricsRow row;
  TrainHistory history;
  std::unique_ptr<Forecaster> model;
};

/// Creates a model from cfg.model with the seed, trains on the scenario's
/// sources and scores the target test split.
ExperimentResult run_experiment(const RunConfig& cfg, const ScenarioData& data,
                                const Scenario& scenario, std::uint64_t seed);

/// Worker count: FANBEATS_THREADS if set and positive, else the hardware
/// concurrency, never more than jobs.
std::size_t worker_count(std::size_t jobs);

// ---------------------------------------------------------------------------
// Commands. Progress goes to log when non-null.

/// Trains every (scenario, seed) and writes, under out_dir: config.toml, and
/// per run <scenario>/seed<k>/{model.fbck,history.csv,config.toml}, then
/// report.csv and report.txt over the target test splits.
MetricsReport cmd_train(const RunConfig& cfg, const std::string& out_dir, std::ostream* log);

/// Scores each checkpoint on every configured scenario whose target matches
/// its training run, once per seed. A checkpoint's own run settings are read
/// from the config.toml beside it when present. Writes report.csv, report.txt
/// and, when both lambda = 0 and lambda > 0 rows exist, paired.csv.
MetricsReport cmd_eval(const RunConfig& cfg, const std::vector<std::string>& checkpoints,
                       const std::string& out_dir, bool export_features, std::ostream* log);

/// One grid cell of an ablation.
struct AblationCell {
  std::string value;
  std::string scenario;
  std::uint64_t seed = 0;
  bool ok = false;
  double smape = 0.0;
  std::string error;
};

/// Default value grid of an axis: divergence, epsilon, normalizer, lambda or
/// granularity.
std::vector<std::string> ablation_grid(const std::string& axis);

/// Trains and scores every (value, scenario, seed); a cell that throws is
/// recorded as failed and the grid continues. Writes ablation.csv (one column
/// per value) and ablation.txt.
std::vector<AblationCell> cmd_ablate(const RunConfig& cfg, const std::string& axis,
                                     const std::vector<std::string>& values,
                                     const std::string& out_dir, std::ostream* log);

}  // namespace fanbeats

#endif  // FANBEATS_RUN_HPP
