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

// Series ingestion, sliding windows, per-domain datasets, domain-shift
// scenarios and the synthetic multi-domain generator.

#ifndef FANBEATS_DATA_HPP
#define FANBEATS_DATA_HPP

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fanbeats/tensor.hpp"

namespace fanbeats {

struct Series {
  std::string series_id;
  std::string domain_id;
  std::vector<double> values;
  std::string frequency;  // free-form tag, may be empty
};

struct SeriesCollection {
  std::vector<Series> series;

  /// Domain ids in order of first appearance.
  std::vector<std::string> domains() const;
};

/// Long format with header `series_id,domain_id,t,value[,frequency]`. Rows of
/// one series may interleave with other series but must have increasing t
/// (numeric when both stamps parse as integers, lexicographic otherwise).
/// Malformed rows raise a parse error with the line number; non-finite values
/// raise a data error; a missing file raises an io error.
SeriesCollection load_series_csv(const std::string& path);
void save_series_csv(const SeriesCollection& collection, const std::string& path);

struct Instance {
  std::vector<double> x;  // alpha values
  std::vector<double> y;  // beta values
  std::size_t series = 0; // index into the collection
  std::size_t offset = 0; // window start within the series
};

/// Every offset t with t + alpha + beta <= len, stepping by stride.
std::vector<Instance> make_windows(const std::vector<double>& values, std::size_t alpha,
                                   std::size_t beta, std::size_t stride = 1);

enum class Split { kTrain, kVal, kTest };
const char* to_string(Split s);

struct DomainDataset {
  std::string domain_id;
  std::string superdomain_id;
  std::size_t alpha = 0, beta = 0;
  std::vector<Instance> instances;
  std::vector<std::size_t> train, val, test;  // indices into instances
  bool resampled = false;                     // drawn with replacement

  const std::vector<std::size_t>& split(Split s) const;
};

struct DatasetOptions {
  std::size_t alpha = 50;
  std::size_t beta = 10;
  std::size_t stride = 1;
  std::size_t n_instances = 2000;
  /// Draw with replacement when the pool is smaller than n_instances.
  bool with_replacement = false;
  /// Assign whole series to splits so no window straddles train and test.
  bool strict_split = false;
};

/// Pools the domain's windows, subsamples n_instances and splits them
/// 70/10/20 by a seeded shuffle.
DomainDataset build_domain_dataset(const SeriesCollection& collection,
                                   const std::string& domain_id,
                                   const std::string& superdomain_id,
                                   const DatasetOptions& options, std::uint64_t seed);

/// Split sizes for n instances: round(0.7 n), round(0.1 n), remainder.
std::vector<std::size_t> split_sizes(std::size_t n);

// ---------------------------------------------------------------------------
// Scenarios

enum class ScenarioKind { kOdg, kCdg, kIdg };
const char* to_string(ScenarioKind k);
ScenarioKind parse_scenario_kind(const std::string& s);

/// Ordered list of (superdomain, member domains).
using SuperdomainMap = std::vector<std::pair<std::string, std::vector<std::string>>>;

std::string superdomain_of(const SuperdomainMap& map, const std::string& domain);

struct Scenario {
  ScenarioKind kind = ScenarioKind::kOdg;
  std::vector<std::string> sources;
  std::string target;

  std::string label() const;
};

/// ODG: sources all from one superdomain other than the target's.
/// CDG: exactly one source from the target's superdomain, the rest from others.
/// IDG: sources from the target's superdomain, target excluded.
bool is_valid_scenario(const SuperdomainMap& map, const Scenario& scenario);

/// Every valid scenario of a kind with K sources, targets in map order.
std::vector<Scenario> enumerate_scenarios(const SuperdomainMap& map, ScenarioKind kind,
                                          std::size_t k);

/// First valid scenario for the given target; infeasible requests raise a
/// config error.
Scenario make_scenario(const SuperdomainMap& map, ScenarioKind kind, const std::string& target,
                       std::size_t k);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthDomain {
  std::string name;
  std::string superdomain;
  std::size_t series = 4;
  std::size_t length = 600;
  double level_lo = 0.0, level_hi = 0.0;
  double slope_lo = 0.0, slope_hi = 0.0;
  std::vector<double> periods;  // one sinusoid per period
  double amplitude_lo = 0.0, amplitude_hi = 0.0;
  double noise = 0.0;           // iid Gaussian sigma
  double walk = 0.0;            // random-walk innovation sigma
  double scale = 1.0;
};

struct SynthSpec {
  std::vector<SynthDomain> domains;
};

/// value_t = scale (level + slope t + sum_p A_p sin(2 pi t / p + phase_p)
///                  + walk_t + noise_t), with per-series parameters drawn
/// uniformly from the domain's ranges.
SeriesCollection synth_generate(const SynthSpec& spec, std::uint64_t seed);

SuperdomainMap superdomains_of(const SynthSpec& spec);

/// Two superdomains of four domains each: finance (trend plus random walk)
/// and weather (seasonal), six series of length 520 per domain.
SynthSpec desk_synth_spec();

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  Tensor x;  // B x alpha
  Tensor y;  // B x beta
};

/// B uniform draws with replacement from a split.
Batch sample_batch(const DomainDataset& dataset, Split split, std::size_t batch_size,
                   std::mt19937_64& rng);

/// The whole split in index order.
Batch split_batch(const DomainDataset& dataset, Split split);

}  // namespace fanbeats

#endif  // FANBEATS_DATA_HPP
