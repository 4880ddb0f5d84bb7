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

#include "fanbeats/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fanbeats/error.hpp"

namespace fanbeats {

std::vector<std::string> SeriesCollection::domains() const {
  std::vector<std::string> out;
  for (const Series& s : series)
    if (std::find(out.begin(), out.end(), s.domain_id) == out.end()) out.push_back(s.domain_id);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_int(const std::string& s, long long& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

// True when stamp b may follow stamp a.
bool stamp_after(const std::string& a, const std::string& b) {
  long long ia = 0, ib = 0;
  if (parse_int(a, ia) && parse_int(b, ib)) return ib > ia;
  return b > a;
}

}  // namespace

SeriesCollection load_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open series file '" + path + "'");
  SeriesCollection out;
  std::map<std::string, std::size_t> index;
  std::vector<std::string> last_stamp;
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    for (auto& f : fields) f = trim(f);
    const std::string where = path + ":" + std::to_string(line_no);
    if (header) {
      header = false;
      if (fields.size() < 4 || fields[0] != "series_id" || fields[1] != "domain_id" ||
          fields[2] != "t" || fields[3] != "value") {
        fail(ErrorKind::kParse,
             where + ": expected header series_id,domain_id,t,value[,frequency]");
      }
      continue;
    }
    if (fields.size() != 4 && fields.size() != 5) {
      fail(ErrorKind::kParse, where + ": expected 4 or 5 fields, got " +
                                  std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      fail(ErrorKind::kParse, where + ": empty series_id, domain_id or t");
    }
    double value = 0.0;
    {
      const std::string& v = fields[3];
      auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
      const bool is_special = v == "nan" || v == "NaN" || v == "inf" || v == "-inf";
      if (is_special || (ec == std::errc::result_out_of_range && ptr == v.data() + v.size())) {
        fail(ErrorKind::kData, where + ": non-finite value '" + v + "'");
      }
      if (ec != std::errc() || ptr != v.data() + v.size()) {
        fail(ErrorKind::kParse, where + ": cannot parse value '" + v + "'");
      }
      if (!std::isfinite(value)) fail(ErrorKind::kData, where + ": non-finite value '" + v + "'");
    }
    auto it = index.find(fields[0]);
    if (it == index.end()) {
      it = index.emplace(fields[0], out.series.size()).first;
      Series s;
      s.series_id = fields[0];
      s.domain_id = fields[1];
      if (fields.size() == 5) s.frequency = fields[4];
      out.series.push_back(std::move(s));
      last_stamp.push_back(fields[2]);
    } else {
      Series& s = out.series[it->second];
      if (s.domain_id != fields[1]) {
        fail(ErrorKind::kParse, where + ": series '" + fields[0] + "' changes domain from '" +
                                    s.domain_id + "' to '" + fields[1] + "'");
      }
      if (!stamp_after(last_stamp[it->second], fields[2])) {
        fail(ErrorKind::kParse, where + ": t '" + fields[2] + "' does not follow '" +
                                    last_stamp[it->second] + "' in series '" + fields[0] + "'");
      }
      last_stamp[it->second] = fields[2];
    }
    out.series[it->second].values.push_back(value);
  }
  return out;
}

void save_series_csv(const SeriesCollection& collection, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write series file '" + path + "'");
  out << "series_id,domain_id,t,value,frequency\n";
  char buf[64];
  for (const Series& s : collection.series) {
    for (std::size_t t = 0; t < s.values.size(); ++t) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, s.values[t]);
      (void)ec;
      out << s.series_id << ',' << s.domain_id << ',' << t << ','
          << std::string_view(buf, static_cast<std::size_t>(ptr - buf)) << ',' << s.frequency
          << '\n';
    }
  }
  if (!out) fail(ErrorKind::kIo, "failed writing series file '" + path + "'");
}

// ---------------------------------------------------------------------------
// Windows and datasets

std::vector<Instance> make_windows(const std::vector<double>& values, std::size_t alpha,
                                   std::size_t beta, std::size_t stride) {
  if (alpha == 0 || beta == 0 || stride == 0) {
    fail(ErrorKind::kConfig, "make_windows needs alpha, beta, stride >= 1");
  }
  std::vector<Instance> out;
  const std::size_t span = alpha + beta;
  if (values.size() < span) return out;
  for (std::size_t t = 0; t + span <= values.size(); t += stride) {
    Instance inst;
    inst.x.assign(values.begin() + static_cast<std::ptrdiff_t>(t),
                  values.begin() + static_cast<std::ptrdiff_t>(t + alpha));
    inst.y.assign(values.begin() + static_cast<std::ptrdiff_t>(t + alpha),
                  values.begin() + static_cast<std::ptrdiff_t>(t + span));
    inst.offset = t;
    out.push_back(std::move(inst));
  }
  return out;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

const std::vector<std::size_t>& DomainDataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return train;
}

std::vector<std::size_t> split_sizes(std::size_t n) {
  const auto round_share = [n](double share) {
    return static_cast<std::size_t>(std::floor(share * static_cast<double>(n) + 0.5));
  };
  const std::size_t tr = std::min(n, round_share(0.7));
  const std::size_t va = std::min(n - tr, round_share(0.1));
  return {tr, va, n - tr - va};
}

namespace {

// Draws `count` items from `pool`: a shuffled prefix, or uniform draws with
// replacement when the pool is short and that is allowed.
std::vector<Instance> draw(const std::vector<Instance>& pool, std::size_t count, bool replace,
                           const std::string& what, std::mt19937_64& rng, bool& resampled) {
  std::vector<Instance> out;
  if (count == 0) return out;
  if (pool.empty()) fail(ErrorKind::kConfig, what + " has no windows");
  if (count <= pool.size()) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < count; ++i) out.push_back(pool[order[i]]);
    return out;
  }
  if (!replace) {
    fail(ErrorKind::kConfig, what + " has " + std::to_string(pool.size()) + " windows but " +
                                 std::to_string(count) + " were requested (short by " +
                                 std::to_string(count - pool.size()) +
                                 "); enable sampling with replacement or lower the count");
  }
  resampled = true;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (std::size_t i = 0; i < count; ++i) out.push_back(pool[pick(rng)]);
  return out;
}

}  // namespace

DomainDataset build_domain_dataset(const SeriesCollection& collection,
                                   const std::string& domain_id,
                                   const std::string& superdomain_id,
                                   const DatasetOptions& options, std::uint64_t seed) {
  if (options.n_instances == 0) fail(ErrorKind::kConfig, "n_instances must be >= 1");
  DomainDataset ds;
  ds.domain_id = domain_id;
  ds.superdomain_id = superdomain_id;
  ds.alpha = options.alpha;
  ds.beta = options.beta;
  std::vector<std::vector<Instance>> per_series;
  std::size_t pool_size = 0;
  for (std::size_t s = 0; s < collection.series.size(); ++s) {
    if (collection.series[s].domain_id != domain_id) continue;
    auto w = make_windows(collection.series[s].values, options.alpha, options.beta, options.stride);
    for (Instance& inst : w) inst.series = s;
    pool_size += w.size();
    per_series.push_back(std::move(w));
  }
  if (pool_size == 0) {
    fail(ErrorKind::kConfig, "domain '" + domain_id + "' has no windows of length " +
                                 std::to_string(options.alpha + options.beta));
  }
  std::mt19937_64 rng(seed);
  const auto sizes = split_sizes(options.n_instances);
  const std::string what = "domain '" + domain_id + "'";
  std::vector<std::vector<Instance>> parts(3);
  if (!options.strict_split) {
    std::vector<Instance> pool;
    for (auto& w : per_series) pool.insert(pool.end(), w.begin(), w.end());
    auto chosen = draw(pool, options.n_instances, options.with_replacement, what, rng,
                       ds.resampled);
    std::shuffle(chosen.begin(), chosen.end(), rng);
    std::size_t at = 0;
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t i = 0; i < sizes[p]; ++i) parts[p].push_back(std::move(chosen[at++]));
  } else {
    std::vector<std::size_t> order;
    for (std::size_t s = 0; s < per_series.size(); ++s)
      if (!per_series[s].empty()) order.push_back(s);
    if (order.size() < 3) {
      fail(ErrorKind::kConfig, what + " needs at least 3 usable series for a strict split, has " +
                                   std::to_string(order.size()));
    }
    std::shuffle(order.begin(), order.end(), rng);
    const double shares[3] = {0.7, 0.1, 0.2};
    std::vector<std::vector<Instance>> pools(3);
    std::vector<double> filled(3, 0.0);
    // Each split first receives one series, then the largest deficit wins.
    for (std::size_t r = 0; r < order.size(); ++r) {
      std::size_t best = r < 3 ? r : 0;
      if (r >= 3) {
        double deficit = -1e300;
        for (std::size_t p = 0; p < 3; ++p) {
          const double d = shares[p] * static_cast<double>(pool_size) - filled[p];
          if (d > deficit) {
            deficit = d;
            best = p;
          }
        }
      }
      auto& src = per_series[order[r]];
      filled[best] += static_cast<double>(src.size());
      pools[best].insert(pools[best].end(), src.begin(), src.end());
    }
    for (std::size_t p = 0; p < 3; ++p) {
      parts[p] = draw(pools[p], sizes[p], options.with_replacement,
                      what + " " + to_string(static_cast<Split>(p)) + " series", rng,
                      ds.resampled);
    }
  }
  std::vector<std::size_t>* targets[3] = {&ds.train, &ds.val, &ds.test};
  for (std::size_t p = 0; p < 3; ++p) {
    for (Instance& inst : parts[p]) {
      targets[p]->push_back(ds.instances.size());
      ds.instances.push_back(std::move(inst));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Scenarios

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kOdg: return "ODG";
    case ScenarioKind::kCdg: return "CDG";
    case ScenarioKind::kIdg: return "IDG";
  }
  return "ODG";
}

ScenarioKind parse_scenario_kind(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
  if (u == "ODG") return ScenarioKind::kOdg;
  if (u == "CDG") return ScenarioKind::kCdg;
  if (u == "IDG") return ScenarioKind::kIdg;
  fail(ErrorKind::kConfig, "unknown scenario kind '" + s + "' (expected ODG, CDG or IDG)");
}

std::string superdomain_of(const SuperdomainMap& map, const std::string& domain) {
  for (const auto& [name, members] : map)
    if (std::find(members.begin(), members.end(), domain) != members.end()) return name;
  fail(ErrorKind::kConfig, "domain '" + domain + "' belongs to no superdomain");
}

std::string Scenario::label() const {
  std::string out = std::string(to_string(kind)) + ":" + target + "<-";
  for (std::size_t i = 0; i < sources.size(); ++i) out += (i ? "+" : "") + sources[i];
  return out;
}

bool is_valid_scenario(const SuperdomainMap& map, const Scenario& sc) {
  if (sc.sources.empty()) return false;
  std::vector<std::string> seen;
  std::string target_sd;
  std::vector<std::string> source_sd;
  try {
    target_sd = superdomain_of(map, sc.target);
    for (const auto& s : sc.sources) {
      if (s == sc.target) return false;
      if (std::find(seen.begin(), seen.end(), s) != seen.end()) return false;
      seen.push_back(s);
      source_sd.push_back(superdomain_of(map, s));
    }
  } catch (const Error&) {
    return false;
  }
  const auto same = static_cast<std::size_t>(std::count(source_sd.begin(), source_sd.end(),
                                                        target_sd));
  switch (sc.kind) {
    case ScenarioKind::kOdg:
      return same == 0 &&
             std::all_of(source_sd.begin(), source_sd.end(),
                         [&](const std::string& s) { return s == source_sd.front(); });
    case ScenarioKind::kCdg: return same == 1 && sc.sources.size() >= 2;
    case ScenarioKind::kIdg: return same == sc.sources.size();
  }
  return false;
}

namespace {

void combinations(const std::vector<std::string>& items, std::size_t k,
                  std::vector<std::vector<std::string>>& out) {
  if (k > items.size()) return;
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    std::vector<std::string> c;
    for (std::size_t i : idx) c.push_back(items[i]);
    out.push_back(std::move(c));
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == items.size() - k + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

std::vector<Scenario> scenarios_for_target(const SuperdomainMap& map, ScenarioKind kind,
                                           const std::string& target, std::size_t k) {
  std::vector<Scenario> out;
  if (k == 0) return out;
  const std::string home = superdomain_of(map, target);
  std::vector<std::string> siblings, others;
  for (const auto& [name, members] : map)
    for (const auto& d : members) {
      if (name == home) {
        if (d != target) siblings.push_back(d);
      } else {
        others.push_back(d);
      }
    }
  std::vector<std::vector<std::string>> combos;
  switch (kind) {
    case ScenarioKind::kOdg:
      for (const auto& [name, members] : map)
        if (name != home) combinations(members, k, combos);
      break;
    case ScenarioKind::kIdg: combinations(siblings, k, combos); break;
    case ScenarioKind::kCdg: {
      if (k < 2) break;
      std::vector<std::vector<std::string>> rest;
      combinations(others, k - 1, rest);
      for (const auto& r : rest)
        for (const auto& s : siblings) {
          std::vector<std::string> c = r;
          c.push_back(s);
          combos.push_back(std::move(c));
        }
      break;
    }
  }
  for (auto& c : combos) out.push_back(Scenario{kind, std::move(c), target});
  return out;
}

}  // namespace

std::vector<Scenario> enumerate_scenarios(const SuperdomainMap& map, ScenarioKind kind,
                                          std::size_t k) {
  std::vector<Scenario> out;
  for (const auto& [name, members] : map)
    for (const auto& target : members) {
      auto part = scenarios_for_target(map, kind, target, k);
      out.insert(out.end(), part.begin(), part.end());
    }
  return out;
}

Scenario make_scenario(const SuperdomainMap& map, ScenarioKind kind, const std::string& target,
                       std::size_t k) {
  auto all = scenarios_for_target(map, kind, target, k);
  if (all.empty()) {
    fail(ErrorKind::kConfig, std::string("no ") + to_string(kind) + " scenario with " +
                                 std::to_string(k) + " sources exists for target '" + target +
                                 "'");
  }
  return all.front();
}

// ---------------------------------------------------------------------------
// Synthetic data

SeriesCollection synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.domains.empty()) fail(ErrorKind::kConfig, "synthetic spec lists no domains");
  SeriesCollection out;
  std::mt19937_64 rng(seed);
  const auto uniform = [&rng](double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const SynthDomain& d : spec.domains) {
    if (d.name.empty()) fail(ErrorKind::kConfig, "synthetic domain without a name");
    for (std::size_t s = 0; s < d.series; ++s) {
      const double level = uniform(d.level_lo, d.level_hi);
      const double slope = uniform(d.slope_lo, d.slope_hi);
      std::vector<double> amp, phase;
      for (std::size_t p = 0; p < d.periods.size(); ++p) {
        amp.push_back(uniform(d.amplitude_lo, d.amplitude_hi));
        phase.push_back(uniform(0.0, 2.0 * std::numbers::pi));
      }
      Series series;
      series.series_id = d.name + "_" + std::to_string(s);
      series.domain_id = d.name;
      series.values.resize(d.length);
      double walk = 0.0;
      for (std::size_t t = 0; t < d.length; ++t) {
        const double tt = static_cast<double>(t);
        double v = level + slope * tt;
        for (std::size_t p = 0; p < d.periods.size(); ++p)
          v += amp[p] * std::sin(2.0 * std::numbers::pi * tt / d.periods[p] + phase[p]);
        if (d.walk > 0.0) {
          walk += d.walk * normal(rng);
          v += walk;
        }
        if (d.noise > 0.0) v += d.noise * normal(rng);
        series.values[t] = d.scale * v;
      }
      out.series.push_back(std::move(series));
    }
  }
  return out;
}

SuperdomainMap superdomains_of(const SynthSpec& spec) {
  SuperdomainMap map;
  for (const SynthDomain& d : spec.domains) {
    auto it = std::find_if(map.begin(), map.end(),
                           [&](const auto& e) { return e.first == d.superdomain; });
    if (it == map.end()) {
      map.emplace_back(d.superdomain, std::vector<std::string>{});
      it = map.end() - 1;
    }
    it->second.push_back(d.name);
  }
  return map;
}

SynthSpec desk_synth_spec() {
  SynthSpec spec;
  const auto add = [&spec](SynthDomain d) { spec.domains.push_back(std::move(d)); };
  // Finance: drifting levels, random walks, weak cycles.
  add({"commodity", "finance", 6, 520, 40, 60, 0.02, 0.06, {50}, 0.5, 1.5, 0.2, 0.6, 1.0});
  add({"income", "finance", 6, 520, 80, 120, 0.08, 0.15, {}, 0, 0, 0.3, 0.2, 1.0});
  add({"interest", "finance", 6, 520, 20, 30, -0.02, 0.0, {}, 0, 0, 0.1, 0.3, 1.0});
  add({"exchange", "finance", 6, 520, 90, 110, -0.01, 0.01, {}, 0, 0, 0.2, 0.5, 1.0});
  // Weather: strong seasonality around a stable level.
  add({"pressure", "weather", 6, 520, 95, 105, 0, 0, {24, 7}, 3, 6, 0.8, 0, 1.0});
  add({"rain", "weather", 6, 520, 30, 40, 0, 0, {12}, 8, 12, 2.0, 0, 1.0});
  add({"temperature", "weather", 6, 520, 40, 60, 0, 0, {24}, 10, 15, 1.0, 0, 1.0});
  add({"wind", "weather", 6, 520, 20, 30, 0, 0, {6, 30}, 2, 5, 1.5, 0, 1.0});
  return spec;
}

// ---------------------------------------------------------------------------
// Batches

namespace {

Batch assemble(const DomainDataset& ds, const std::vector<std::size_t>& rows) {
  Batch b{Tensor(Shape{rows.size(), ds.alpha}), Tensor(Shape{rows.size(), ds.beta})};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Instance& inst = ds.instances[rows[r]];
    std::copy(inst.x.begin(), inst.x.end(), b.x.row(r).begin());
    std::copy(inst.y.begin(), inst.y.end(), b.y.row(r).begin());
  }
  return b;
}

}  // namespace

Batch sample_batch(const DomainDataset& dataset, Split split, std::size_t batch_size,
                   std::mt19937_64& rng) {
  const auto& rows = dataset.split(split);
  if (rows.empty()) {
    fail(ErrorKind::kConfig, "domain '" + dataset.domain_id + "' has an empty " +
                                 to_string(split) + " split");
  }
  if (batch_size == 0) fail(ErrorKind::kConfig, "batch size must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
  std::vector<std::size_t> chosen(batch_size);
  for (auto& c : chosen) c = rows[pick(rng)];
  return assemble(dataset, chosen);
}

Batch split_batch(const DomainDataset& dataset, Split split) {
  const auto& rows = dataset.split(split);
  if (rows.empty()) {
    fail(ErrorKind::kConfig, "domain '" + dataset.domain_id + "' has an empty " +
                                 to_string(split) + " split");
  }
  return assemble(dataset, rows);
}

}  // namespace fanbeats
