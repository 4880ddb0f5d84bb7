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

#include "fanbeats/run.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include "fanbeats/error.hpp"

namespace fs = std::filesystem;

namespace fanbeats {
namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string run_dir_name(const Scenario& s) { return lower(to_string(s.kind)) + "_" + s.target; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create directory '" + dir.string() + "': " + ec.message());
}

double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Runs jobs(i) for i in [0, n) on up to worker_count(n) threads. The first
// failing job in index order is rethrown after all workers finish.
template <typename F>
void parallel_for(std::size_t n, F&& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t w = worker_count(n);
  if (w <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < w; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

class Logger {
 public:
  explicit Logger(std::ostream* os) : os_(os) {}
  void operator()(const std::string& line) {
    if (!os_) return;
    std::lock_guard<std::mutex> lock(mu_);
    *os_ << line << std::endl;
  }

 private:
  std::ostream* os_;
  std::mutex mu_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_report(const MetricsReport& report, const fs::path& dir) {
  write_report_csv(report, (dir / "report.csv").string());
  write_text(dir / "report.txt", format_report_table(report));
}

// Settings for one (scenario, seed) run, with the scenario pinned.
RunConfig pinned(const RunConfig& cfg, const Scenario& s, std::uint64_t seed) {
  RunConfig c = cfg;
  c.seeds = {seed};
  c.scenario.kinds = {s.kind};
  c.scenario.target = s.target;
  c.scenario.sources.clear();
  c.scenario.sources[s.kind] = s.sources;
  return c;
}

}  // namespace

std::size_t worker_count(std::size_t jobs) {
  std::size_t w = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FANBEATS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) w = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(w, jobs));
}

Workspace prepare_workspace(const RunConfig& cfg) {
  validate(cfg);
  Workspace ws;
  if (cfg.data.source == "synthetic") {
    const SynthSpec spec = desk_synth_spec();
    ws.collection = synth_generate(spec, cfg.data.seed);
    ws.superdomains = cfg.data.superdomains.empty() ? superdomains_of(spec) : cfg.data.superdomains;
  } else {
    if (!fs::exists(cfg.data.path))
      fail(ErrorKind::kIo, "data file '" + cfg.data.path + "' does not exist");
    ws.collection = load_series_csv(cfg.data.path);
    ws.superdomains = cfg.data.superdomains;
  }
  const auto present = ws.collection.domains();
  for (const auto& [sd, members] : ws.superdomains) {
    for (const std::string& d : members) {
      if (std::find(present.begin(), present.end(), d) == present.end())
        fail(ErrorKind::kData, "superdomain '" + sd + "' lists domain '" + d +
                                   "' which has no series in the data");
    }
  }
  for (ScenarioKind kind : cfg.scenario.kinds) {
    const auto it = cfg.scenario.sources.find(kind);
    if (it == cfg.scenario.sources.end()) {
      ws.scenarios.push_back(make_scenario(ws.superdomains, kind, cfg.scenario.target, cfg.scenario.k));
      continue;
    }
    Scenario s{kind, it->second, cfg.scenario.target};
    if (!is_valid_scenario(ws.superdomains, s))
      fail(ErrorKind::kConfig, "scenario " + s.label() + " is not a valid " + to_string(kind) +
                                   " scenario for the superdomain map");
    ws.scenarios.push_back(std::move(s));
  }
  return ws;
}

ScenarioData build_scenario_data(const RunConfig& cfg, const Workspace& ws,
                                 const Scenario& scenario, std::uint64_t seed) {
  DatasetOptions o;
  o.alpha = cfg.model.alpha;
  o.beta = cfg.model.beta;
  o.stride = cfg.data.stride;
  o.n_instances = cfg.data.n_instances;
  o.with_replacement = cfg.data.with_replacement;
  o.strict_split = cfg.data.strict_split;
  const auto domains = ws.collection.domains();
  auto build = [&](const std::string& d) {
    const auto pos = std::find(domains.begin(), domains.end(), d);
    const std::uint64_t idx = static_cast<std::uint64_t>(pos - domains.begin());
    return build_domain_dataset(ws.collection, d, superdomain_of(ws.superdomains, d), o,
                                seed * 1000003ULL + idx);
  };
  ScenarioData out;
  for (const std::string& d : scenario.sources) out.sources.push_back(build(d));
  out.target = build(scenario.target);
  return out;
}

ExperimentResult run_experiment(const RunConfig& cfg, const ScenarioData& data,
                                const Scenario& scenario, std::uint64_t seed) {
  ExperimentResult r;
  r.model = make_forecaster(cfg.model, seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  r.history = train_loop(*r.model, data.sources, tc);
  r.row = evaluate(*r.model, data.target, {cfg.eval_batch, cfg.per_instance_mase});
  r.row.scenario = scenario.label();
  r.row.kind = lower(to_string(scenario.kind));
  r.row.lambda = tc.alignment.lambda;
  r.row.divergence = tc.alignment.lambda > 0 && r.model->has_taps()
                         ? to_string(tc.alignment.divergence)
                         : "none";
  r.row.seed = seed;
  r.row.runtime_ms = median(r.history.wall_ms);
  return r;
}

MetricsReport cmd_train(const RunConfig& cfg, const std::string& out_dir, std::ostream* log) {
  const Workspace ws = prepare_workspace(cfg);
  const fs::path root(out_dir);
  make_dir(root);
  write_text(root / "config.toml", to_config_text(cfg));
  Logger say(log);
  const std::size_t n = ws.scenarios.size() * cfg.seeds.size();
  std::vector<MetricsRow> rows(n);
  parallel_for(n, [&](std::size_t job) {
    const Scenario& s = ws.scenarios[job / cfg.seeds.size()];
    const std::uint64_t seed = cfg.seeds[job % cfg.seeds.size()];
    const fs::path dir = root / run_dir_name(s) / ("seed" + std::to_string(seed));
    make_dir(dir);
    RunConfig run = pinned(cfg, s, seed);
    if (run.train.checkpoint_every > 0) run.train.checkpoint_path = (dir / "model.fbck").string();
    write_text(dir / "config.toml", to_config_text(run));
    say("train " + s.label() + " seed " + std::to_string(seed));
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentResult r = run_experiment(run, build_scenario_data(run, ws, s, seed), s, seed);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_checkpoint(*r.model, (dir / "model.fbck").string(), seed);
    write_history_csv(r.history, (dir / "history.csv").string());
    say("  " + s.label() + " seed " + std::to_string(seed) + ": target smape " +
        fmt("%.4f", r.row.smape) + ", " + fmt("%.1f", secs) + " s" +
        (r.history.sinkhorn_warnings
             ? ", " + std::to_string(r.history.sinkhorn_warnings) + " sinkhorn warnings"
             : std::string()));
    rows[job] = r.row;
  });
  MetricsReport report{rows};
  write_report(report, root);
  return report;
}

MetricsReport cmd_eval(const RunConfig& cfg, const std::vector<std::string>& checkpoints,
                       const std::string& out_dir, bool export_feats, std::ostream* log) {
  if (checkpoints.empty()) fail(ErrorKind::kUsage, "eval needs at least one checkpoint");
  const fs::path root(out_dir);
  make_dir(root);
  Logger say(log);
  MetricsReport report;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    const std::string& path = checkpoints[c];
    if (!fs::exists(path)) fail(ErrorKind::kIo, "checkpoint '" + path + "' does not exist");
    std::unique_ptr<Forecaster> model = load_checkpoint(path);
    RunConfig run = cfg;
    const fs::path sidecar = fs::path(path).parent_path() / "config.toml";
    if (fs::exists(sidecar)) {
      run = make_profile("paper");
      apply_table(run, parse_config_file(sidecar.string()));
    }
    run.seeds = cfg.seeds;
    const ModelConfig& mc = model->config();
    if (mc.alpha != run.model.alpha || mc.beta != run.model.beta) {
      fail(ErrorKind::kConfig, "checkpoint '" + path + "' has alpha=" + std::to_string(mc.alpha) +
                                   " beta=" + std::to_string(mc.beta) +
                                   " but the run expects alpha=" + std::to_string(run.model.alpha) +
                                   " beta=" + std::to_string(run.model.beta));
    }
    const Workspace ws = prepare_workspace(run);
    for (const Scenario& s : ws.scenarios) {
      for (std::uint64_t seed : run.seeds) {
        const ScenarioData data = build_scenario_data(run, ws, s, seed);
        MetricsRow row = evaluate(*model, data.target, {run.eval_batch, run.per_instance_mase});
        row.scenario = s.label();
        row.kind = lower(to_string(s.kind));
        row.lambda = run.train.alignment.lambda;
        row.divergence =
            row.lambda > 0 && model->has_taps() ? to_string(run.train.alignment.divergence) : "none";
        row.seed = seed;
        say("eval " + path + " " + s.label() + " seed " + std::to_string(seed) + ": smape " +
            fmt("%.4f", row.smape));
        report.rows.push_back(row);
        if (export_feats && model->has_taps() && seed == run.seeds.front()) {
          std::vector<DomainDataset> all = data.sources;
          all.push_back(data.target);
          const std::string name = "features_" + std::to_string(c) + "_" + run_dir_name(s) + ".csv";
          export_features(*model, all, Split::kTest, run.export_per_domain,
                          run.train.alignment.normalizer, (root / name).string());
        }
      }
    }
  }
  write_report(report, root);
  std::vector<MetricsRow> base, aligned;
  for (const MetricsRow& r : report.rows) (r.lambda > 0 ? aligned : base).push_back(r);
  if (!base.empty() && !aligned.empty())
    write_paired_csv(pair_rows(base, aligned), (root / "paired.csv").string());
  return report;
}

std::vector<std::string> ablation_grid(const std::string& axis) {
  if (axis == "divergence") return {"exact_w2", "sinkhorn", "mmd", "kl"};
  if (axis == "epsilon") return {"1e-5", "2.5e-3", "1e-1"};
  if (axis == "normalizer") return {"softmax", "tanh", "none"};
  if (axis == "lambda") return {"0.1", "0.3", "1", "3"};
  if (axis == "granularity") return {"stack_wise", "block_wise"};
  fail(ErrorKind::kUsage,
       "unknown ablation axis '" + axis + "' (divergence|epsilon|normalizer|lambda|granularity)");
}

std::vector<AblationCell> cmd_ablate(const RunConfig& cfg, const std::string& axis,
                                     const std::vector<std::string>& values_in,
                                     const std::string& out_dir, std::ostream* log) {
  const std::vector<std::string> values = values_in.empty() ? ablation_grid(axis) : values_in;
  ablation_grid(axis);
  const std::string key = axis == "divergence"    ? "alignment.divergence"
                          : axis == "epsilon"     ? "sinkhorn.epsilon"
                          : axis == "normalizer"  ? "alignment.normalizer"
                          : axis == "lambda"      ? "alignment.lambda"
                                                  : "alignment.granularity";
  std::vector<RunConfig> variants;
  for (const std::string& v : values) {
    RunConfig c = cfg;
    apply_setting(c, key, parse_config_value(v));
    validate(c);
    variants.push_back(std::move(c));
  }
  const Workspace ws = prepare_workspace(cfg);
  const fs::path root(out_dir);
  make_dir(root);
  write_text(root / "config.toml", to_config_text(cfg));
  Logger say(log);
  const std::size_t per_value = ws.scenarios.size() * cfg.seeds.size();
  std::vector<AblationCell> cells(values.size() * per_value);
  parallel_for(cells.size(), [&](std::size_t job) {
    const std::size_t vi = job / per_value, rest = job % per_value;
    const Scenario& s = ws.scenarios[rest / cfg.seeds.size()];
    const std::uint64_t seed = cfg.seeds[rest % cfg.seeds.size()];
    AblationCell& cell = cells[job];
    cell.value = values[vi];
    cell.scenario = s.label();
    cell.seed = seed;
    try {
      const RunConfig run = pinned(variants[vi], s, seed);
      ExperimentResult r = run_experiment(run, build_scenario_data(run, ws, s, seed), s, seed);
      cell.ok = true;
      cell.smape = r.row.smape;
      say("ablate " + axis + "=" + cell.value + " " + s.label() + " seed " +
          std::to_string(seed) + ": smape " + fmt("%.4f", cell.smape));
    } catch (const Error& e) {
      cell.error = e.what();
      say("ablate " + axis + "=" + cell.value + " " + s.label() + " seed " +
          std::to_string(seed) + ": FAILED " + cell.error);
    }
  });

  std::string csv = "scenario,seed";
  for (const std::string& v : values) csv += "," + axis + "=" + v;
  csv += "\n";
  std::string txt = axis + " ablation, target-domain smape\n";
  for (std::size_t rest = 0; rest < per_value; ++rest) {
    const AblationCell& first = cells[rest];
    csv += first.scenario + "," + std::to_string(first.seed);
    for (std::size_t vi = 0; vi < values.size(); ++vi) {
      const AblationCell& cell = cells[vi * per_value + rest];
      csv += "," + (cell.ok ? fmt("%.17g", cell.smape) : std::string("FAILED"));
    }
    csv += "\n";
  }
  csv += "mean,";
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    double sum = 0.0;
    std::size_t ok = 0;
    for (std::size_t rest = 0; rest < per_value; ++rest) {
      const AblationCell& cell = cells[vi * per_value + rest];
      if (cell.ok) {
        sum += cell.smape;
        ++ok;
      }
    }
    const std::string mean = ok ? fmt("%.17g", sum / static_cast<double>(ok)) : "FAILED";
    csv += "," + mean;
    txt += "  " + axis + "=" + values[vi] + ": mean " +
           (ok ? fmt("%.4f", sum / static_cast<double>(ok)) : std::string("FAILED")) + " (" +
           std::to_string(ok) + "/" + std::to_string(per_value) + " cells)\n";
  }
  csv += "\n";
  for (const AblationCell& cell : cells)
    if (!cell.ok)
      txt += "  failed: " + axis + "=" + cell.value + " " + cell.scenario + " seed " +
             std::to_string(cell.seed) + ": " + cell.error + "\n";
  write_text(root / "ablation.csv", csv);
  write_text(root / "ablation.txt", txt);
  return cells;
}

}  // namespace fanbeats
