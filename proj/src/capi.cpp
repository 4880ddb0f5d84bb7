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

#include "fanbeats.h"

#include <iostream>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "fanbeats/error.hpp"
#include "fanbeats/eval.hpp"
#include "fanbeats/run.hpp"

struct fb_config {
  fanbeats::RunConfig cfg;
  std::string text;
};

struct fb_model {
  std::unique_ptr<fanbeats::Forecaster> model;
};

struct fb_report {
  std::vector<fanbeats::MetricsRow> rows;
  std::string text;
  std::size_t failed = 0;
};

namespace {

thread_local std::string g_last_error;

fb_status status_of(fanbeats::ErrorKind k) {
  using fanbeats::ErrorKind;
  switch (k) {
    case ErrorKind::kDimension:
    case ErrorKind::kRank:
    case ErrorKind::kSize: return FB_ERR_DIMENSION;
    case ErrorKind::kDomain:
    case ErrorKind::kEmptyReduction: return FB_ERR_DOMAIN;
    case ErrorKind::kNumeric: return FB_ERR_NUMERIC;
    case ErrorKind::kConfig: return FB_ERR_CONFIG;
    case ErrorKind::kParse: return FB_ERR_PARSE;
    case ErrorKind::kData: return FB_ERR_DATA;
    case ErrorKind::kIo: return FB_ERR_IO;
    case ErrorKind::kUsage: return FB_ERR_USAGE;
    case ErrorKind::kNoGraph:
    case ErrorKind::kOracle: return FB_ERR_INTERNAL;
  }
  return FB_ERR_INTERNAL;
}

fb_status fail_with(fb_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
fb_status guarded(F&& f) {
  try {
    f();
    return FB_OK;
  } catch (const fanbeats::Error& e) {
    return fail_with(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail_with(FB_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail_with(FB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail_with(FB_ERR_INTERNAL, "unknown failure");
  }
}

#define FB_REQUIRE(cond, what) \
  if (!(cond)) return fail_with(FB_ERR_USAGE, what)

std::vector<std::string> split_csv(const char* s) {
  std::vector<std::string> out;
  if (!s) return out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto a = part.find_first_not_of(" \t");
    const auto b = part.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(part.substr(a, b - a + 1));
  }
  return out;
}

}  // namespace

extern "C" {

const char* fb_version(void) { return "0.1.0"; }

const char* fb_last_error(void) { return g_last_error.c_str(); }

const char* fb_status_name(fb_status status) {
  switch (status) {
    case FB_OK: return "ok";
    case FB_ERR_USAGE: return "usage";
    case FB_ERR_CONFIG: return "config";
    case FB_ERR_PARSE: return "parse";
    case FB_ERR_DATA: return "data";
    case FB_ERR_IO: return "io";
    case FB_ERR_NUMERIC: return "numeric";
    case FB_ERR_DIMENSION: return "dimension";
    case FB_ERR_DOMAIN: return "domain";
    case FB_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int fb_exit_code(fb_status status) {
  switch (status) {
    case FB_OK: return 0;
    case FB_ERR_PARSE:
    case FB_ERR_DATA:
    case FB_ERR_IO: return 2;
    case FB_ERR_NUMERIC: return 3;
    default: return 1;
  }
}

fb_status fb_config_new(const char* profile, fb_config** out) {
  FB_REQUIRE(out, "fb_config_new: out is null");
  *out = nullptr;
  return guarded([&] {
    auto c = std::make_unique<fb_config>();
    c->cfg = fanbeats::make_profile(profile ? profile : "paper");
    *out = c.release();
  });
}

void fb_config_free(fb_config* cfg) { delete cfg; }

fb_status fb_config_load(fb_config* cfg, const char* path) {
  FB_REQUIRE(cfg && path, "fb_config_load: null argument");
  return guarded([&] {
    fanbeats::RunConfig next = cfg->cfg;
    fanbeats::apply_table(next, fanbeats::parse_config_file(path));
    cfg->cfg = std::move(next);
  });
}

fb_status fb_config_set(fb_config* cfg, const char* assignment) {
  FB_REQUIRE(cfg && assignment, "fb_config_set: null argument");
  return guarded([&] {
    fanbeats::RunConfig next = cfg->cfg;
    fanbeats::apply_override(next, assignment);
    cfg->cfg = std::move(next);
  });
}

fb_status fb_config_text(fb_config* cfg, const char** text) {
  FB_REQUIRE(cfg && text, "fb_config_text: null argument");
  return guarded([&] {
    cfg->text = fanbeats::to_config_text(cfg->cfg);
    *text = cfg->text.c_str();
  });
}

fb_status fb_run_train(const fb_config* cfg, const char* out_dir, int verbose, fb_report** out) {
  FB_REQUIRE(cfg && out_dir && out, "fb_run_train: null argument");
  *out = nullptr;
  return guarded([&] {
    auto r = std::make_unique<fb_report>();
    const auto report = fanbeats::cmd_train(cfg->cfg, out_dir, verbose ? &std::cerr : nullptr);
    r->rows = report.rows;
    r->text = fanbeats::format_report_table(report);
    *out = r.release();
  });
}

fb_status fb_run_eval(const fb_config* cfg, const char* const* checkpoints, size_t n_checkpoints,
                      const char* out_dir, int export_features, int verbose, fb_report** out) {
  FB_REQUIRE(cfg && out_dir && out && (checkpoints || n_checkpoints == 0),
             "fb_run_eval: null argument");
  *out = nullptr;
  std::vector<std::string> paths;
  for (size_t i = 0; i < n_checkpoints; ++i) {
    FB_REQUIRE(checkpoints[i], "fb_run_eval: null checkpoint path");
    paths.emplace_back(checkpoints[i]);
  }
  return guarded([&] {
    auto r = std::make_unique<fb_report>();
    const auto report = fanbeats::cmd_eval(cfg->cfg, paths, out_dir, export_features != 0,
                                           verbose ? &std::cerr : nullptr);
    r->rows = report.rows;
    r->text = fanbeats::format_report_table(report);
    *out = r.release();
  });
}

fb_status fb_run_ablate(const fb_config* cfg, const char* axis, const char* values,
                        const char* out_dir, int verbose, fb_report** out) {
  FB_REQUIRE(cfg && axis && out_dir && out, "fb_run_ablate: null argument");
  *out = nullptr;
  return guarded([&] {
    auto r = std::make_unique<fb_report>();
    const auto cells = fanbeats::cmd_ablate(cfg->cfg, axis, split_csv(values), out_dir,
                                            verbose ? &std::cerr : nullptr);
    std::ostringstream os;
    os << "scenario,seed," << axis << ",smape\n";
    for (const auto& c : cells) {
      os << c.scenario << ',' << c.seed << ',' << c.value << ',';
      if (c.ok) {
        os << c.smape << '\n';
      } else {
        os << "FAILED (" << c.error << ")\n";
        ++r->failed;
      }
    }
    r->text = os.str();
    *out = r.release();
  });
}

void fb_report_free(fb_report* report) { delete report; }

const char* fb_report_text(const fb_report* report) { return report ? report->text.c_str() : ""; }

size_t fb_report_rows(const fb_report* report) { return report ? report->rows.size() : 0; }

fb_status fb_report_row(const fb_report* report, size_t index, fb_metrics_row* out) {
  FB_REQUIRE(report && out, "fb_report_row: null argument");
  if (index >= report->rows.size()) {
    return fail_with(FB_ERR_USAGE, "fb_report_row: index " + std::to_string(index) +
                                       " out of range (" + std::to_string(report->rows.size()) +
                                       " rows)");
  }
  const auto& r = report->rows[index];
  *out = {r.scenario.c_str(), r.kind.c_str(), r.model.c_str(), r.divergence.c_str(), r.lambda,
          r.seed, r.smape, r.mase, r.n_instances, r.runtime_ms};
  return FB_OK;
}

size_t fb_report_failed(const fb_report* report) { return report ? report->failed : 0; }

fb_status fb_model_create(const fb_config* cfg, uint64_t seed, fb_model** out) {
  FB_REQUIRE(cfg && out, "fb_model_create: null argument");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<fb_model>();
    m->model = fanbeats::make_forecaster(cfg->cfg.model, seed);
    *out = m.release();
  });
}

fb_status fb_model_load(const char* path, fb_model** out) {
  FB_REQUIRE(path && out, "fb_model_load: null argument");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<fb_model>();
    m->model = fanbeats::load_checkpoint(path);
    *out = m.release();
  });
}

fb_status fb_model_save(const fb_model* model, const char* path, uint64_t seed) {
  FB_REQUIRE(model && path, "fb_model_save: null argument");
  return guarded([&] { fanbeats::save_checkpoint(*model->model, path, seed); });
}

void fb_model_free(fb_model* model) { delete model; }

fb_status fb_model_dims(const fb_model* model, size_t* alpha, size_t* beta, size_t* gamma,
                        size_t* stacks) {
  FB_REQUIRE(model, "fb_model_dims: null model");
  const auto& c = model->model->config();
  if (alpha) *alpha = c.alpha;
  if (beta) *beta = c.beta;
  if (gamma) *gamma = c.gamma;
  if (stacks) *stacks = c.stacks;
  return FB_OK;
}

fb_status fb_model_predict(const fb_model* model, const double* x, size_t rows, size_t cols,
                           double* out, size_t out_len) {
  FB_REQUIRE(model && x && out, "fb_model_predict: null argument");
  auto& m = *model->model;
  if (rows == 0) return fail_with(FB_ERR_DIMENSION, "fb_model_predict: rows must be >= 1");
  if (cols != m.alpha()) {
    return fail_with(FB_ERR_DIMENSION, "fb_model_predict: input has " + std::to_string(cols) +
                                           " columns, model expects alpha=" +
                                           std::to_string(m.alpha()));
  }
  if (out_len < rows * m.beta()) {
    return fail_with(FB_ERR_DIMENSION, "fb_model_predict: output buffer holds " +
                                           std::to_string(out_len) + " values, needs " +
                                           std::to_string(rows * m.beta()));
  }
  return guarded([&] {
    const fanbeats::Tensor in({rows, cols}, std::vector<double>(x, x + rows * cols));
    const fanbeats::Tensor p = m.predict(in);
    std::copy(p.data(), p.data() + p.size(), out);
  });
}

fb_status fb_smape(const double* pred, const double* target, size_t n, double* out) {
  FB_REQUIRE(pred && target && out, "fb_smape: null argument");
  return guarded([&] {
    *out = fanbeats::smape_metric(fanbeats::Tensor::vector({pred, pred + n}),
                                  fanbeats::Tensor::vector({target, target + n}));
  });
}

fb_status fb_mase(const double* pred, const double* target, size_t n, double* out) {
  FB_REQUIRE(pred && target && out, "fb_mase: null argument");
  return guarded([&] {
    *out = fanbeats::mase_metric(fanbeats::Tensor::vector({pred, pred + n}),
                                 fanbeats::Tensor::vector({target, target + n}));
  });
}

fb_status fb_sinkhorn_divergence(const double* x, size_t n, const double* y, size_t m, size_t d,
                                 double epsilon, double* out) {
  FB_REQUIRE(x && y && out, "fb_sinkhorn_divergence: null argument");
  return guarded([&] {
    fanbeats::SinkhornConfig sc;
    sc.epsilon = epsilon;
    *out = fanbeats::sinkhorn_divergence(
        fanbeats::Tensor({n, d}, std::vector<double>(x, x + n * d)),
        fanbeats::Tensor({m, d}, std::vector<double>(y, y + m * d)), sc);
  });
}

}  // extern "C"
