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

#include "fanbeats/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "fanbeats/error.hpp"
#include "fanbeats/train.hpp"

namespace fanbeats {
namespace {

double mase_flat(std::span<const double> pred, std::span<const double> y) {
  const std::size_t h = y.size();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < h; ++i) num += std::abs(y[i] - pred[i]);
  for (std::size_t i = 0; i + 1 < h; ++i) den += std::abs(y[i + 1] - y[i]);
  num /= static_cast<double>(h);
  den /= static_cast<double>(h - 1);
  if (den < 1e-12) return kNa;
  return num / den;
}

std::string num(double v, const char* fmt = "%.17g") {
  if (is_na(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  std::vector<double> ok;
  for (double x : xs)
    if (!is_na(x)) ok.push_back(x);
  if (ok.empty()) {
    mean = sd = kNa;
    return;
  }
  double s = 0.0;
  for (double x : ok) s += x;
  mean = s / static_cast<double>(ok.size());
  double q = 0.0;
  for (double x : ok) q += (x - mean) * (x - mean);
  sd = ok.size() > 1 ? std::sqrt(q / static_cast<double>(ok.size() - 1)) : 0.0;
}

std::ofstream open_out(const std::string& path, const char* what) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, std::string("cannot write ") + what + " '" + path + "'");
  return out;
}

}  // namespace

double smape_metric(const Tensor& preds, const Tensor& targets) {
  return smape_loss(preds, targets);
}

double mase_metric(const Tensor& preds, const Tensor& targets, bool per_instance) {
  if (!preds.same_shape(targets)) fail(ErrorKind::kDimension, "mase: prediction/target shapes differ");
  if (!per_instance) {
    if (targets.size() < 2) fail(ErrorKind::kDomain, "mase needs at least 2 target values");
    return mase_flat(preds.values(), targets.values());
  }
  const std::size_t rows = targets.rank() == 2 ? targets.rows() : 1;
  const std::size_t cols = targets.size() / std::max<std::size_t>(rows, 1);
  if (cols < 2) fail(ErrorKind::kDomain, "per-instance mase needs at least 2 values per row");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double m = mase_flat(preds.values().subspan(r * cols, cols),
                               targets.values().subspan(r * cols, cols));
    if (is_na(m)) continue;
    sum += m;
    ++n;
  }
  return n == 0 ? kNa : sum / static_cast<double>(n);
}

MetricsRow evaluate(const Predictor& predict, std::size_t alpha, std::size_t beta,
                    const DomainDataset& target, const EvalOptions& options) {
  if (alpha != target.alpha || beta != target.beta) {
    fail(ErrorKind::kConfig, "model expects alpha=" + std::to_string(alpha) + " beta=" +
                                 std::to_string(beta) + " but domain '" + target.domain_id +
                                 "' has alpha=" + std::to_string(target.alpha) +
                                 " beta=" + std::to_string(target.beta));
  }
  if (options.batch_size == 0) fail(ErrorKind::kConfig, "evaluation batch_size must be >= 1");
  const Batch all = split_batch(target, Split::kTest);
  const std::size_t n = all.x.rows();
  Tensor preds({n, beta});
  for (std::size_t start = 0; start < n; start += options.batch_size) {
    const std::size_t len = std::min(options.batch_size, n - start);
    Tensor xb({len, alpha});
    std::copy_n(all.x.data() + start * alpha, len * alpha, xb.data());
    const Tensor pb = predict(xb);
    if (pb.rank() != 2 || pb.rows() != len || pb.cols() != beta)
      fail(ErrorKind::kDimension, "predictor returned the wrong shape");
    std::copy_n(pb.data(), len * beta, preds.data() + start * beta);
  }
  MetricsRow row;
  row.smape = smape_metric(preds, all.y);
  row.mase = mase_metric(preds, all.y, options.per_instance_mase);
  row.n_instances = n;
  return row;
}

MetricsRow evaluate(Forecaster& model, const DomainDataset& target, const EvalOptions& options) {
  MetricsRow row = evaluate([&](const Tensor& x) { return model.predict(x); }, model.alpha(),
                            model.beta(), target, options);
  row.model = to_string(model.config().variant);
  return row;
}

double runtime_probe(const std::function<void()>& step, std::size_t warmup, std::size_t reps) {
  if (reps == 0) fail(ErrorKind::kConfig, "runtime_probe needs reps >= 1");
  for (std::size_t i = 0; i < warmup; ++i) step();
  std::vector<double> ms(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    step();
    ms[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  std::sort(ms.begin(), ms.end());
  return reps % 2 ? ms[reps / 2] : 0.5 * (ms[reps / 2 - 1] + ms[reps / 2]);
}

std::vector<SummaryRow> MetricsReport::summary() const {
  using Key = std::tuple<std::string, std::string, std::string, double>;
  std::vector<Key> order;
  std::map<Key, std::vector<const MetricsRow*>> groups;
  for (const MetricsRow& r : rows) {
    Key k{r.scenario, r.model, r.divergence, r.lambda};
    auto [it, fresh] = groups.try_emplace(k);
    if (fresh) order.push_back(k);
    it->second.push_back(&r);
  }
  std::vector<SummaryRow> out;
  for (const Key& k : order) {
    const auto& g = groups[k];
    SummaryRow s;
    std::tie(s.scenario, s.model, s.divergence, s.lambda) = k;
    s.seeds = g.size();
    std::vector<double> sm, ma, rt;
    for (const MetricsRow* r : g) {
      sm.push_back(r->smape);
      ma.push_back(r->mase);
      rt.push_back(r->runtime_ms);
    }
    mean_std(sm, s.smape_mean, s.smape_std);
    mean_std(ma, s.mase_mean, s.mase_std);
    double rsd = 0.0;
    mean_std(rt, s.runtime_ms, rsd);
    out.push_back(s);
  }
  return out;
}

std::vector<SummaryRow> MetricsReport::scenario_average() const {
  using Key = std::tuple<std::string, std::string, double>;
  std::vector<Key> order;
  std::map<Key, std::vector<SummaryRow>> groups;
  for (const SummaryRow& s : summary()) {
    Key k{s.model, s.divergence, s.lambda};
    auto [it, fresh] = groups.try_emplace(k);
    if (fresh) order.push_back(k);
    it->second.push_back(s);
  }
  std::vector<SummaryRow> out;
  for (const Key& k : order) {
    const auto& g = groups[k];
    SummaryRow a;
    a.scenario = "average";
    std::tie(a.model, a.divergence, a.lambda) = k;
    std::vector<double> sm, ma, rt;
    for (const SummaryRow& s : g) {
      a.seeds = std::max(a.seeds, s.seeds);
      sm.push_back(s.smape_mean);
      ma.push_back(s.mase_mean);
      rt.push_back(s.runtime_ms);
    }
    double unused = 0.0;
    mean_std(sm, a.smape_mean, unused);
    mean_std(ma, a.mase_mean, unused);
    mean_std(rt, a.runtime_ms, unused);
    a.smape_std = a.mase_std = 0.0;
    out.push_back(a);
  }
  return out;
}

void write_report_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out = open_out(path, "report");
  out << "row,scenario,kind,model,divergence,lambda,seed,smape,smape_std,mase,mase_std,"
         "n_instances,runtime_ms\n";
  for (const MetricsRow& r : report.rows) {
    out << "seed," << r.scenario << ',' << r.kind << ',' << r.model << ',' << r.divergence << ','
        << num(r.lambda) << ',' << r.seed << ',' << num(r.smape) << ",," << num(r.mase) << ",,"
        << r.n_instances << ',' << num(r.runtime_ms, "%.3f") << '\n';
  }
  auto emit = [&](const char* tag, const SummaryRow& s) {
    out << tag << ',' << s.scenario << ",," << s.model << ',' << s.divergence << ','
        << num(s.lambda) << ',' << s.seeds << ',' << num(s.smape_mean) << ','
        << num(s.smape_std) << ',' << num(s.mase_mean) << ',' << num(s.mase_std) << ",,"
        << num(s.runtime_ms, "%.3f") << '\n';
  };
  for (const SummaryRow& s : report.summary()) emit("summary", s);
  for (const SummaryRow& s : report.scenario_average()) emit("average", s);
  if (!out) fail(ErrorKind::kIo, "failed writing report '" + path + "'");
}

std::string format_report_table(const MetricsReport& report) {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-44s %-10s %-10s %7s %5s %18s %18s %10s\n", "scenario", "model",
                "divergence", "lambda", "seeds", "smape", "mase", "ms/iter");
  os << buf;
  auto line = [&](const SummaryRow& s) {
    const std::string sm = num(s.smape_mean, "%.4f") + " +- " + num(s.smape_std, "%.4f");
    const std::string ma = is_na(s.mase_mean) || s.mase_mean > 1e4
                               ? std::string("NA")
                               : num(s.mase_mean, "%.4f") + " +- " + num(s.mase_std, "%.4f");
    std::snprintf(buf, sizeof buf, "%-44s %-10s %-10s %7.3g %5zu %18s %18s %10.2f\n",
                  s.scenario.c_str(), s.model.c_str(), s.divergence.c_str(), s.lambda, s.seeds,
                  sm.c_str(), ma.c_str(), s.runtime_ms);
    os << buf;
  };
  for (const SummaryRow& s : report.summary()) line(s);
  for (const SummaryRow& s : report.scenario_average()) line(s);
  return os.str();
}

std::vector<PairedRow> pair_rows(const std::vector<MetricsRow>& baseline,
                                 const std::vector<MetricsRow>& aligned) {
  std::vector<PairedRow> out;
  for (const MetricsRow& a : aligned) {
    for (const MetricsRow& b : baseline) {
      if (b.scenario != a.scenario || b.seed != a.seed) continue;
      out.push_back({a.scenario, a.seed, b.smape, a.smape});
      break;
    }
  }
  return out;
}

void write_paired_csv(const std::vector<PairedRow>& rows, const std::string& path) {
  std::ofstream out = open_out(path, "paired report");
  out << "scenario,seed,baseline_smape,aligned_smape,gap\n";
  for (const PairedRow& r : rows) {
    out << r.scenario << ',' << r.seed << ',' << num(r.baseline_smape) << ','
        << num(r.aligned_smape) << ',' << num(r.gap()) << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "failed writing paired report '" + path + "'");
}

void export_features(Forecaster& model, const std::vector<DomainDataset>& datasets, Split split,
                     std::size_t per_domain, Normalizer normalizer, const std::string& path) {
  if (!model.has_taps()) fail(ErrorKind::kConfig, "model variant has no feature taps to export");
  std::ofstream out = open_out(path, "feature file");
  const std::size_t gamma = model.config().gamma;
  out << "stack,domain,superdomain,instance";
  for (std::size_t j = 0; j < gamma; ++j) out << ",f" << j;
  out << '\n';
  for (const DomainDataset& ds : datasets) {
    if (ds.alpha != model.alpha()) {
      fail(ErrorKind::kConfig, "domain '" + ds.domain_id + "' alpha " + std::to_string(ds.alpha) +
                                   " does not match model alpha " + std::to_string(model.alpha()));
    }
    const auto& idx = ds.split(split);
    const std::size_t n = std::min(per_domain, idx.size());
    if (n == 0) continue;
    Tensor x({n, ds.alpha});
    for (std::size_t i = 0; i < n; ++i) {
      const auto& src = ds.instances[idx[i]].x;
      std::copy(src.begin(), src.end(), x.data() + i * ds.alpha);
    }
    Tape tape;
    const auto bound = model.bind(tape, GradMask::none());
    const ModelOutput o = model.forward(tape.constant(x), bound);
    for (std::size_t m = 0; m < o.taps.size(); ++m) {
      const Tensor z = normalize(o.taps[m].value(), normalizer);
      for (std::size_t i = 0; i < n; ++i) {
        out << m << ',' << ds.domain_id << ',' << ds.superdomain_id << ',' << idx[i];
        for (double v : z.row(i)) out << ',' << num(v);
        out << '\n';
      }
    }
  }
  if (!out) fail(ErrorKind::kIo, "failed writing feature file '" + path + "'");
}

}  // namespace fanbeats
