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

#include "fanbeats/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fanbeats/error.hpp"

namespace fanbeats {

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 2) fail(ErrorKind::kConfig, "batch_size must be >= 2");
  if (!(cfg.alignment.lambda >= 0.0) || !std::isfinite(cfg.alignment.lambda)) {
    fail(ErrorKind::kConfig, "lambda must be a finite value >= 0");
  }
  if (!(cfg.base_lr >= 0.0) || !(cfg.max_lr >= cfg.base_lr)) {
    fail(ErrorKind::kConfig, "learning rates need 0 <= base_lr <= max_lr");
  }
  if (cfg.step_size_up == 0) fail(ErrorKind::kConfig, "step_size_up must be >= 1");
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) ||
      !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0) || !(cfg.adam_eps > 0.0)) {
    fail(ErrorKind::kConfig, "Adam needs beta1, beta2 in [0, 1) and eps > 0");
  }
  if (!(cfg.grad_clip >= 0.0)) fail(ErrorKind::kConfig, "grad_clip must be >= 0");
  if (cfg.alignment.divergence == Divergence::kSinkhorn && !(cfg.sinkhorn.epsilon > 0.0)) {
    fail(ErrorKind::kConfig, "sinkhorn.epsilon must be > 0");
  }
}

// ---------------------------------------------------------------------------
// SMAPE

namespace {

constexpr double kSmapeGuard = 1e-12;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_pair(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) {
    fail(ErrorKind::kDimension, "smape: prediction " + shape_string(pred.shape()) +
                                    " vs target " + shape_string(target.shape()));
  }
}

}  // namespace

double smape_loss(const Tensor& pred, const Tensor& target) {
  check_pair(pred, target);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double den = std::abs(target[i]) + std::abs(pred[i]);
    if (den < kSmapeGuard) continue;
    sum += 2.0 * std::abs(target[i] - pred[i]) / den;
  }
  return sum / static_cast<double>(pred.size());
}

Var smape_loss(Var pred, Var target) {
  if (!pred.valid() || !target.valid() || pred.tape() != target.tape()) {
    fail(ErrorKind::kNoGraph, "smape_loss: inputs are not on one tape");
  }
  check_pair(pred.value(), target.value());
  const NodeId ip = pred.id(), it = target.id();
  return pred.tape()->record(
      "smape_loss", Tensor::scalar(smape_loss(pred.value(), target.value())), {pred, target},
      [ip, it](Tape& tp, NodeId, const Tensor& go) {
        const Tensor& p = tp.value(ip);
        const Tensor& y = tp.value(it);
        const double s = go.item() / static_cast<double>(p.size());
        Tensor* gp = tp.grad_slot(ip);
        Tensor* gy = tp.grad_slot(it);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double den = std::abs(y[i]) + std::abs(p[i]);
          if (den < kSmapeGuard) continue;
          const double u = y[i] - p[i];
          const double au = std::abs(u);
          const double su = sign(u);
          if (gp) (*gp)[i] += 2.0 * s * (-su / den - au * sign(p[i]) / (den * den));
          if (gy) (*gy)[i] += 2.0 * s * (su / den - au * sign(y[i]) / (den * den));
        }
      });
}

// ---------------------------------------------------------------------------
// Adam and schedule

void adam_step(const std::vector<ParamRef>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr, const AdamHyper& hyper) {
  if (params.size() != grads.size()) {
    fail(ErrorKind::kSize, "adam_step: " + std::to_string(params.size()) + " parameters but " +
                               std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty() && state.step == 0) {
    for (const ParamRef& p : params) {
      state.m.push_back(Tensor::zeros_like(*p.value));
      state.v.push_back(Tensor::zeros_like(*p.value));
    }
  }
  if (state.m.size() != params.size()) {
    fail(ErrorKind::kSize, "adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                               " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!state.m[i].same_shape(*params[i].value)) {
      fail(ErrorKind::kDimension, "adam_step: state for '" + params[i].name + "' has shape " +
                                      shape_string(state.m[i].shape()) + ", parameter has " +
                                      shape_string(params[i].value->shape()));
    }
    if (grads[i] && !grads[i]->same_shape(*params[i].value)) {
      fail(ErrorKind::kDimension, "adam_step: gradient for '" + params[i].name + "' has shape " +
                                      shape_string(grads[i]->shape()));
    }
    if (grads[i] && !grads[i]->all_finite()) {
      fail(ErrorKind::kNumeric, "non-finite gradient for parameter '" + params[i].name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].value;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = grads[i] ? (*grads[i])[k] : 0.0;
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
      const double step = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + hyper.eps);
      if (step != 0.0) w[k] -= step;
    }
  }
}

double cyclic_lr(std::size_t iter, const TrainConfig& cfg) {
  const double s = static_cast<double>(cfg.step_size_up);
  const double it = static_cast<double>(iter);
  const double cycle = std::floor(1.0 + it / (2.0 * s));
  const double x = std::abs(it / s - 2.0 * cycle + 1.0);
  const double amp = (cfg.max_lr - cfg.base_lr) * std::max(0.0, 1.0 - x);
  return cfg.base_lr + amp / std::pow(2.0, cycle - 1.0);
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Selected {
  std::vector<ParamRef> params;
  std::vector<const Tensor*> grads;
};

Selected select(const std::vector<ParamRef>& params, const std::vector<Var>& bound,
                const Gradients& grads, bool feature_only) {
  Selected out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    if (feature_only && params[i].group != ParamGroup::kFeature) continue;
    out.params.push_back(params[i]);
    out.grads.push_back(grads.contains(bound[i]) ? &grads[bound[i]] : nullptr);
  }
  return out;
}

double global_norm(const Selected& s) {
  double sq = 0.0;
  for (const Tensor* g : s.grads)
    if (g)
      for (double v : g->values()) sq += v * v;
  return std::sqrt(sq);
}

// Scaled copies when the global norm exceeds the clip.
std::vector<Tensor> clip(Selected& s, double max_norm, double norm) {
  std::vector<Tensor> store;
  if (max_norm <= 0.0 || norm <= max_norm) return store;
  store.reserve(s.grads.size());
  for (const Tensor*& g : s.grads) {
    if (!g) continue;
    store.push_back(*g);
    store.back() *= max_norm / norm;
    g = &store.back();
  }
  return store;
}

[[noreturn]] void tagged(const Error& e, std::size_t iteration, const char* sub_step) {
  throw Error(e.kind(), "iteration " + std::to_string(iteration) + " sub-step " + sub_step +
                            ": " + e.what());
}

void check_loss(double v, const char* what) {
  if (!std::isfinite(v)) fail(ErrorKind::kNumeric, std::string(what) + " loss is not finite");
}

}  // namespace

namespace {

void check_batches(const Forecaster& model, const std::vector<Batch>& batches) {
  if (batches.empty()) fail(ErrorKind::kConfig, "train_step needs at least one domain batch");
  for (const Batch& b : batches) {
    if (b.x.rank() != 2 || b.x.cols() != model.alpha() || b.y.rank() != 2 ||
        b.y.cols() != model.beta() || b.x.rows() != b.y.rows()) {
      fail(ErrorKind::kDimension, "train_step: batch x " + shape_string(b.x.shape()) + ", y " +
                                      shape_string(b.y.shape()) + " do not match the model");
    }
  }
}

}  // namespace

void alignment_step(Forecaster& model, const std::vector<Batch>& batches,
                    const TrainConfig& cfg, TrainState& state, double lr, StepRecord& rec) {
  check_batches(model, batches);
  try {
    Tape tape;
    const auto bound = model.bind(tape, GradMask{true, false, false});
    std::vector<ModelOutput> outs;
    for (const Batch& b : batches) outs.push_back(model.forward(tape.constant(b.x), bound));
    AlignmentResult r = alignment_loss(alignment_units(outs, cfg.alignment.granularity),
                                       cfg.alignment, cfg.sinkhorn);
    rec.align_loss = r.loss.value().item();
    rec.sinkhorn_warnings = r.sinkhorn_warnings;
    check_loss(rec.align_loss, "alignment");
    Var weighted = scale(r.loss, cfg.alignment.lambda);
    if (weighted.requires_grad()) {
      const Gradients grads = tape.backward(weighted);
      const auto params = model.parameters();
      Selected sel = select(params, bound, grads, true);
      rec.align_grad_norm = global_norm(sel);
      auto kept = clip(sel, cfg.grad_clip, rec.align_grad_norm);
      adam_step(sel.params, sel.grads, state.align, lr,
                AdamHyper{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    }
  } catch (const Error& e) {
    tagged(e, state.iteration, "align");
  }
}

void forecast_step(Forecaster& model, const std::vector<Batch>& batches,
                   const TrainConfig& cfg, TrainState& state, double lr, StepRecord& rec) {
  check_batches(model, batches);
  try {
    Tape tape;
    const auto bound = model.bind(tape, GradMask::all());
    Var total;
    for (const Batch& b : batches) {
      Var l = smape_loss(model.forward(tape.constant(b.x), bound).forecast, tape.constant(b.y));
      total = total.valid() ? add(total, l) : l;
    }
    Var loss = scale(total, 1.0 / static_cast<double>(batches.size()));
    rec.forecast_loss = loss.value().item();
    check_loss(rec.forecast_loss, "forecast");
    if (loss.requires_grad()) {
      const Gradients grads = tape.backward(loss);
      const auto params = model.parameters();
      Selected sel = select(params, bound, grads, false);
      auto kept = clip(sel, cfg.grad_clip, global_norm(sel));
      adam_step(sel.params, sel.grads, state.forecast, lr,
                AdamHyper{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    }
  } catch (const Error& e) {
    tagged(e, state.iteration, "forecast");
  }
}

StepRecord train_step(Forecaster& model, const std::vector<Batch>& batches,
                      const TrainConfig& cfg, TrainState& state, double lr) {
  check_batches(model, batches);
  const auto start = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.lr = lr;
  if (cfg.alignment.lambda > 0.0 && model.has_taps()) {
    alignment_step(model, batches, cfg, state, lr, rec);
  }
  forecast_step(model, batches, cfg, state, lr, rec);
  rec.total_loss = rec.forecast_loss + cfg.alignment.lambda * rec.align_loss;
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  ++state.iteration;
  return rec;
}

TrainHistory train_loop(Forecaster& model, const std::vector<DomainDataset>& sources,
                        const TrainConfig& cfg) {
  validate(cfg);
  if (sources.empty()) fail(ErrorKind::kConfig, "train_loop needs at least one source domain");
  for (const DomainDataset& d : sources) {
    if (d.train.empty()) {
      fail(ErrorKind::kConfig, "source domain '" + d.domain_id + "' has an empty train split");
    }
    if (d.alpha != model.alpha() || d.beta != model.beta()) {
      fail(ErrorKind::kConfig, "source domain '" + d.domain_id + "' has windows " +
                                   std::to_string(d.alpha) + "+" + std::to_string(d.beta) +
                                   ", model expects " + std::to_string(model.alpha()) + "+" +
                                   std::to_string(model.beta()));
    }
  }
  TrainHistory h;
  TrainState state;
  std::mt19937_64 rng(cfg.seed);
  std::vector<Batch> val;
  for (const DomainDataset& d : sources)
    if (!d.val.empty()) val.push_back(split_batch(d, Split::kVal));
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<Batch> batches;
    for (const DomainDataset& d : sources)
      batches.push_back(sample_batch(d, Split::kTrain, cfg.batch_size, rng));
    const StepRecord rec = train_step(model, batches, cfg, state, cyclic_lr(it, cfg));
    h.iteration.push_back(it);
    h.lr.push_back(rec.lr);
    h.forecast_loss.push_back(rec.forecast_loss);
    h.align_loss.push_back(rec.align_loss);
    h.total_loss.push_back(rec.total_loss);
    h.wall_ms.push_back(rec.wall_ms);
    h.sinkhorn_warnings += rec.sinkhorn_warnings;
    if (cfg.validate_every > 0 && (it + 1) % cfg.validate_every == 0 && !val.empty()) {
      double s = 0.0;
      for (const Batch& b : val) s += smape_loss(model.predict(b.x), b.y);
      h.val_iteration.push_back(it);
      h.val_smape.push_back(s / static_cast<double>(val.size()));
    }
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        (it + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(model, cfg.checkpoint_path + ".iter" + std::to_string(it + 1), cfg.seed);
    }
  }
  return h;
}

void write_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write history file '" + path + "'");
  out << "iteration,lr,forecast_loss,align_loss,total_loss,wall_ms\n";
  char buf[256];
  for (std::size_t i = 0; i < h.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.3f\n", h.iteration[i], h.lr[i],
                  h.forecast_loss[i], h.align_loss[i], h.total_loss[i], h.wall_ms[i]);
    out << buf;
  }
  if (!out) fail(ErrorKind::kIo, "failed writing history file '" + path + "'");
}

}  // namespace fanbeats
