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

// Forecast loss, Adam, the cyclic schedule and the alternating
// alignment/forecast training loop.

#ifndef FANBEATS_TRAIN_HPP
#define FANBEATS_TRAIN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "fanbeats/align.hpp"
#include "fanbeats/data.hpp"
#include "fanbeats/model.hpp"

namespace fanbeats {

struct TrainConfig {
  std::size_t batch_size = 4096;
  std::size_t iterations = 1000;
  double base_lr = 2e-7;
  double max_lr = 2e-5;
  std::size_t step_size_up = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;            // global-norm clip per sub-step, 0 = off
  std::size_t validate_every = 10;   // 0 = never
  std::size_t checkpoint_every = 0;  // 0 = never
  std::string checkpoint_path;       // written to <path>.iter<N>
  AlignmentConfig alignment;         // alignment.lambda is the weight
  SinkhornConfig sinkhorn;
};

/// Raises a config error on B < 2, negative lambda or bad schedule values.
void validate(const TrainConfig& cfg);

/// Mean over all elements of 2|y - yhat| / (|y| + |yhat|); terms with a
/// denominator below 1e-12 contribute 0.
Var smape_loss(Var pred, Var target);
double smape_loss(const Tensor& pred, const Tensor& target);

struct AdamState {
  std::vector<Tensor> m, v;
  std::uint64_t step = 0;
};

struct AdamHyper {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// Bias-corrected Adam descent on params[i] with grads[i]; a null gradient
/// counts as zero. The state is sized on first use. A non-finite gradient
/// raises a numeric error naming the parameter.
void adam_step(const std::vector<ParamRef>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr, const AdamHyper& hyper = {});

/// Triangular wave between base_lr and max_lr with half period step_size_up;
/// the amplitude halves after every full cycle.
double cyclic_lr(std::size_t iter, const TrainConfig& cfg);

struct TrainState {
  AdamState align;     // sub-step (a), feature parameters only
  AdamState forecast;  // sub-step (b), every trainable parameter
  std::size_t iteration = 0;
};

struct StepRecord {
  double forecast_loss = 0.0;
  double align_loss = 0.0;   // unweighted
  double total_loss = 0.0;   // forecast + lambda * align
  double lr = 0.0;
  double wall_ms = 0.0;
  double align_grad_norm = 0.0;
  int sinkhorn_warnings = 0;
};

/// Sub-step (a): lambda-weighted alignment loss, Adam on trainable feature
/// parameters only. Fills align_loss, align_grad_norm and sinkhorn_warnings.
void alignment_step(Forecaster& model, const std::vector<Batch>& batches,
                    const TrainConfig& cfg, TrainState& state, double lr, StepRecord& rec);

/// Sub-step (b): mean SMAPE over the domain batches, Adam on every trainable
/// parameter. Fills forecast_loss.
void forecast_step(Forecaster& model, const std::vector<Batch>& batches,
                   const TrainConfig& cfg, TrainState& state, double lr, StepRecord& rec);

/// One iteration: (a) alignment descent on the feature extractors, skipped when
/// lambda is 0 or the model has no taps; (b) re-forward and forecast descent on
/// every trainable parameter. NaN losses raise a numeric error tagged with the
/// iteration and sub-step.
StepRecord train_step(Forecaster& model, const std::vector<Batch>& batches,
                      const TrainConfig& cfg, TrainState& state, double lr);

struct TrainHistory {
  std::vector<std::size_t> iteration;
  std::vector<double> lr, forecast_loss, align_loss, total_loss, wall_ms;
  std::vector<std::size_t> val_iteration;
  std::vector<double> val_smape;
  int sinkhorn_warnings = 0;

  std::size_t size() const { return iteration.size(); }
};

/// Runs cfg.iterations steps, sampling B training instances per source with
/// a generator seeded by cfg.seed. Validation SMAPE over the sources' val
/// splits is recorded every validate_every iterations.
TrainHistory train_loop(Forecaster& model, const std::vector<DomainDataset>& sources,
                        const TrainConfig& cfg);

/// CSV with iteration,lr,forecast_loss,align_loss,total_loss,wall_ms.
void write_history_csv(const TrainHistory& history, const std::string& path);

}  // namespace fanbeats

#endif  // FANBEATS_TRAIN_HPP
