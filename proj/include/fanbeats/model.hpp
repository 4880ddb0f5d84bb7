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

// Doubly residual stacking forecasters and the linear baselines.
//
// Stack m holds one BlockParams shared by its L blocks. Block l sees x_{m,l},
// emits a forecast V_down W_down psi(x_{m,l}) and a backcast
// V_up W_up psi(x_{m,l}); the next block sees x_{m,l} minus that backcast.
// After the L-th block the residual is applied once more, so stack m+1 sees
// (r^m)^L of stack m's input. The stack's tap is the feature of its last
// block, psi^m(x_{m,L}) = psi^m((r^m)^(L-1)(x_{m,1})), which equals the
// explicit composition g^m computed by stack_feature().

#ifndef FANBEATS_MODEL_HPP
#define FANBEATS_MODEL_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fanbeats/autodiff.hpp"

namespace fanbeats {

enum class Variant { kGeneric, kInterpretable, kNHits, kNLinear, kDLinear };
enum class StackKind { kGeneric, kTrend, kSeasonality };

const char* to_string(Variant v);
Variant parse_variant(const std::string& name);
const char* to_string(StackKind k);

/// Parameter roles in the alternating optimisation: feature extractors,
/// forecast branches and backcast branches.
enum class ParamGroup { kFeature, kForecast, kBackcast };

struct ModelConfig {
  Variant variant = Variant::kGeneric;
  std::size_t stacks = 3;       // M
  std::size_t blocks = 4;       // L
  std::size_t layers = 4;       // FC layers in psi
  std::size_t alpha = 50;       // lookback
  std::size_t beta = 10;        // horizon
  std::size_t gamma = 512;      // feature width
  std::size_t nhits_kernel = 2;
  std::size_t trend_degree = 2;
  std::size_t harmonics = 2;
  std::size_t dlinear_window = 25;
  /// Feed stack m+1 with x_{m,L} instead of (r^m)^L(x_{m,1}).
  bool legacy_residual = false;
  /// Start every forecast projection W_down at zero so initial forecasts are 0.
  bool zero_forecast_head = true;
};

struct Dense {
  Tensor weight;  // out x in
  Tensor bias;    // [out]
};

struct BlockParams {
  StackKind kind = StackKind::kGeneric;
  std::vector<Dense> fc;
  Tensor proj_down;   // gamma_down x gamma
  Tensor proj_up;     // gamma_up x gamma
  Tensor basis_down;  // beta x gamma_down
  Tensor basis_up;    // alpha x gamma_up
  bool basis_trainable = false;
  std::size_t pool_kernel = 1;
};

struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  ParamGroup group = ParamGroup::kFeature;
  bool trainable = true;
};

struct ModelOutput {
  Var forecast;                              // B x beta
  std::vector<Var> taps;                     // per stack g^m(x), B x gamma
  std::vector<std::vector<Var>> block_taps;  // per stack, per block
};

/// Which parameter groups get requires_grad when bound to a tape.
struct GradMask {
  bool feature = false;
  bool forecast = false;
  bool backcast = false;
  bool wants(ParamGroup g) const {
    return g == ParamGroup::kFeature ? feature
                                     : (g == ParamGroup::kForecast ? forecast : backcast);
  }
  static GradMask none() { return {}; }
  static GradMask all() { return {true, true, true}; }
};

class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual const ModelConfig& config() const = 0;
  virtual std::vector<ParamRef> parameters() = 0;
  virtual std::unique_ptr<Forecaster> clone() const = 0;

  /// Creates one leaf per parameter, in parameters() order.
  std::vector<Var> bind(Tape& tape, GradMask mask);
  virtual ModelOutput forward(Var x, const std::vector<Var>& bound) const = 0;
  /// Gradient-free forecast.
  Tensor predict(const Tensor& x);

  std::size_t alpha() const { return config().alpha; }
  std::size_t beta() const { return config().beta; }
  bool has_taps() const {
    const Variant v = config().variant;
    return v != Variant::kNLinear && v != Variant::kDLinear;
  }
};

/// Tape handles for one stack's parameters.
struct BoundBlock {
  const BlockParams* params = nullptr;
  std::vector<Var> fc_weight, fc_bias;
  Var proj_down, proj_up, basis_down, basis_up;
};

struct BlockOutput {
  Var feature, backcast, forecast;
};

struct StackOutput {
  Var residual_out, forecast, tap_raw;
  std::vector<Var> block_taps;
};

class NBeatsModel final : public Forecaster {
 public:
  NBeatsModel(ModelConfig config, std::vector<BlockParams> stacks);

  /// Seeded Kaiming-uniform (fan-in) initialisation, zero biases.
  static NBeatsModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const override { return config_; }
  std::vector<ParamRef> parameters() override;
  std::unique_ptr<Forecaster> clone() const override {
    return std::make_unique<NBeatsModel>(*this);
  }
  ModelOutput forward(Var x, const std::vector<Var>& bound) const override;

  std::vector<BlockParams>& stacks() noexcept { return stacks_; }
  const std::vector<BlockParams>& stacks() const noexcept { return stacks_; }
  std::vector<BoundBlock> split(const std::vector<Var>& bound) const;

 private:
  ModelConfig config_;
  std::vector<BlockParams> stacks_;
};

BlockOutput block_forward(Var x, const BoundBlock& block);
/// block_forward with explicit pooling kernel; kernel must match the block's
/// pooled input width and may not exceed the lookback.
BlockOutput nhits_block_forward(Var x, const BoundBlock& block, std::size_t kernel);
StackOutput stack_forward(Var x_in, const BoundBlock& block, std::size_t blocks,
                          bool legacy_residual = false);
ModelOutput model_forward(Var x, const NBeatsModel& model,
                          const std::vector<Var>& bound);

/// psi^m applied after the residual operators of all earlier stacks and L-1
/// residual steps of stack m, built by explicit composition. `stack` is
/// zero-based.
Var stack_feature(Var x, const NBeatsModel& model, const std::vector<Var>& bound,
                  std::size_t stack);
/// Gradient-free convenience wrapper around stack_feature.
Tensor stack_feature(const Tensor& x, NBeatsModel& model, std::size_t stack);

// Residual operator r(x) = x - V_up W_up psi(x) and the feature map psi.
Var psi(Var x, const BoundBlock& block);
Var residual(Var x, const BoundBlock& block);

Tensor make_trend_basis(std::size_t horizon, std::size_t degree);
Tensor make_seasonality_basis(std::size_t horizon, std::size_t harmonics);
/// Linear interpolation from `knots` uniformly spaced values over [0, points-1]
/// (endpoints included) onto the integer grid 0..points-1, as a points x knots
/// matrix.
Tensor linear_interpolation_matrix(std::size_t points, std::size_t knots);
/// Max pooling along columns with window = stride = kernel; a short tail
/// window is padded on the right with zeros.
Var max_pool(Var x, std::size_t kernel);
std::size_t pooled_width(std::size_t width, std::size_t kernel);

/// NLinear: x - last value -> linear -> + last value.
/// DLinear: moving-average trend and remainder, one linear map each.
class LinearBaseline final : public Forecaster {
 public:
  LinearBaseline(ModelConfig config, std::vector<Dense> maps);
  static LinearBaseline create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const override { return config_; }
  std::vector<ParamRef> parameters() override;
  std::unique_ptr<Forecaster> clone() const override {
    return std::make_unique<LinearBaseline>(*this);
  }
  ModelOutput forward(Var x, const std::vector<Var>& bound) const override;

  std::vector<Dense>& maps() noexcept { return maps_; }

 private:
  ModelConfig config_;
  std::vector<Dense> maps_;  // nlinear: 1 map; dlinear: trend, remainder
};

/// Row t of the DLinear smoother averages `window` consecutive inputs
/// starting at clamp(t - (window-1)/2, 0, width - window).
Tensor moving_average_matrix(std::size_t width, std::size_t window);

Var linear_baseline_forward(Var x, const LinearBaseline& model,
                            const std::vector<Var>& bound);

std::unique_ptr<Forecaster> make_forecaster(const ModelConfig& config,
                                            std::uint64_t seed);

struct LipschitzConstants {
  std::vector<double> feature;   // C_n, product of FC spectral norms
  std::vector<double> backcast;  // C_{n,up} = ||V_up W_up||_2
};

LipschitzConstants lipschitz_constants(const NBeatsModel& model);

/// Upper bound on the Lipschitz constant of sigma o g^m:
/// c_sigma C_m (1 + C_m C_{m,up})^(L-1) prod_{n<m} (1 + C_n C_{n,up})^L.
double lipschitz_bound(const NBeatsModel& model, std::size_t stack, double c_sigma);
double lipschitz_bound(const LipschitzConstants& constants, std::size_t stack,
                       std::size_t blocks, double c_sigma, bool legacy_residual = false);

// Checkpoints: see docs/checkpoint_format.md.
void save_checkpoint(Forecaster& model, const std::string& path,
                     std::uint64_t seed = 0);
std::unique_ptr<Forecaster> load_checkpoint(const std::string& path,
                                            std::uint64_t* seed = nullptr);

}  // namespace fanbeats

#endif  // FANBEATS_MODEL_HPP
