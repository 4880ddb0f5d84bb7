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

#include "fanbeats/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fanbeats/error.hpp"

namespace fanbeats {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kGeneric: return "generic";
    case Variant::kInterpretable: return "interpretable";
    case Variant::kNHits: return "nhits";
    case Variant::kNLinear: return "nlinear";
    case Variant::kDLinear: return "dlinear";
  }
  return "generic";
}

Variant parse_variant(const std::string& name) {
  if (name == "generic") return Variant::kGeneric;
  if (name == "interpretable") return Variant::kInterpretable;
  if (name == "nhits") return Variant::kNHits;
  if (name == "nlinear") return Variant::kNLinear;
  if (name == "dlinear") return Variant::kDLinear;
  fail(ErrorKind::kConfig, "unknown model variant '" + name + "'");
}

const char* to_string(StackKind k) {
  switch (k) {
    case StackKind::kGeneric: return "generic";
    case StackKind::kTrend: return "trend";
    case StackKind::kSeasonality: return "seasonality";
  }
  return "generic";
}

// ---------------------------------------------------------------------------
// Forecaster

std::vector<Var> Forecaster::bind(Tape& tape, GradMask mask) {
  std::vector<Var> out;
  for (const ParamRef& p : parameters()) {
    out.push_back(tape.leaf(*p.value, p.trainable && mask.wants(p.group)));
  }
  return out;
}

Tensor Forecaster::predict(const Tensor& x) {
  Tape tape;
  const auto bound = bind(tape, GradMask::none());
  return forward(tape.constant(x), bound).forecast.value();
}

// ---------------------------------------------------------------------------
// Bases and resampling

Tensor make_trend_basis(std::size_t horizon, std::size_t degree) {
  if (horizon == 0) fail(ErrorKind::kConfig, "trend basis needs horizon >= 1");
  Tensor v(Shape{horizon, degree + 1});
  for (std::size_t i = 0; i < horizon; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(horizon);
    double p = 1.0;
    for (std::size_t j = 0; j <= degree; ++j) {
      v(i, j) = p;
      p *= t;
    }
  }
  return v;
}

Tensor make_seasonality_basis(std::size_t horizon, std::size_t harmonics) {
  if (horizon == 0 || harmonics == 0) {
    fail(ErrorKind::kConfig, "seasonality basis needs horizon >= 1 and harmonics >= 1");
  }
  Tensor v(Shape{horizon, 2 * harmonics + 1});
  for (std::size_t i = 0; i < horizon; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(horizon);
    v(i, 0) = 1.0;
    for (std::size_t k = 1; k <= harmonics; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) * t;
      v(i, k) = std::cos(angle);
      v(i, harmonics + k) = std::sin(angle);
    }
  }
  return v;
}

Tensor linear_interpolation_matrix(std::size_t points, std::size_t knots) {
  if (points == 0 || knots == 0) {
    fail(ErrorKind::kConfig, "interpolation needs at least one point and one knot");
  }
  Tensor m(Shape{points, knots});
  if (knots == 1) {
    for (std::size_t i = 0; i < points; ++i) m(i, 0) = 1.0;
    return m;
  }
  const double spacing =
      static_cast<double>(points - 1) / static_cast<double>(knots - 1);
  for (std::size_t i = 0; i < points; ++i) {
    const double pos = static_cast<double>(i) / spacing;
    std::size_t k = static_cast<std::size_t>(std::floor(pos));
    if (k >= knots - 1) k = knots - 2;
    const double w = pos - static_cast<double>(k);
    m(i, k) += 1.0 - w;
    m(i, k + 1) += w;
  }
  return m;
}

std::size_t pooled_width(std::size_t width, std::size_t kernel) {
  return (width + kernel - 1) / kernel;
}

Var max_pool(Var x, std::size_t kernel) {
  if (kernel == 0) fail(ErrorKind::kConfig, "pooling kernel must be >= 1");
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), w = xv.cols();
  if (kernel > w) {
    fail(ErrorKind::kConfig, "pooling kernel " + std::to_string(kernel) +
                                 " exceeds input width " + std::to_string(w));
  }
  const std::size_t pw = pooled_width(w, kernel);
  Tensor out(Shape{n, pw});
  // argmax[i*pw+j] == w marks the zero padding winning.
  std::vector<std::size_t> argmax(n * pw);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < pw; ++j) {
      const std::size_t begin = j * kernel, end = std::min(begin + kernel, w);
      std::size_t best = begin;
      for (std::size_t c = begin + 1; c < end; ++c)
        if (xv(i, c) > xv(i, best)) best = c;
      double value = xv(i, best);
      if (end - begin < kernel && value < 0.0) {
        value = 0.0;
        best = w;
      }
      out(i, j) = value;
      argmax[i * pw + j] = best;
    }
  }
  const NodeId ix = x.id();
  return x.tape()->record(
      "max_pool", std::move(out), {x},
      [ix, n, pw, argmax = std::move(argmax)](Tape& tp, NodeId, const Tensor& g) {
        Tensor* gx = tp.grad_slot(ix);
        if (!gx) return;
        const std::size_t w = gx->cols();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < pw; ++j) {
            const std::size_t c = argmax[i * pw + j];
            if (c < w) (*gx)(i, c) += g(i, j);
          }
      });
}

// ---------------------------------------------------------------------------
// N-BEATS

namespace {

Dense make_dense(std::size_t in, std::size_t out, double gain, std::mt19937_64& rng) {
  Dense d{Tensor(Shape{out, in}), Tensor(Shape{out})};
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : d.weight.values()) v = dist(rng);
  return d;
}

StackKind stack_kind_for(Variant variant, std::size_t m) {
  if (variant != Variant::kInterpretable) return StackKind::kGeneric;
  return m == 0 ? StackKind::kTrend : StackKind::kSeasonality;
}

constexpr double kReluGain = std::numbers::sqrt2;

}  // namespace

NBeatsModel::NBeatsModel(ModelConfig config, std::vector<BlockParams> stacks)
    : config_(config), stacks_(std::move(stacks)) {
  if (config_.stacks == 0 || config_.blocks == 0 || config_.layers == 0) {
    fail(ErrorKind::kConfig, "model needs M >= 1, L >= 1 and at least one FC layer");
  }
  if (stacks_.size() != config_.stacks) {
    fail(ErrorKind::kConfig, "expected " + std::to_string(config_.stacks) +
                                 " stacks, got " + std::to_string(stacks_.size()));
  }
  for (std::size_t m = 0; m < stacks_.size(); ++m) {
    const BlockParams& p = stacks_[m];
    const std::size_t in = pooled_width(config_.alpha, p.pool_kernel);
    const std::string where = "stack " + std::to_string(m) + ": ";
    if (p.fc.size() != config_.layers) fail(ErrorKind::kConfig, where + "wrong FC depth");
    for (std::size_t n = 0; n < p.fc.size(); ++n) {
      const std::size_t expect_in = n == 0 ? in : config_.gamma;
      if (p.fc[n].weight.rows() != config_.gamma || p.fc[n].weight.cols() != expect_in ||
          p.fc[n].bias.size() != config_.gamma) {
        fail(ErrorKind::kDimension, where + "FC layer " + std::to_string(n) +
                                        " has shape " + shape_string(p.fc[n].weight.shape()));
      }
    }
    if (p.proj_down.cols() != config_.gamma || p.proj_up.cols() != config_.gamma ||
        p.basis_down.rows() != config_.beta || p.basis_up.rows() != config_.alpha ||
        p.basis_down.cols() != p.proj_down.rows() || p.basis_up.cols() != p.proj_up.rows()) {
      fail(ErrorKind::kDimension, where + "projection/basis shapes do not chain: W_down" +
                                      shape_string(p.proj_down.shape()) + " V_down" +
                                      shape_string(p.basis_down.shape()) + " W_up" +
                                      shape_string(p.proj_up.shape()) + " V_up" +
                                      shape_string(p.basis_up.shape()));
    }
  }
}

NBeatsModel NBeatsModel::create(const ModelConfig& config, std::uint64_t seed) {
  if (config.variant == Variant::kNLinear || config.variant == Variant::kDLinear) {
    fail(ErrorKind::kConfig, "linear baselines are built by LinearBaseline::create");
  }
  if (config.alpha == 0 || config.beta == 0 || config.gamma == 0) {
    fail(ErrorKind::kConfig, "alpha, beta and gamma must be positive");
  }
  const std::size_t kernel = config.variant == Variant::kNHits ? config.nhits_kernel : 1;
  if (kernel == 0 || kernel > config.alpha) {
    fail(ErrorKind::kConfig, "N-HiTS kernel " + std::to_string(kernel) +
                                 " must lie in [1, alpha]");
  }
  std::mt19937_64 rng(seed);
  std::vector<BlockParams> stacks;
  for (std::size_t m = 0; m < config.stacks; ++m) {
    BlockParams p;
    p.kind = stack_kind_for(config.variant, m);
    p.pool_kernel = kernel;
    const std::size_t in = pooled_width(config.alpha, kernel);
    for (std::size_t n = 0; n < config.layers; ++n) {
      p.fc.push_back(make_dense(n == 0 ? in : config.gamma, config.gamma, kReluGain, rng));
    }
    switch (p.kind) {
      case StackKind::kTrend:
        p.basis_down = make_trend_basis(config.beta, config.trend_degree);
        p.basis_up = make_trend_basis(config.alpha, config.trend_degree);
        break;
      case StackKind::kSeasonality:
        p.basis_down = make_seasonality_basis(config.beta, config.harmonics);
        p.basis_up = make_seasonality_basis(config.alpha, config.harmonics);
        break;
      case StackKind::kGeneric:
        if (kernel > 1) {
          p.basis_down = linear_interpolation_matrix(config.beta, pooled_width(config.beta, kernel));
          p.basis_up = linear_interpolation_matrix(config.alpha, in);
        } else {
          p.basis_down = Tensor::identity(config.beta);
          p.basis_up = Tensor::identity(config.alpha);
        }
        break;
    }
    p.proj_down = make_dense(config.gamma, p.basis_down.cols(), 1.0, rng).weight;
    if (config.zero_forecast_head) p.proj_down = Tensor::zeros_like(p.proj_down);
    p.proj_up = make_dense(config.gamma, p.basis_up.cols(), 1.0, rng).weight;
    stacks.push_back(std::move(p));
  }
  return NBeatsModel(config, std::move(stacks));
}

std::vector<ParamRef> NBeatsModel::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t m = 0; m < stacks_.size(); ++m) {
    BlockParams& p = stacks_[m];
    const std::string prefix = "stack" + std::to_string(m) + ".";
    for (std::size_t n = 0; n < p.fc.size(); ++n) {
      const std::string fc = prefix + "fc" + std::to_string(n);
      out.push_back({fc + ".weight", &p.fc[n].weight, ParamGroup::kFeature, true});
      out.push_back({fc + ".bias", &p.fc[n].bias, ParamGroup::kFeature, true});
    }
    out.push_back({prefix + "proj_down", &p.proj_down, ParamGroup::kForecast, true});
    out.push_back({prefix + "proj_up", &p.proj_up, ParamGroup::kBackcast, true});
    out.push_back({prefix + "basis_down", &p.basis_down, ParamGroup::kForecast,
                   p.basis_trainable});
    out.push_back({prefix + "basis_up", &p.basis_up, ParamGroup::kBackcast,
                   p.basis_trainable});
  }
  return out;
}

std::vector<BoundBlock> NBeatsModel::split(const std::vector<Var>& bound) const {
  const std::size_t per_stack = 2 * config_.layers + 4;
  if (bound.size() != per_stack * stacks_.size()) {
    fail(ErrorKind::kConfig, "bound parameter list does not match the model");
  }
  std::vector<BoundBlock> out(stacks_.size());
  for (std::size_t m = 0; m < stacks_.size(); ++m) {
    const Var* base = bound.data() + m * per_stack;
    BoundBlock& b = out[m];
    b.params = &stacks_[m];
    for (std::size_t n = 0; n < config_.layers; ++n) {
      b.fc_weight.push_back(base[2 * n]);
      b.fc_bias.push_back(base[2 * n + 1]);
    }
    const Var* tail = base + 2 * config_.layers;
    b.proj_down = tail[0];
    b.proj_up = tail[1];
    b.basis_down = tail[2];
    b.basis_up = tail[3];
  }
  return out;
}

ModelOutput NBeatsModel::forward(Var x, const std::vector<Var>& bound) const {
  return model_forward(x, *this, bound);
}

Var psi(Var x, const BoundBlock& block) {
  Var h = block.params->pool_kernel > 1 ? max_pool(x, block.params->pool_kernel) : x;
  for (std::size_t n = 0; n < block.fc_weight.size(); ++n) {
    h = relu(linear(h, block.fc_weight[n], block.fc_bias[n]));
  }
  return h;
}

namespace {

Var backcast_of(Var feature, const BoundBlock& block) {
  return matmul_nt(matmul_nt(feature, block.proj_up), block.basis_up);
}

Var forecast_of(Var feature, const BoundBlock& block) {
  return matmul_nt(matmul_nt(feature, block.proj_down), block.basis_down);
}

void check_width(Var x, const BoundBlock& block) {
  const std::size_t alpha = block.params->basis_up.rows();
  if (x.value().cols() != alpha) {
    fail(ErrorKind::kDimension, "input width " + std::to_string(x.value().cols()) +
                                    " does not match lookback " + std::to_string(alpha) +
                                    " (input shape " + shape_string(x.value().shape()) + ")");
  }
}

}  // namespace

Var residual(Var x, const BoundBlock& block) {
  return sub(x, backcast_of(psi(x, block), block));
}

BlockOutput block_forward(Var x, const BoundBlock& block) {
  check_width(x, block);
  BlockOutput out;
  out.feature = psi(x, block);
  out.forecast = forecast_of(out.feature, block);
  out.backcast = backcast_of(out.feature, block);
  return out;
}

BlockOutput nhits_block_forward(Var x, const BoundBlock& block, std::size_t kernel) {
  const std::size_t alpha = block.params->basis_up.rows();
  if (kernel == 0 || kernel > alpha) {
    fail(ErrorKind::kConfig, "N-HiTS kernel " + std::to_string(kernel) +
                                 " must lie in [1, " + std::to_string(alpha) + "]");
  }
  if (kernel != block.params->pool_kernel) {
    fail(ErrorKind::kConfig, "block was built for pooling kernel " +
                                 std::to_string(block.params->pool_kernel));
  }
  return block_forward(x, block);
}

StackOutput stack_forward(Var x_in, const BoundBlock& block, std::size_t blocks,
                          bool legacy_residual) {
  if (blocks == 0) fail(ErrorKind::kConfig, "a stack needs at least one block");
  StackOutput out;
  Var x = x_in;
  for (std::size_t l = 0; l < blocks; ++l) {
    BlockOutput b = block_forward(x, block);
    out.block_taps.push_back(b.feature);
    out.forecast = l == 0 ? b.forecast : add(out.forecast, b.forecast);
    if (l + 1 < blocks || !legacy_residual) x = sub(x, b.backcast);
  }
  out.tap_raw = out.block_taps.back();
  out.residual_out = x;
  return out;
}

ModelOutput model_forward(Var x, const NBeatsModel& model,
                          const std::vector<Var>& bound) {
  const auto blocks = model.split(bound);
  const ModelConfig& cfg = model.config();
  ModelOutput out;
  Var input = x;
  for (std::size_t m = 0; m < blocks.size(); ++m) {
    StackOutput s = stack_forward(input, blocks[m], cfg.blocks, cfg.legacy_residual);
    out.forecast = m == 0 ? s.forecast : add(out.forecast, s.forecast);
    out.taps.push_back(s.tap_raw);
    out.block_taps.push_back(std::move(s.block_taps));
    input = s.residual_out;
  }
  return out;
}

Var stack_feature(Var x, const NBeatsModel& model, const std::vector<Var>& bound,
                  std::size_t stack) {
  const ModelConfig& cfg = model.config();
  if (stack >= cfg.stacks) {
    fail(ErrorKind::kConfig, "stack index " + std::to_string(stack) + " out of range [0, " +
                                 std::to_string(cfg.stacks) + ")");
  }
  const auto blocks = model.split(bound);
  check_width(x, blocks[0]);
  const std::size_t full = cfg.legacy_residual ? cfg.blocks - 1 : cfg.blocks;
  Var h = x;
  for (std::size_t n = 0; n < stack; ++n)
    for (std::size_t l = 0; l < full; ++l) h = residual(h, blocks[n]);
  for (std::size_t l = 0; l + 1 < cfg.blocks; ++l) h = residual(h, blocks[stack]);
  return psi(h, blocks[stack]);
}

Tensor stack_feature(const Tensor& x, NBeatsModel& model, std::size_t stack) {
  Tape tape;
  const auto bound = model.bind(tape, GradMask::none());
  return stack_feature(tape.constant(x), model, bound, stack).value();
}

// ---------------------------------------------------------------------------
// Linear baselines

Tensor moving_average_matrix(std::size_t width, std::size_t window) {
  if (window == 0 || window > width) {
    fail(ErrorKind::kConfig, "moving-average window " + std::to_string(window) +
                                 " must lie in [1, " + std::to_string(width) + "]");
  }
  Tensor a(Shape{width, width});
  const double w = 1.0 / static_cast<double>(window);
  for (std::size_t t = 0; t < width; ++t) {
    const std::ptrdiff_t centred =
        static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>((window - 1) / 2);
    const std::size_t start = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
        centred, 0, static_cast<std::ptrdiff_t>(width - window)));
    for (std::size_t k = start; k < start + window; ++k) a(t, k) = w;
  }
  return a;
}

LinearBaseline::LinearBaseline(ModelConfig config, std::vector<Dense> maps)
    : config_(config), maps_(std::move(maps)) {
  const std::size_t expect = config_.variant == Variant::kDLinear ? 2 : 1;
  if (config_.variant != Variant::kNLinear && config_.variant != Variant::kDLinear) {
    fail(ErrorKind::kConfig, "LinearBaseline needs variant nlinear or dlinear");
  }
  if (maps_.size() != expect) fail(ErrorKind::kConfig, "wrong number of linear maps");
  for (const Dense& d : maps_) {
    if (d.weight.rows() != config_.beta || d.weight.cols() != config_.alpha ||
        d.bias.size() != config_.beta) {
      fail(ErrorKind::kDimension, "linear map shape " + shape_string(d.weight.shape()) +
                                      " does not match alpha/beta");
    }
  }
  if (config_.variant == Variant::kDLinear) {
    moving_average_matrix(config_.alpha, config_.dlinear_window);  // validates window
  }
}

LinearBaseline LinearBaseline::create(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Dense> maps;
  const std::size_t count = config.variant == Variant::kDLinear ? 2 : 1;
  for (std::size_t i = 0; i < count; ++i)
    maps.push_back(make_dense(config.alpha, config.beta, 1.0, rng));
  return LinearBaseline(config, std::move(maps));
}

std::vector<ParamRef> LinearBaseline::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < maps_.size(); ++i) {
    const std::string name = "linear" + std::to_string(i);
    out.push_back({name + ".weight", &maps_[i].weight, ParamGroup::kForecast, true});
    out.push_back({name + ".bias", &maps_[i].bias, ParamGroup::kForecast, true});
  }
  return out;
}

Var linear_baseline_forward(Var x, const LinearBaseline& model,
                            const std::vector<Var>& bound) {
  const ModelConfig& cfg = model.config();
  if (x.value().cols() != cfg.alpha) {
    fail(ErrorKind::kDimension, "input width " + std::to_string(x.value().cols()) +
                                    " does not match lookback " + std::to_string(cfg.alpha));
  }
  Tape& tape = *x.tape();
  const std::size_t a = cfg.alpha, b = cfg.beta;
  if (cfg.variant == Variant::kNLinear) {
    // (x P)_j = x_j - x_last;  (x E)_j = x_last
    Tensor p = Tensor::identity(a);
    for (std::size_t j = 0; j < a; ++j) p(a - 1, j) -= 1.0;
    Tensor e(Shape{a, b});
    for (std::size_t j = 0; j < b; ++j) e(a - 1, j) = 1.0;
    Var centred = matmul(x, tape.constant(std::move(p)));
    return add(linear(centred, bound[0], bound[1]), matmul(x, tape.constant(std::move(e))));
  }
  Var trend = matmul_nt(x, tape.constant(moving_average_matrix(a, cfg.dlinear_window)));
  Var remainder = sub(x, trend);
  return add(linear(trend, bound[0], bound[1]), linear(remainder, bound[2], bound[3]));
}

ModelOutput LinearBaseline::forward(Var x, const std::vector<Var>& bound) const {
  ModelOutput out;
  out.forecast = linear_baseline_forward(x, *this, bound);
  return out;
}

std::unique_ptr<Forecaster> make_forecaster(const ModelConfig& config,
                                            std::uint64_t seed) {
  if (config.variant == Variant::kNLinear || config.variant == Variant::kDLinear) {
    return std::make_unique<LinearBaseline>(LinearBaseline::create(config, seed));
  }
  return std::make_unique<NBeatsModel>(NBeatsModel::create(config, seed));
}

// ---------------------------------------------------------------------------
// Lipschitz constants

LipschitzConstants lipschitz_constants(const NBeatsModel& model) {
  LipschitzConstants c;
  for (const BlockParams& p : model.stacks()) {
    double feature = 1.0;
    for (const Dense& d : p.fc) {
      if (!d.weight.all_finite() || !d.bias.all_finite()) {
        fail(ErrorKind::kNumeric, "non-finite weights in Lipschitz computation");
      }
      feature *= spectral_norm(d.weight);
    }
    c.feature.push_back(feature);
    c.backcast.push_back(spectral_norm(matmul(p.basis_up, p.proj_up)));
  }
  return c;
}

double lipschitz_bound(const LipschitzConstants& constants, std::size_t stack,
                       std::size_t blocks, double c_sigma, bool legacy_residual) {
  if (stack >= constants.feature.size()) {
    fail(ErrorKind::kConfig, "stack index " + std::to_string(stack) + " out of range");
  }
  const double cm = constants.feature[stack];
  double bound = c_sigma * cm *
                 std::pow(1.0 + cm * constants.backcast[stack], static_cast<double>(blocks - 1));
  const double full = static_cast<double>(legacy_residual ? blocks - 1 : blocks);
  for (std::size_t n = 0; n < stack; ++n) {
    bound *= std::pow(1.0 + constants.feature[n] * constants.backcast[n], full);
  }
  return bound;
}

double lipschitz_bound(const NBeatsModel& model, std::size_t stack, double c_sigma) {
  return lipschitz_bound(lipschitz_constants(model), stack, model.config().blocks, c_sigma,
                         model.config().legacy_residual);
}

}  // namespace fanbeats
