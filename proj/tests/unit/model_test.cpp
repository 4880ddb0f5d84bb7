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

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fanbeats/error.hpp"
#include "fanbeats/model.hpp"

namespace fanbeats {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.values()) v = d(rng);
  return t;
}

ModelConfig small_config(std::size_t m, std::size_t l, std::size_t alpha, std::size_t gamma,
                         std::size_t beta = 3) {
  ModelConfig c;
  c.stacks = m;
  c.blocks = l;
  c.layers = 2;
  c.alpha = alpha;
  c.beta = beta;
  c.gamma = gamma;
  c.zero_forecast_head = false;
  return c;
}

// Scalar toy: psi(x) = relu(x), both branches the identity.
NBeatsModel scalar_toy(std::size_t stacks, std::size_t blocks) {
  ModelConfig c = small_config(stacks, blocks, 1, 1, 1);
  c.layers = 1;
  std::vector<BlockParams> ps;
  for (std::size_t m = 0; m < stacks; ++m) {
    BlockParams p;
    p.fc.push_back({Tensor::matrix({{1}}), Tensor::vector({0})});
    p.proj_down = p.proj_up = p.basis_down = p.basis_up = Tensor::matrix({{1}});
    ps.push_back(p);
  }
  return NBeatsModel(c, ps);
}

void zero_all(Forecaster& model) {
  for (auto& p : model.parameters())
    if (p.trainable) *p.value = Tensor::zeros_like(*p.value);
}

TEST(Block, ZeroWeightsGiveZeros) {
  NBeatsModel model = NBeatsModel::create(small_config(1, 1, 4, 5), 1);
  zero_all(model);
  Tape t;
  const auto bound = model.bind(t, GradMask::none());
  const auto blocks = model.split(bound);
  const BlockOutput out = block_forward(t.constant(Tensor::matrix({{1, 2, 3, 4}})), blocks[0]);
  for (const Var& v : {out.feature, out.backcast, out.forecast})
    for (double e : v.value().values()) EXPECT_EQ(e, 0.0);
}

TEST(Block, HandEvaluation) {
  ModelConfig c = small_config(1, 1, 2, 2, 2);
  c.layers = 1;
  BlockParams p;
  p.fc.push_back({Tensor::identity(2), Tensor::vector({0, 0})});
  p.proj_down = Tensor::matrix({{2, 0}, {0, 1}});
  p.basis_down = Tensor::matrix({{1, 1}, {0, 1}});
  p.proj_up = Tensor(Shape{2, 2});
  p.basis_up = Tensor::identity(2);
  NBeatsModel model(c, {p});
  Tape t;
  const auto blocks = model.split(model.bind(t, GradMask::none()));
  const BlockOutput out = block_forward(t.constant(Tensor::matrix({{-1.0, 3.0}})), blocks[0]);
  // relu -> (0, 3); W_down -> (0, 3); V_down -> (0 + 3, 3)
  EXPECT_EQ(out.feature.value(), Tensor::matrix({{0, 3}}));
  EXPECT_EQ(out.forecast.value(), Tensor::matrix({{3, 3}}));
  EXPECT_EQ(out.backcast.value(), Tensor::matrix({{0, 0}}));
}

TEST(Block, WidthMismatch) {
  NBeatsModel model = NBeatsModel::create(small_config(1, 1, 4, 5), 1);
  Tape t;
  const auto blocks = model.split(model.bind(t, GradMask::none()));
  EXPECT_THROW(block_forward(t.constant(Tensor::matrix({{1, 2, 3}})), blocks[0]), Error);
}

TEST(Stack, ScalarToyRecursion) {
  NBeatsModel model = scalar_toy(1, 2);
  Tape t;
  const auto blocks = model.split(model.bind(t, GradMask::none()));
  const StackOutput s = stack_forward(t.constant(Tensor::matrix({{2}})), blocks[0], 2);
  EXPECT_EQ(s.forecast.value().item(), 2.0);
  EXPECT_EQ(s.residual_out.value().item(), 0.0);
  EXPECT_EQ(s.block_taps[0].value().item(), 2.0);
  EXPECT_EQ(s.block_taps[1].value().item(), 0.0);
}

TEST(Stack, DisabledResidualRepeatsForecast) {
  NBeatsModel model = NBeatsModel::create(small_config(1, 3, 6, 8), 3);
  model.stacks()[0].proj_up = Tensor::zeros_like(model.stacks()[0].proj_up);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({4, 6}, rng);
  Tape t;
  const auto blocks = model.split(model.bind(t, GradMask::none()));
  const StackOutput s = stack_forward(t.constant(x), blocks[0], 3);
  Tensor three = block_forward(t.constant(x), blocks[0]).forecast.value();
  three *= 3.0;
  EXPECT_LE(max_abs_diff(s.forecast.value(), three), 1e-12);
  EXPECT_EQ(s.residual_out.value(), x);
}

TEST(Model, ScalarToyChained) {
  NBeatsModel model = scalar_toy(2, 2);
  EXPECT_EQ(model.predict(Tensor::matrix({{2}})).item(), 2.0);
}

TEST(Model, ZeroModelForecastsZero) {
  NBeatsModel model = NBeatsModel::create(small_config(3, 2, 6, 8), 5);
  zero_all(model);
  const Tensor y = model.predict(Tensor::matrix({{1, 2, 3, 4, 5, 6}}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, SingleStackMatchesStackForward) {
  NBeatsModel model = NBeatsModel::create(small_config(1, 3, 6, 8), 7);
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({2, 6}, rng);
  Tape t;
  const auto bound = model.bind(t, GradMask::none());
  const StackOutput s = stack_forward(t.constant(x), model.split(bound)[0], 3);
  EXPECT_EQ(model.predict(x), s.forecast.value());
}

TEST(Model, ZeroBackcastReduction) {
  NBeatsModel model = NBeatsModel::create(small_config(3, 4, 6, 8), 11);
  for (auto& p : model.stacks()) p.proj_up = Tensor::zeros_like(p.proj_up);
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({3, 6}, rng);
  Tape t;
  const auto blocks = model.split(model.bind(t, GradMask::none()));
  Tensor expect(Shape{3, 3});
  for (const auto& b : blocks) {
    Tensor f = block_forward(t.constant(x), b).forecast.value();
    f *= 4.0;
    expect += f;
  }
  EXPECT_LE(max_abs_diff(model.predict(x), expect), 1e-12);
}

TEST(FeatureComposition, MatchesTapsExactly) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + trial % 3, l = 1 + trial % 4;
    ModelConfig c = small_config(m, l, 4 + trial % 13, 4 + trial % 29);
    c.legacy_residual = trial % 5 == 0;
    NBeatsModel model = NBeatsModel::create(c, static_cast<std::uint64_t>(trial));
    const Tensor x = random_tensor({5, c.alpha}, rng);
    Tape t;
    const auto bound = model.bind(t, GradMask::none());
    const ModelOutput out = model.forward(t.constant(x), bound);
    for (std::size_t s = 0; s < m; ++s) {
      const Tensor g = stack_feature(t.constant(x), model, bound, s).value();
      EXPECT_EQ(g, out.taps[s].value())
          << "trial " << trial << " stack " << s << " diff " << max_abs_diff(g, out.taps[s].value());
    }
  }
}

TEST(FeatureComposition, FirstStackSingleBlockIsPsi) {
  NBeatsModel model = NBeatsModel::create(small_config(2, 1, 5, 6), 2);
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({3, 5}, rng);
  Tape t;
  const auto bound = model.bind(t, GradMask::none());
  EXPECT_EQ(stack_feature(t.constant(x), model, bound, 0).value(),
            psi(t.constant(x), model.split(bound)[0]).value());
}

TEST(FeatureComposition, NoBackcastMeansPsiOfInput) {
  NBeatsModel model = NBeatsModel::create(small_config(3, 3, 5, 6), 4);
  for (auto& p : model.stacks()) p.proj_up = Tensor::zeros_like(p.proj_up);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({3, 5}, rng);
  Tape t;
  const auto bound = model.bind(t, GradMask::none());
  const auto blocks = model.split(bound);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(stack_feature(t.constant(x), model, bound, s).value(),
              psi(t.constant(x), blocks[s]).value());
  }
}

TEST(FeatureComposition, IndexOutOfRange) {
  NBeatsModel model = NBeatsModel::create(small_config(2, 1, 5, 6), 2);
  EXPECT_THROW(stack_feature(Tensor(Shape{1, 5}), model, 2), Error);
}

TEST(Bases, Trend) {
  const Tensor v = make_trend_basis(3, 2);
  const Tensor expect = Tensor::matrix({{1, 0, 0}, {1, 1.0 / 3, 1.0 / 9}, {1, 2.0 / 3, 4.0 / 9}});
  EXPECT_LE(max_abs_diff(v, expect), 1e-15);
  const Tensor d0 = make_trend_basis(4, 0);
  EXPECT_EQ(d0, Tensor::matrix({{1}, {1}, {1}, {1}}));
}

TEST(Bases, Seasonality) {
  const Tensor v = make_seasonality_basis(4, 1);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(v(i, 0), 1.0);
  const double cosines[] = {1, 0, -1, 0};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(v(i, 1), cosines[i], 1e-12);
  EXPECT_EQ(v(0, 2), 0.0);
}

TEST(NHits, MaxPoolAndInterpolation) {
  Tape t;
  EXPECT_EQ(max_pool(t.constant(Tensor::matrix({{1, 3, 2, 0}})), 2).value(), Tensor::matrix({{3, 2}}));
  EXPECT_EQ(max_pool(t.constant(Tensor::matrix({{1, 3, -2}})), 2).value(), Tensor::matrix({{3, 0}}));
  const Tensor m = linear_interpolation_matrix(4, 2);
  const Tensor y = matmul(m, Tensor::matrix({{0}, {2}}));
  const double expect[] = {0, 2.0 / 3, 4.0 / 3, 2};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], expect[i], 1e-15);
}

TEST(NHits, KernelOneMatchesBlockForward) {
  NBeatsModel model = NBeatsModel::create(small_config(1, 1, 6, 8), 3);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 6}, rng);
  Tape t;
  const auto blocks = model.split(model.bind(t, GradMask::none()));
  EXPECT_EQ(nhits_block_forward(t.constant(x), blocks[0], 1).forecast.value(),
            block_forward(t.constant(x), blocks[0]).forecast.value());
}

TEST(NHits, PooledModelShapesAndKernelGuard) {
  ModelConfig c = small_config(2, 2, 7, 8, 5);
  c.variant = Variant::kNHits;
  c.nhits_kernel = 2;
  NBeatsModel model = NBeatsModel::create(c, 3);
  EXPECT_EQ(model.stacks()[0].fc[0].weight.cols(), 4u);
  EXPECT_EQ(model.predict(Tensor(Shape{3, 7}, 1.0)).shape(), (Shape{3, 5}));
  c.nhits_kernel = 8;
  try {
    NBeatsModel::create(c, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(Interpretable, LayoutAndFrozenBases) {
  ModelConfig c = small_config(3, 2, 8, 8, 6);
  c.variant = Variant::kInterpretable;
  NBeatsModel model = NBeatsModel::create(c, 1);
  EXPECT_EQ(model.stacks()[0].kind, StackKind::kTrend);
  EXPECT_EQ(model.stacks()[1].kind, StackKind::kSeasonality);
  EXPECT_EQ(model.stacks()[2].kind, StackKind::kSeasonality);
  EXPECT_EQ(model.stacks()[0].basis_down.cols(), 3u);
  EXPECT_EQ(model.stacks()[1].basis_up.cols(), 5u);
  for (const auto& p : model.parameters())
    if (p.name.find("basis") != std::string::npos) EXPECT_FALSE(p.trainable);
}

TEST(LinearBaselines, NLinearOffsetPath) {
  ModelConfig c = small_config(1, 1, 5, 4, 3);
  c.variant = Variant::kNLinear;
  LinearBaseline model = LinearBaseline::create(c, 1);
  zero_all(model);
  EXPECT_EQ(model.predict(Tensor::matrix({{1, 2, 3, 4, 7}})), Tensor::matrix({{7, 7, 7}}));
  LinearBaseline random = LinearBaseline::create(c, 2);
  random.maps()[0].bias = Tensor::zeros_like(random.maps()[0].bias);
  const Tensor y = random.predict(Tensor(Shape{1, 5}, 2.5));
  for (double v : y.values()) EXPECT_NEAR(v, 2.5, 1e-15);
}

TEST(LinearBaselines, DLinearFullWindowIsMean) {
  const Tensor a = moving_average_matrix(4, 4);
  for (double v : a.values()) EXPECT_EQ(v, 0.25);
  ModelConfig c = small_config(1, 1, 4, 4, 2);
  c.variant = Variant::kDLinear;
  c.dlinear_window = 4;
  LinearBaseline model = LinearBaseline::create(c, 1);
  zero_all(model);
  model.maps()[0].weight(0, 0) = 1.0;  // trend component, first coordinate
  model.maps()[1].weight(1, 0) = 1.0;  // remainder component, first coordinate
  const Tensor y = model.predict(Tensor::matrix({{1, 2, 3, 6}}));
  EXPECT_DOUBLE_EQ(y[0], 3.0);
  EXPECT_DOUBLE_EQ(y[1], -2.0);
  c.dlinear_window = 5;
  EXPECT_THROW(LinearBaseline::create(c, 1), Error);
}

TEST(Lipschitz, ConstantsFormula) {
  LipschitzConstants k{{2.0}, {1.0}};
  EXPECT_DOUBLE_EQ(lipschitz_bound(k, 0, 2, 1.0), 6.0);
  LipschitzConstants two{{2.0, 3.0}, {1.0, 0.5}};
  EXPECT_DOUBLE_EQ(lipschitz_bound(two, 1, 2, 1.0), 3.0 * 2.5 * 9.0);
  NBeatsModel model = NBeatsModel::create(small_config(2, 2, 5, 6), 1);
  zero_all(model);
  EXPECT_EQ(lipschitz_bound(model, 1, 1.0), 0.0);
}

TEST(Lipschitz, NonFiniteWeights) {
  NBeatsModel model = NBeatsModel::create(small_config(1, 1, 5, 6), 1);
  model.stacks()[0].fc[0].weight[0] = NAN;
  try {
    lipschitz_constants(model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

TEST(Lipschitz, EmpiricalRatiosBelowBound) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    NBeatsModel model = NBeatsModel::create(small_config(3, 2, 8, 8), 100 + trial);
    const auto constants = lipschitz_constants(model);
    for (std::size_t m = 0; m < 3; ++m) {
      const double bound = lipschitz_bound(constants, m, 2, 1.0);
      for (int pair = 0; pair < 200; ++pair) {
        const Tensor x = random_tensor({1, 8}, rng), y = random_tensor({1, 8}, rng);
        const Tensor gx = stack_feature(x, model, m), gy = stack_feature(y, model, m);
        Tensor dx = x;
        dx -= y;
        const double in = frobenius_norm(dx);
        Tensor ds = softmax_rows(gx);
        ds -= softmax_rows(gy);
        Tensor dt = map_unary(UnaryKind::kTanh, gx);
        dt -= map_unary(UnaryKind::kTanh, gy);
        EXPECT_LE(frobenius_norm(ds), bound * in);
        EXPECT_LE(frobenius_norm(dt), bound * in);
      }
    }
  }
}

TEST(Gradients, ModelForwardMatchesFiniteDifferences) {
  ModelConfig c = small_config(2, 2, 8, 8, 3);
  NBeatsModel model = NBeatsModel::create(c, 31);
  std::mt19937_64 rng(31);
  const Tensor x = random_tensor({3, 8}, rng);
  const Tensor w = random_tensor({3, 3}, rng);
  auto params = model.parameters();
  Tape t;
  const auto bound = model.bind(t, GradMask::all());
  Var loss = sum(mul(model.forward(t.constant(x), bound).forecast, t.constant(w)));
  const Gradients g = t.backward(loss);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    Tensor original = *params[i].value;
    const Tensor fd = finite_difference_grad(
        [&](const Tensor& v) {
          *params[i].value = v;
          const double out = reduce(ReduceKind::kSum, [&] {
            Tensor p = model.predict(x);
            for (std::size_t k = 0; k < p.size(); ++k) p[k] *= w[k];
            return p;
          }()).item();
          return out;
        },
        original);
    *params[i].value = original;
    const Tensor& an = g[bound[i]];
    for (std::size_t k = 0; k < fd.size(); ++k) {
      const double err = std::abs(an[k] - fd[k]);
      EXPECT_TRUE(err <= 1e-7 || err <= 1e-4 * std::max(std::abs(an[k]), std::abs(fd[k])))
          << params[i].name << "[" << k << "]: " << an[k] << " vs " << fd[k];
    }
  }
}

TEST(Init, ZeroForecastHeadStartsAtZero) {
  ModelConfig c = small_config(2, 2, 6, 5, 3);
  c.zero_forecast_head = true;
  NBeatsModel zero_head = NBeatsModel::create(c, 4);
  c.zero_forecast_head = false;
  NBeatsModel random_head = NBeatsModel::create(c, 4);
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({4, 6}, rng);
  const Tensor forecast = zero_head.predict(x);
  for (double v : forecast.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(zero_head.stacks()[1].fc[0].weight, random_head.stacks()[1].fc[0].weight);
  EXPECT_EQ(zero_head.stacks()[1].proj_up, random_head.stacks()[1].proj_up);
  EXPECT_GT(frobenius_norm(random_head.stacks()[0].proj_down), 0.0);
}

TEST(Checkpoint, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "fanbeats_model_test.ckpt";
  for (Variant v : {Variant::kGeneric, Variant::kInterpretable, Variant::kNHits, Variant::kNLinear,
                    Variant::kDLinear}) {
    ModelConfig c = small_config(3, 2, 8, 6, 4);
    c.variant = v;
    c.dlinear_window = 3;
    auto model = make_forecaster(c, 77);
    save_checkpoint(*model, path.string(), 77);
    std::uint64_t seed = 0;
    auto loaded = load_checkpoint(path.string(), &seed);
    EXPECT_EQ(seed, 77u);
    EXPECT_EQ(loaded->config().variant, v);
    const Tensor x = Tensor(Shape{2, 8}, 0.5);
    EXPECT_EQ(loaded->predict(x), model->predict(x));
  }
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), Error);
}

}  // namespace
}  // namespace fanbeats
