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
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fanbeats/autodiff.hpp"
#include "fanbeats/error.hpp"

namespace fanbeats {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.values()) v = d(rng);
  return t;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kUsage;
}

// Compares tape gradients of a scalar builder against central differences.
void expect_grad_matches(const std::function<Var(Tape&, Var)>& build, const Tensor& x0) {
  Tape tape;
  Var x = tape.leaf(x0, true);
  const Tensor analytic = tape.backward(build(tape, x))[x];
  const Tensor numeric = finite_difference_grad(
      [&](const Tensor& xv) {
        Tape t;
        return build(t, t.constant(xv)).value().item();
      },
      x0);
  ASSERT_EQ(analytic.size(), numeric.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    EXPECT_TRUE(err <= 1e-7 || err <= 1e-4 * scale)
        << "coordinate " << i << ": tape " << analytic[i] << " vs fd " << numeric[i];
  }
}

TEST(Matmul, IdentityAndHandValues) {
  Tape t;
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(t.constant(Tensor::identity(2)), t.constant(m)).value(), m);
  const Var c = matmul(t.constant(Tensor::matrix({{1, 2}})), t.constant(Tensor::matrix({{3}, {4}})));
  EXPECT_EQ(c.value().item(), 11.0);
  const Var z = matmul(t.constant(Tensor(Shape{2, 2})), t.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}})));
  for (double v : z.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape t;
  try {
    matmul(t.constant(Tensor(Shape{2, 3})), t.constant(Tensor(Shape{2, 3})));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(MapUnary, Examples) {
  EXPECT_EQ(map_unary(UnaryKind::kRelu, Tensor::vector({-1, 0, 2})), Tensor::vector({0, 0, 2}));
  EXPECT_EQ(map_unary(UnaryKind::kTanh, Tensor::vector({0}))[0], 0.0);
  const Tensor e = map_unary(UnaryKind::kExp, Tensor::vector({0, 1}));
  EXPECT_EQ(e[0], 1.0);
  EXPECT_DOUBLE_EQ(e[1], std::numbers::e);
}

TEST(MapUnary, LogOfNonPositiveNamesIndex) {
  try {
    map_unary(UnaryKind::kLog, Tensor::vector({1.0, 2.0, 0.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDomain);
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(Reduce, Examples) {
  EXPECT_EQ(reduce(ReduceKind::kSum, Tensor::vector({1, 2, 3})).item(), 6.0);
  EXPECT_NEAR(reduce(ReduceKind::kLogSumExp, Tensor::vector({0, 0})).item(), std::log(2.0), 1e-15);
  EXPECT_EQ(reduce(ReduceKind::kMax, Tensor::matrix({{1, 5}, {2, 2}}), 1), Tensor::vector({5, 2}));
  EXPECT_EQ(reduce(ReduceKind::kMean, Tensor::matrix({{1, 5}, {3, 3}}), 0), Tensor::vector({2, 4}));
}

TEST(Reduce, LogSumExpDoesNotOverflow) {
  const double v = reduce(ReduceKind::kLogSumExp, Tensor::vector({1000.0, 1000.0})).item();
  EXPECT_NEAR(v, 1000.0 + std::log(2.0), 1e-12);
}

TEST(Reduce, ShiftIdentity) {
  std::mt19937_64 rng(5);
  for (int s = 0; s < 20; ++s) {
    Tensor x = random_tensor({7}, rng, -30, 30);
    double mx = x[0];
    for (double v : x.values()) mx = std::max(mx, v);
    Tensor shifted = x;
    for (double& v : shifted.values()) v -= mx;
    EXPECT_NEAR(reduce(ReduceKind::kLogSumExp, x).item(),
                reduce(ReduceKind::kLogSumExp, shifted).item() + mx, 1e-12);
  }
}

TEST(Reduce, Errors) {
  EXPECT_EQ(kind_of([] { reduce(ReduceKind::kSum, Tensor(Shape{0})); }),
            ErrorKind::kEmptyReduction);
  EXPECT_EQ(kind_of([] { reduce(ReduceKind::kSum, Tensor(Shape{2, 2}), 2); }), ErrorKind::kRank);
}

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax_rows(Tensor::matrix({{0, 0}})), Tensor::matrix({{0.5, 0.5}}));
  EXPECT_EQ(softmax_rows(Tensor::matrix({{0, 0, 0, 0}})), Tensor::matrix({{0.25, 0.25, 0.25, 0.25}}));
  const Tensor s = softmax_rows(Tensor::matrix({{std::log(1.0), std::log(3.0)}}));
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({5, 6}, rng, -10, 10);
  Tensor shifted = x;
  for (std::size_t r = 0; r < 5; ++r)
    for (double& v : shifted.row(r)) v += static_cast<double>(r) * 3.5 - 4.0;
  const Tensor a = softmax_rows(x), b = softmax_rows(shifted);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (double v : a.row(r)) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(Backward, Examples) {
  {
    Tape t;
    Var x = t.leaf(Tensor::vector({4, 5, 6}), true);
    EXPECT_EQ(t.backward(sum(x))[x], Tensor::vector({1, 1, 1}));
  }
  {
    Tape t;
    Var x = t.leaf(Tensor::vector({1, 2}), true);
    EXPECT_EQ(t.backward(sum(square(x)))[x], Tensor::vector({2, 4}));
  }
  {
    Tape t;
    Var x = t.leaf(Tensor::vector({-1, 1}), true);
    EXPECT_EQ(t.backward(sum(relu(x)))[x], Tensor::vector({0, 1}));
  }
}

TEST(Backward, ReluAndMaxTieRules) {
  Tape t;
  Var x = t.leaf(Tensor::vector({0.0, 3.0, 3.0}), true);
  const Gradients g = t.backward(add(sum(relu(x)), reduce(ReduceKind::kMax, x)));
  EXPECT_EQ(g[x], Tensor::vector({0.0, 2.0, 1.0}));
}

TEST(Backward, Errors) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}), true);
  EXPECT_EQ(kind_of([&] { t.backward(square(x)); }), ErrorKind::kRank);
  Var c = t.constant(Tensor::scalar(1.0));
  EXPECT_EQ(kind_of([&] { t.backward(c); }), ErrorKind::kNoGraph);
}

TEST(Backward, VisitsEachNodeOnce) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}), true);
  Var y = square(x);
  Var loss = sum(add(y, y));
  t.backward(loss);
  EXPECT_EQ(t.last_backward_visits(), 3u);
}

TEST(Backward, UnreachedLeafGetsZero) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}), true);
  Var w = t.leaf(Tensor::vector({3, 4}), true);
  const Gradients g = t.backward(sum(x));
  EXPECT_EQ(g[w], Tensor::vector({0, 0}));
}

TEST(FiniteDifference, Examples) {
  auto sq = [](const Tensor& x) { return reduce(ReduceKind::kSum, map_unary(UnaryKind::kSquare, x)).item(); };
  EXPECT_NEAR(finite_difference_grad(sq, Tensor::vector({3}))[0], 6.0, 1e-6);
  const Tensor g = finite_difference_grad(
      [](const Tensor& x) { return reduce(ReduceKind::kSum, x).item(); }, Tensor::vector({1, -7, 2}));
  for (double v : g.values()) EXPECT_NEAR(v, 1.0, 1e-9);
  const Tensor z = finite_difference_grad([](const Tensor&) { return 4.2; }, Tensor::vector({1, 2}));
  for (double v : z.values()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(FiniteDifference, Errors) {
  EXPECT_EQ(kind_of([] { finite_difference_grad([](const Tensor&) { return 0.0; }, Tensor::vector({1}), 0.0); }),
            ErrorKind::kOracle);
  EXPECT_EQ(kind_of([] { finite_difference_grad([](const Tensor&) { return NAN; }, Tensor::vector({1})); }),
            ErrorKind::kOracle);
}

TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(2026);
  for (int seed = 0; seed < 20; ++seed) {
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({3, 4}, rng);
    const Tensor w = random_tensor({5, 4}, rng);
    const Tensor bias = random_tensor({5}, rng);
    const Tensor row = random_tensor({4}, rng);
    const Tensor pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    auto c = [](Tape& t, const Tensor& v) { return t.constant(v); };
    expect_grad_matches([&](Tape& t, Var x) { return sum(mul(add(x, c(t, b)), sub(x, c(t, b)))); }, a);
    expect_grad_matches([&](Tape& t, Var x) { return sum(matmul(x, transpose(c(t, w)))); }, a);
    expect_grad_matches([&](Tape& t, Var x) { return sum(square(matmul_nt(x, c(t, w)))); }, a);
    expect_grad_matches([&](Tape& t, Var x) { return sum(square(matmul_nt(c(t, a), x))); }, w);
    expect_grad_matches([&](Tape& t, Var x) { return sum(square(linear(x, c(t, w), c(t, bias)))); }, a);
    expect_grad_matches([&](Tape& t, Var x) { return sum(square(linear(c(t, a), x, c(t, bias)))); }, w);
    expect_grad_matches([&](Tape& t, Var x) { return sum(square(add_row(c(t, w), x))); }, row);
    expect_grad_matches([&](Tape& t, Var x) { return sum(tanh(scale(add_scalar(x, 0.3), 1.7))); }, a);
    expect_grad_matches([&](Tape& t, Var x) { return sum(exp(neg(x))); }, a);
    expect_grad_matches([&](Tape&, Var x) { return sum(log(x)); }, pos);
    expect_grad_matches([&](Tape&, Var x) { return sum(map_unary(UnaryKind::kAbs, x)); }, a);
    expect_grad_matches([&](Tape&, Var x) { return reduce(ReduceKind::kLogSumExp, x); }, a);
    expect_grad_matches([&](Tape&, Var x) { return sum(square(reduce(ReduceKind::kLogSumExp, x, 1))); }, a);
    expect_grad_matches([&](Tape&, Var x) { return sum(square(reduce(ReduceKind::kMean, x, 0))); }, a);
    expect_grad_matches([&](Tape&, Var x) { return sum(reduce(ReduceKind::kMax, x, 1)); }, a);
    expect_grad_matches([&](Tape& t, Var x) { return sum(mul(softmax_rows(x), c(t, b))); }, a);
  }
}

TEST(Tape, ReplayIsBitIdentical) {
  std::mt19937_64 rng(1);
  const Tensor x0 = random_tensor({4, 4}, rng);
  auto run = [&] {
    Tape t;
    Var x = t.leaf(x0, true);
    return t.backward(reduce(ReduceKind::kLogSumExp, matmul(tanh(x), x)))[x];
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, NonFiniteOutputRaises) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1000.0}), true);
  EXPECT_EQ(kind_of([&] { exp(x); }), ErrorKind::kNumeric);
}

TEST(Tensor, Invariants) {
  EXPECT_EQ(kind_of([] { Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}); }), ErrorKind::kDimension);
  EXPECT_NEAR(spectral_norm(Tensor::matrix({{3, 0}, {0, 1}})), 3.0, 1e-12);
}

}  // namespace
}  // namespace fanbeats
