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

// Divergences between uniform empirical measures and the pairwise-max
// alignment loss.
//
// A measure is a B x d matrix of points, each with mass 1/B. Every divergence
// has a taped overload (gradients flow into the point coordinates) and a
// gradient-free Tensor overload.

#ifndef FANBEATS_ALIGN_HPP
#define FANBEATS_ALIGN_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fanbeats/autodiff.hpp"
#include "fanbeats/model.hpp"

namespace fanbeats {

enum class Normalizer { kSoftmax, kTanh, kNone };
enum class Divergence { kSinkhorn, kExactW2, kMmd, kKl };
enum class Granularity { kStackWise, kBlockWise };

const char* to_string(Normalizer n);
const char* to_string(Divergence d);
const char* to_string(Granularity g);
Normalizer parse_normalizer(const std::string& s);
Divergence parse_divergence(const std::string& s);
Granularity parse_granularity(const std::string& s);

struct SinkhornConfig {
  double epsilon = 0.0025;  // coefficient of the entropy term, squared-distance units
  int max_iters = 200;
  double tol = 1e-6;        // max absolute potential change
  /// true: differentiate through the recorded iterations.
  /// false: envelope gradient, d value / d C = optimal plan.
  bool unroll_grad = true;
};

struct AlignmentConfig {
  Normalizer normalizer = Normalizer::kSoftmax;
  Divergence divergence = Divergence::kSinkhorn;
  double lambda = 1.0;
  Granularity granularity = Granularity::kStackWise;
};

Tensor normalize(const Tensor& z, Normalizer kind);
Var normalize(Var z, Normalizer kind);

/// C[i][j] = ||x_i - y_j||^2 via norms and inner products, clamped at 0.
Tensor cost_matrix(const Tensor& x, const Tensor& y);
Var cost_matrix(Var x, Var y);

struct SinkhornStatus {
  int iterations = 0;
  double last_change = 0.0;
  bool converged = false;
};

struct SinkhornResult {
  double value = 0.0;
  Tensor f, g;  // dual potentials
  SinkhornStatus status;
};

struct SinkhornVarResult {
  Var value;
  Tensor f, g;
  SinkhornStatus status;
};

/// Entropic OT between uniform measures by log-domain alternating updates
/// f_i = -eps lse_j(log b_j + (g_j - C_ij)/eps), g likewise, starting from
/// g = 0. The value is <f, a> + <g, b> after the last g update. Stops when the
/// largest potential change falls below tol, or after max_iters (reported in
/// status, not raised). epsilon <= 0 raises a config error.
SinkhornResult sinkhorn_ot(const Tensor& x, const Tensor& y, const SinkhornConfig& cfg);
SinkhornVarResult sinkhorn_ot(Var x, Var y, const SinkhornConfig& cfg);

/// W(mu, nu) - (W(mu, mu) + W(nu, nu)) / 2. The cross term is solved with the
/// pair in a fixed order (shape, then values), so swapping x and y gives the
/// same result bit for bit.
double sinkhorn_divergence(const Tensor& x, const Tensor& y, const SinkhornConfig& cfg);
Var sinkhorn_divergence(Var x, Var y, const SinkhornConfig& cfg);

/// Minimum-cost perfect matching on cost_matrix (Hungarian algorithm).
/// Returns assignment[i] = column matched to row i.
std::vector<std::size_t> min_cost_assignment(const Tensor& cost);

/// min over permutations of (1/B) sum_i ||x_i - y_pi(i)||^2. Unequal sample
/// counts raise a size error.
double exact_w2(const Tensor& x, const Tensor& y);
Var exact_w2(Var x, Var y);

/// Median of the pairwise distances among the pooled samples (i < j); 1 when
/// that median is 0.
double median_bandwidth(const Tensor& x, const Tensor& y);

/// Biased squared MMD with k(x, y) = exp(-||x - y||^2 / (2 h^2)).
double mmd(const Tensor& x, const Tensor& y, std::optional<double> bandwidth = std::nullopt);
Var mmd(Var x, Var y, std::optional<double> bandwidth = std::nullopt);

/// KL(mean row of x || mean row of y); rows must lie on the simplex within
/// 1e-6, entries are clamped below at 1e-12 before the log.
double kl_divergence(const Tensor& x, const Tensor& y);
Var kl_divergence(Var x, Var y);

/// Divergence between two normalized measures as used by the alignment loss
/// (KL takes the larger of both directions).
Var pair_divergence(Var x, Var y, Divergence kind, const SinkhornConfig& scfg,
                    int* sinkhorn_warnings = nullptr);

struct AlignmentResult {
  Var loss;
  std::vector<double> per_unit;                                // max per unit
  std::vector<std::pair<std::size_t, std::size_t>> argmax;     // selected pair
  int sinkhorn_warnings = 0;                                   // unconverged solves
};

/// taps[k][u]: raw features of domain k for alignment unit u (a stack, or a
/// block for block-wise alignment). Each unit contributes the largest
/// divergence over unordered domain pairs (first pair wins ties); the loss is
/// the sum over units. Fewer than two domains raise a config error.
AlignmentResult alignment_loss(const std::vector<std::vector<Var>>& taps,
                               const AlignmentConfig& cfg, const SinkhornConfig& scfg);

/// Per-domain alignment units from forward outputs, honouring granularity.
std::vector<std::vector<Var>> alignment_units(const std::vector<ModelOutput>& outputs,
                                              Granularity granularity);

struct TheoremCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double constant = 0.0;       // C = sum_m max(C_{sigma o g^m}^2, 1)
  double input_distance = 0.0; // max pairwise W_eps on raw inputs
  bool holds = false;
};

/// Evaluates both sides of the stack-wise Sinkhorn bound on one batch per
/// domain: sum_m max_{i<j} SD(sigma g^m # P^i, sigma g^m # P^j) against
/// C max_{i<j} W_eps(P^i, P^j).
TheoremCheck theorem_gap_check(const NBeatsModel& model, const std::vector<Tensor>& batches,
                               Normalizer normalizer, const SinkhornConfig& scfg);

}  // namespace fanbeats

#endif  // FANBEATS_ALIGN_HPP
