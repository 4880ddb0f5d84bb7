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

#include "fanbeats/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "fanbeats/error.hpp"

namespace fanbeats {

const char* to_string(Normalizer n) {
  switch (n) {
    case Normalizer::kSoftmax: return "softmax";
    case Normalizer::kTanh: return "tanh";
    case Normalizer::kNone: return "none";
  }
  return "softmax";
}

const char* to_string(Divergence d) {
  switch (d) {
    case Divergence::kSinkhorn: return "sinkhorn";
    case Divergence::kExactW2: return "exact_w2";
    case Divergence::kMmd: return "mmd";
    case Divergence::kKl: return "kl";
  }
  return "sinkhorn";
}

const char* to_string(Granularity g) {
  return g == Granularity::kBlockWise ? "block_wise" : "stack_wise";
}

Normalizer parse_normalizer(const std::string& s) {
  if (s == "softmax") return Normalizer::kSoftmax;
  if (s == "tanh") return Normalizer::kTanh;
  if (s == "none") return Normalizer::kNone;
  fail(ErrorKind::kConfig, "unknown normalizer '" + s + "' (softmax, tanh, none)");
}

Divergence parse_divergence(const std::string& s) {
  if (s == "sinkhorn") return Divergence::kSinkhorn;
  if (s == "exact_w2" || s == "wd") return Divergence::kExactW2;
  if (s == "mmd") return Divergence::kMmd;
  if (s == "kl") return Divergence::kKl;
  fail(ErrorKind::kConfig, "unknown divergence '" + s + "' (sinkhorn, exact_w2, mmd, kl)");
}

Granularity parse_granularity(const std::string& s) {
  if (s == "stack_wise") return Granularity::kStackWise;
  if (s == "block_wise") return Granularity::kBlockWise;
  fail(ErrorKind::kConfig, "unknown granularity '" + s + "' (stack_wise, block_wise)");
}

Tensor normalize(const Tensor& z, Normalizer kind) {
  switch (kind) {
    case Normalizer::kSoftmax: return softmax_rows(z);
    case Normalizer::kTanh: return map_unary(UnaryKind::kTanh, z);
    case Normalizer::kNone: return z;
  }
  return z;
}

Var normalize(Var z, Normalizer kind) {
  switch (kind) {
    case Normalizer::kSoftmax: return softmax_rows(z);
    case Normalizer::kTanh: return tanh(z);
    case Normalizer::kNone: return z;
  }
  return z;
}

// ---------------------------------------------------------------------------
// Costs

namespace {

void check_points(const char* op, const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2) {
    fail(ErrorKind::kRank, std::string(op) + " expects B x d point matrices, got " +
                               shape_string(x.shape()) + " and " + shape_string(y.shape()));
  }
  if (x.cols() != y.cols()) {
    fail(ErrorKind::kDimension, std::string(op) + " dimension mismatch: " +
                                    shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  if (x.rows() == 0 || y.rows() == 0) {
    fail(ErrorKind::kSize, std::string(op) + " needs at least one point per measure");
  }
}

// Raw (unclamped) squared distances by the norm expansion.
Tensor raw_costs(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.rows(), m = y.rows(), d = x.cols();
  Tensor c(Shape{n, m});
  std::vector<double> ny(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (double v : y.row(j)) s += v * v;
    ny[j] = s;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * d;
    double nx = 0.0;
    for (std::size_t k = 0; k < d; ++k) nx += xi[k] * xi[k];
    for (std::size_t j = 0; j < m; ++j) {
      const double* yj = y.data() + j * d;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += xi[k] * yj[k];
      c(i, j) = nx + ny[j] - 2.0 * dot;
    }
  }
  return c;
}

// Accumulates d/dx and d/dy of sum_ij w_ij ||x_i - y_j||^2 scaled by s.
void cost_backward(Tape& tp, NodeId ix, NodeId iy, const Tensor& w, double s) {
  const Tensor& xv = tp.value(ix);
  const Tensor& yv = tp.value(iy);
  const std::size_t n = xv.rows(), m = yv.rows(), d = xv.cols();
  if (Tensor* gx = tp.grad_slot(ix)) {
    for (std::size_t i = 0; i < n; ++i) {
      double* gr = gx->data() + i * d;
      const double* xi = xv.data() + i * d;
      for (std::size_t j = 0; j < m; ++j) {
        const double wij = w(i, j);
        if (wij == 0.0) continue;
        const double* yj = yv.data() + j * d;
        const double c = 2.0 * s * wij;
        for (std::size_t k = 0; k < d; ++k) gr[k] += c * (xi[k] - yj[k]);
      }
    }
  }
  if (Tensor* gy = tp.grad_slot(iy)) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = xv.data() + i * d;
      for (std::size_t j = 0; j < m; ++j) {
        const double wij = w(i, j);
        if (wij == 0.0) continue;
        double* gr = gy->data() + j * d;
        const double* yj = yv.data() + j * d;
        const double c = 2.0 * s * wij;
        for (std::size_t k = 0; k < d; ++k) gr[k] += c * (yj[k] - xi[k]);
      }
    }
  }
}

// Zeroes weights where the clamp at 0 was active.
void mask_clamped(Tensor& w, const Tensor& raw) {
  for (std::size_t i = 0; i < w.size(); ++i)
    if (raw[i] < 0.0) w[i] = 0.0;
}

Tensor clamp_costs(Tensor raw) {
  for (double& v : raw.values()) v = std::max(v, 0.0);
  return raw;
}

}  // namespace

Tensor cost_matrix(const Tensor& x, const Tensor& y) {
  check_points("cost_matrix", x, y);
  return clamp_costs(raw_costs(x, y));
}

Var cost_matrix(Var x, Var y) {
  if (!x.valid() || !y.valid() || x.tape() != y.tape()) {
    fail(ErrorKind::kNoGraph, "cost_matrix: inputs are not on one tape");
  }
  check_points("cost_matrix", x.value(), y.value());
  Tensor raw = raw_costs(x.value(), y.value());
  Tensor c = clamp_costs(raw);
  const NodeId ix = x.id(), iy = y.id();
  return x.tape()->record("cost_matrix", std::move(c), {x, y},
                          [ix, iy, raw = std::move(raw)](Tape& tp, NodeId, const Tensor& g) {
                            Tensor w = g;
                            mask_clamped(w, raw);
                            cost_backward(tp, ix, iy, w, 1.0);
                          });
}

// ---------------------------------------------------------------------------
// Sinkhorn

namespace {

struct Trace {
  // f[t], g[t] for t = 0..T; f[0] and g[0] are the zero initialisation.
  std::vector<std::vector<double>> f, g;
};

void check_finite_potentials(const std::vector<double>& v) {
  for (double e : v)
    if (!std::isfinite(e)) fail(ErrorKind::kNumeric, "Sinkhorn potentials became non-finite");
}

// One half-step: out_i = -eps lse_j(log w + (other_j - C_ij)/eps), where C is
// read row-wise (rows_of_c) or column-wise.
void half_step(const Tensor& c, bool rows_of_c, const std::vector<double>& other, double log_w,
               double eps, std::vector<double>& out, std::vector<double>& scratch) {
  const std::size_t n = c.rows(), m = c.cols();
  const std::size_t outer = rows_of_c ? n : m, inner = rows_of_c ? m : n;
  scratch.resize(inner);
  const double inv = 1.0 / eps;
  for (std::size_t i = 0; i < outer; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < inner; ++j) {
      const double cij = rows_of_c ? c(i, j) : c(j, i);
      const double s = (other[j] - cij) * inv;
      scratch[j] = s;
      mx = std::max(mx, s);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < inner; ++j) sum += std::exp(scratch[j] - mx);
    out[i] = -eps * (log_w + mx + std::log(sum));
  }
}

SinkhornResult solve(const Tensor& c, const SinkhornConfig& cfg, Trace* trace) {
  if (!(cfg.epsilon > 0.0)) {
    fail(ErrorKind::kConfig, "Sinkhorn needs epsilon > 0 (use exact_w2 for epsilon = 0)");
  }
  if (cfg.max_iters < 1) fail(ErrorKind::kConfig, "Sinkhorn needs max_iters >= 1");
  const std::size_t n = c.rows(), m = c.cols();
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  std::vector<double> f(n, 0.0), g(m, 0.0), f_new(n), g_new(m), scratch;
  if (trace) {
    trace->f.assign(1, f);
    trace->g.assign(1, g);
  }
  SinkhornResult r;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    half_step(c, true, g, log_b, cfg.epsilon, f_new, scratch);
    half_step(c, false, f_new, log_a, cfg.epsilon, g_new, scratch);
    check_finite_potentials(f_new);
    check_finite_potentials(g_new);
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(f_new[i] - f[i]));
    for (std::size_t j = 0; j < m; ++j) change = std::max(change, std::abs(g_new[j] - g[j]));
    f.swap(f_new);
    g.swap(g_new);
    if (trace) {
      trace->f.push_back(f);
      trace->g.push_back(g);
    }
    r.status.iterations = it;
    r.status.last_change = change;
    if (change < cfg.tol) {
      r.status.converged = true;
      break;
    }
  }
  double value = 0.0;
  for (double v : f) value += v;
  value /= static_cast<double>(n);
  double vg = 0.0;
  for (double v : g) vg += v;
  value += vg / static_cast<double>(m);
  r.value = value;
  // Potentials are defined up to (f + c, g - c); report the pair with equal means.
  const double shift = 0.5 * (vg / static_cast<double>(m) - (value - vg / static_cast<double>(m)));
  for (double& v : f) v += shift;
  for (double& v : g) v -= shift;
  r.f = Tensor::vector(std::move(f));
  r.g = Tensor::vector(std::move(g));
  return r;
}

// d value / d C through the recorded iterations.
Tensor unrolled_cost_grad(const Tensor& c, const Trace& tr, double eps) {
  const std::size_t n = c.rows(), m = c.cols();
  const std::size_t steps = tr.f.size() - 1;
  const double a = 1.0 / static_cast<double>(n), b = 1.0 / static_cast<double>(m);
  const double inv = 1.0 / eps;
  Tensor cbar(Shape{n, m});
  std::vector<double> fbar(n, a), gbar(m, b), next_gbar(m);
  for (std::size_t t = steps; t >= 1; --t) {
    const auto& ft = tr.f[t];
    const auto& gt = tr.g[t];
    const auto& gprev = tr.g[t - 1];
    // g^t_j = -eps lse_i(log a + (f^t_i - C_ij)/eps); Q_ij = a exp((f_i + g_j - C_ij)/eps)
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (gbar[j] == 0.0) continue;
        const double q = a * std::exp((ft[i] + gt[j] - c(i, j)) * inv);
        const double w = q * gbar[j];
        cbar(i, j) += w;
        acc += w;
      }
      fbar[i] -= acc;
    }
    // f^t_i = -eps lse_j(log b + (g^{t-1}_j - C_ij)/eps); P_ij = b exp((f_i + g_j - C_ij)/eps)
    std::fill(next_gbar.begin(), next_gbar.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (fbar[i] == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) {
        const double p = b * std::exp((ft[i] + gprev[j] - c(i, j)) * inv);
        const double w = p * fbar[i];
        cbar(i, j) += w;
        next_gbar[j] -= w;
      }
    }
    gbar.swap(next_gbar);
    std::fill(fbar.begin(), fbar.end(), 0.0);
  }
  return cbar;
}

// Envelope gradient: the entropic plan at the final potentials.
Tensor plan(const Tensor& c, const Tensor& f, const Tensor& g, double eps) {
  const std::size_t n = c.rows(), m = c.cols();
  const double ab = 1.0 / static_cast<double>(n * m);
  Tensor p(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) p(i, j) = ab * std::exp((f[i] + g[j] - c(i, j)) / eps);
  return p;
}

}  // namespace

SinkhornResult sinkhorn_ot(const Tensor& x, const Tensor& y, const SinkhornConfig& cfg) {
  return solve(cost_matrix(x, y), cfg, nullptr);
}

SinkhornVarResult sinkhorn_ot(Var x, Var y, const SinkhornConfig& cfg) {
  if (!x.valid() || !y.valid() || x.tape() != y.tape()) {
    fail(ErrorKind::kNoGraph, "sinkhorn_ot: inputs are not on one tape");
  }
  check_points("sinkhorn_ot", x.value(), y.value());
  auto raw = std::make_shared<Tensor>(raw_costs(x.value(), y.value()));
  auto c = std::make_shared<Tensor>(clamp_costs(*raw));
  const bool needs_grad = x.requires_grad() || y.requires_grad();
  auto trace = std::make_shared<Trace>();
  SinkhornResult r = solve(*c, cfg, needs_grad && cfg.unroll_grad ? trace.get() : nullptr);
  SinkhornVarResult out;
  out.status = r.status;
  out.f = r.f;
  out.g = r.g;
  const NodeId ix = x.id(), iy = y.id();
  const double eps = cfg.epsilon;
  const bool unroll = cfg.unroll_grad;
  auto f = std::make_shared<Tensor>(std::move(r.f));
  auto g = std::make_shared<Tensor>(std::move(r.g));
  out.value = x.tape()->record(
      "sinkhorn_ot", Tensor::scalar(r.value), {x, y},
      [ix, iy, eps, unroll, raw, c, trace, f, g](Tape& tp, NodeId, const Tensor& go) {
        const double s = go.item();
        if (s == 0.0) return;
        Tensor w = unroll ? unrolled_cost_grad(*c, *trace, eps) : plan(*c, *f, *g, eps);
        mask_clamped(w, *raw);
        cost_backward(tp, ix, iy, w, s);
      });
  return out;
}

namespace {

// Orders a pair of clouds by size, then lexicographically by values.
bool ordered(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) return x.shape() < y.shape();
  const auto xs = x.values(), ys = y.values();
  return !std::lexicographical_compare(ys.begin(), ys.end(), xs.begin(), xs.end());
}

}  // namespace

double sinkhorn_divergence(const Tensor& x, const Tensor& y, const SinkhornConfig& cfg) {
  const double xy = ordered(x, y) ? sinkhorn_ot(x, y, cfg).value : sinkhorn_ot(y, x, cfg).value;
  const double xx = sinkhorn_ot(x, x, cfg).value;
  const double yy = sinkhorn_ot(y, y, cfg).value;
  return xy - 0.5 * (xx + yy);
}

Var sinkhorn_divergence(Var x, Var y, const SinkhornConfig& cfg) {
  Var xy = ordered(x.value(), y.value()) ? sinkhorn_ot(x, y, cfg).value
                                         : sinkhorn_ot(y, x, cfg).value;
  Var xx = sinkhorn_ot(x, x, cfg).value;
  Var yy = sinkhorn_ot(y, y, cfg).value;
  return sub(xy, scale(add(xx, yy), 0.5));
}

// ---------------------------------------------------------------------------
// Exact W2

std::vector<std::size_t> min_cost_assignment(const Tensor& cost) {
  const std::size_t n = cost.rows();
  if (cost.cols() != n) {
    fail(ErrorKind::kSize, "assignment needs a square cost matrix, got " +
                               shape_string(cost.shape()));
  }
  // Shortest augmenting path with potentials, 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

namespace {

void check_equal_counts(const Tensor& x, const Tensor& y) {
  check_points("exact_w2", x, y);
  if (x.rows() != y.rows()) {
    fail(ErrorKind::kSize, "exact_w2 needs equal sample counts, got " +
                               std::to_string(x.rows()) + " and " + std::to_string(y.rows()));
  }
}

// Direct squared differences; translation covariant up to rounding of x - y.
Tensor direct_costs(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.rows(), m = y.rows(), d = x.cols();
  Tensor c(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x(i, k) - y(j, k);
        s += diff * diff;
      }
      c(i, j) = s;
    }
  return c;
}

double assignment_value(const Tensor& c, const std::vector<std::size_t>& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += c(i, a[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

double exact_w2(const Tensor& x, const Tensor& y) {
  check_equal_counts(x, y);
  const Tensor c = direct_costs(x, y);
  return assignment_value(c, min_cost_assignment(c));
}

Var exact_w2(Var x, Var y) {
  if (!x.valid() || !y.valid() || x.tape() != y.tape()) {
    fail(ErrorKind::kNoGraph, "exact_w2: inputs are not on one tape");
  }
  check_equal_counts(x.value(), y.value());
  const Tensor c = direct_costs(x.value(), y.value());
  auto assignment = min_cost_assignment(c);
  const double value = assignment_value(c, assignment);
  const NodeId ix = x.id(), iy = y.id();
  const std::size_t n = assignment.size();
  return x.tape()->record("exact_w2", Tensor::scalar(value), {x, y},
                          [ix, iy, n, assignment = std::move(assignment)](
                              Tape& tp, NodeId, const Tensor& go) {
                            Tensor w(Shape{n, n});
                            for (std::size_t i = 0; i < n; ++i)
                              w(i, assignment[i]) = 1.0 / static_cast<double>(n);
                            cost_backward(tp, ix, iy, w, go.item());
                          });
}

// ---------------------------------------------------------------------------
// MMD

double median_bandwidth(const Tensor& x, const Tensor& y) {
  check_points("mmd", x, y);
  const std::size_t n = x.rows(), m = y.rows(), d = x.cols();
  auto point = [&](std::size_t i) { return i < n ? x.data() + i * d : y.data() + (i - n) * d; };
  std::vector<double> dist;
  dist.reserve((n + m) * (n + m - 1) / 2);
  for (std::size_t i = 0; i < n + m; ++i)
    for (std::size_t j = i + 1; j < n + m; ++j) {
      const double* a = point(i);
      const double* b = point(j);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      dist.push_back(std::sqrt(s));
    }
  if (dist.empty()) return 1.0;
  std::sort(dist.begin(), dist.end());
  const std::size_t mid = dist.size() / 2;
  const double med = dist.size() % 2 ? dist[mid] : 0.5 * (dist[mid - 1] + dist[mid]);
  return med > 0.0 ? med : 1.0;
}

double mmd(const Tensor& x, const Tensor& y, std::optional<double> bandwidth) {
  Tape tape;
  return mmd(tape.constant(x), tape.constant(y), bandwidth).value().item();
}

Var mmd(Var x, Var y, std::optional<double> bandwidth) {
  const double h = bandwidth ? *bandwidth : median_bandwidth(x.value(), y.value());
  if (!(h > 0.0)) fail(ErrorKind::kConfig, "MMD bandwidth must be positive");
  const double s = -1.0 / (2.0 * h * h);
  Var kxx = mean(exp(scale(cost_matrix(x, x), s)));
  Var kyy = mean(exp(scale(cost_matrix(y, y), s)));
  Var kxy = mean(exp(scale(cost_matrix(x, y), s)));
  return sub(add(kxx, kyy), scale(kxy, 2.0));
}

// ---------------------------------------------------------------------------
// KL

namespace {

constexpr double kSimplexTol = 1e-6;
constexpr double kClamp = 1e-12;

void check_simplex(const Tensor& x, const char* which) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double v = x(r, c);
      if (v < -kSimplexTol) {
        fail(ErrorKind::kDomain, std::string("KL divergence: ") + which + " row " +
                                     std::to_string(r) + " has negative entry " +
                                     std::to_string(v) + " (use the softmax normalizer)");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSimplexTol) {
      fail(ErrorKind::kDomain, std::string("KL divergence: ") + which + " row " +
                                   std::to_string(r) + " sums to " + std::to_string(sum) +
                                   ", not 1 (use the softmax normalizer)");
    }
  }
}

std::vector<double> mean_row(const Tensor& x) {
  std::vector<double> p(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) p[c] += x(r, c);
  for (double& v : p) v /= static_cast<double>(x.rows());
  return p;
}

}  // namespace

double kl_divergence(const Tensor& x, const Tensor& y) {
  Tape tape;
  return kl_divergence(tape.constant(x), tape.constant(y)).value().item();
}

Var kl_divergence(Var x, Var y) {
  if (!x.valid() || !y.valid() || x.tape() != y.tape()) {
    fail(ErrorKind::kNoGraph, "kl_divergence: inputs are not on one tape");
  }
  check_points("kl_divergence", x.value(), y.value());
  check_simplex(x.value(), "first measure");
  check_simplex(y.value(), "second measure");
  const std::vector<double> p = mean_row(x.value()), q = mean_row(y.value());
  double value = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    value += p[k] * (std::log(std::max(p[k], kClamp)) - std::log(std::max(q[k], kClamp)));
  }
  const NodeId ix = x.id(), iy = y.id();
  return x.tape()->record(
      "kl_divergence", Tensor::scalar(value), {x, y},
      [ix, iy, p, q](Tape& tp, NodeId, const Tensor& go) {
        const double s = go.item();
        const std::size_t d = p.size();
        std::vector<double> dp(d), dq(d);
        for (std::size_t k = 0; k < d; ++k) {
          const double lp = std::log(std::max(p[k], kClamp));
          const double lq = std::log(std::max(q[k], kClamp));
          dp[k] = lp - lq + (p[k] > kClamp ? 1.0 : 0.0);
          dq[k] = q[k] > kClamp ? -p[k] / q[k] : 0.0;
        }
        if (Tensor* gx = tp.grad_slot(ix)) {
          const double w = s / static_cast<double>(gx->rows());
          for (std::size_t r = 0; r < gx->rows(); ++r)
            for (std::size_t k = 0; k < d; ++k) (*gx)(r, k) += w * dp[k];
        }
        if (Tensor* gy = tp.grad_slot(iy)) {
          const double w = s / static_cast<double>(gy->rows());
          for (std::size_t r = 0; r < gy->rows(); ++r)
            for (std::size_t k = 0; k < d; ++k) (*gy)(r, k) += w * dq[k];
        }
      });
}

// ---------------------------------------------------------------------------
// Alignment loss

Var pair_divergence(Var x, Var y, Divergence kind, const SinkhornConfig& scfg,
                    int* sinkhorn_warnings) {
  switch (kind) {
    case Divergence::kSinkhorn: {
      auto xy = sinkhorn_ot(x, y, scfg);
      auto xx = sinkhorn_ot(x, x, scfg);
      auto yy = sinkhorn_ot(y, y, scfg);
      if (sinkhorn_warnings) {
        *sinkhorn_warnings += !xy.status.converged + !xx.status.converged + !yy.status.converged;
      }
      return sub(xy.value, scale(add(xx.value, yy.value), 0.5));
    }
    case Divergence::kExactW2: return exact_w2(x, y);
    case Divergence::kMmd: return mmd(x, y);
    case Divergence::kKl: {
      Var forward = kl_divergence(x, y);
      Var reverse = kl_divergence(y, x);
      return forward.value().item() >= reverse.value().item() ? forward : reverse;
    }
  }
  return exact_w2(x, y);
}

AlignmentResult alignment_loss(const std::vector<std::vector<Var>>& taps,
                               const AlignmentConfig& cfg, const SinkhornConfig& scfg) {
  const std::size_t k = taps.size();
  if (k < 2) fail(ErrorKind::kConfig, "alignment needs at least two source domains");
  const std::size_t units = taps[0].size();
  if (units == 0) fail(ErrorKind::kConfig, "alignment needs at least one feature unit");
  for (const auto& t : taps) {
    if (t.size() != units) fail(ErrorKind::kConfig, "domains disagree on the number of taps");
  }
  AlignmentResult out;
  for (std::size_t u = 0; u < units; ++u) {
    std::vector<Var> z(k);
    for (std::size_t d = 0; d < k; ++d) {
      if (taps[d][u].value().cols() != taps[0][u].value().cols()) {
        fail(ErrorKind::kDimension, "feature widths differ across domains: " +
                                        shape_string(taps[d][u].value().shape()) + " vs " +
                                        shape_string(taps[0][u].value().shape()));
      }
      z[d] = normalize(taps[d][u], cfg.normalizer);
    }
    // Self terms are shared by every pair that involves the domain.
    std::vector<Var> self;
    if (cfg.divergence == Divergence::kSinkhorn) {
      for (std::size_t d = 0; d < k; ++d) {
        auto r = sinkhorn_ot(z[d], z[d], scfg);
        out.sinkhorn_warnings += !r.status.converged;
        self.push_back(r.value);
      }
    }
    Var best;
    double best_value = -std::numeric_limits<double>::infinity();
    std::pair<std::size_t, std::size_t> best_pair{0, 1};
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) {
        Var dv;
        if (cfg.divergence == Divergence::kSinkhorn) {
          auto r = sinkhorn_ot(z[i], z[j], scfg);
          out.sinkhorn_warnings += !r.status.converged;
          dv = sub(r.value, scale(add(self[i], self[j]), 0.5));
        } else {
          dv = pair_divergence(z[i], z[j], cfg.divergence, scfg);
        }
        const double v = dv.value().item();
        if (v > best_value) {
          best_value = v;
          best = dv;
          best_pair = {i, j};
        }
      }
    out.per_unit.push_back(best_value);
    out.argmax.push_back(best_pair);
    out.loss = u == 0 ? best : add(out.loss, best);
  }
  return out;
}

std::vector<std::vector<Var>> alignment_units(const std::vector<ModelOutput>& outputs,
                                              Granularity granularity) {
  std::vector<std::vector<Var>> units;
  for (const ModelOutput& o : outputs) {
    if (o.taps.empty()) fail(ErrorKind::kConfig, "model exposes no feature taps to align");
    if (granularity == Granularity::kStackWise) {
      units.push_back(o.taps);
    } else {
      std::vector<Var> flat;
      for (const auto& stack : o.block_taps) flat.insert(flat.end(), stack.begin(), stack.end());
      units.push_back(std::move(flat));
    }
  }
  return units;
}

TheoremCheck theorem_gap_check(const NBeatsModel& model, const std::vector<Tensor>& batches,
                               Normalizer normalizer, const SinkhornConfig& scfg) {
  const std::size_t k = batches.size();
  if (k < 2) fail(ErrorKind::kConfig, "theorem check needs at least two domains");
  NBeatsModel copy = model;
  const std::size_t stacks = copy.config().stacks;
  TheoremCheck out;
  for (std::size_t m = 0; m < stacks; ++m) {
    std::vector<Tensor> z;
    for (const Tensor& x : batches) z.push_back(normalize(stack_feature(x, copy, m), normalizer));
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j)
        best = std::max(best, sinkhorn_divergence(z[i], z[j], scfg));
    out.lhs += best;
  }
  const auto constants = lipschitz_constants(copy);
  for (std::size_t m = 0; m < stacks; ++m) {
    const double c = lipschitz_bound(constants, m, copy.config().blocks, 1.0,
                                     copy.config().legacy_residual);
    out.constant += std::max(c * c, 1.0);
  }
  double dist = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j)
      dist = std::max(dist, sinkhorn_ot(batches[i], batches[j], scfg).value);
  out.input_distance = dist;
  out.rhs = out.constant * dist;
  out.holds = out.lhs <= out.rhs;
  return out;
}

}  // namespace fanbeats
