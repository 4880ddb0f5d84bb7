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

#include "fanbeats/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "fanbeats/error.hpp"

namespace fanbeats {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kRank: return "rank error";
    case ErrorKind::kNoGraph: return "no-graph error";
    case ErrorKind::kEmptyReduction: return "empty-reduction error";
    case ErrorKind::kOracle: return "oracle error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kSize: return "size error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kUsage: return "usage error";
  }
  return "error";
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

std::size_t extent_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(extent_product(shape_), fill) {
  if (shape_.size() > 2) {
    fail(ErrorKind::kRank, "tensors of rank > 2 are not supported: " +
                               shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) {
    fail(ErrorKind::kRank, "tensors of rank > 2 are not supported: " +
                               shape_string(shape_));
  }
  if (extent_product(shape_) != data_.size()) {
    fail(ErrorKind::kDimension, "shape " + shape_string(shape_) + " needs " +
                                    std::to_string(extent_product(shape_)) +
                                    " values, got " +
                                    std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      fail(ErrorKind::kDimension, "ragged matrix literal");
    }
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

std::size_t Tensor::rows() const noexcept {
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.size() == 2 ? shape_[1] : shape_[0];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    fail(ErrorKind::kRank, "item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (data_.size() != other.data_.size()) {
    fail(ErrorKind::kDimension, "cannot add " + shape_string(other.shape_) +
                                    " into " + shape_string(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (data_.size() != other.data_.size()) {
    fail(ErrorKind::kDimension, "cannot subtract " + shape_string(other.shape_) +
                                    " from " + shape_string(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  if (b.rows() != k) {
    fail(ErrorKind::kDimension, "matmul shape mismatch: " +
                                    shape_string(a.shape()) + " x " +
                                    shape_string(b.shape()));
  }
  Tensor out(Shape{r, c});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    double* orow = po + i * c;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
  return out;
}

double frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    fail(ErrorKind::kDimension, "max_abs_diff shape mismatch: " +
                                    shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double spectral_norm(const Tensor& a) {
  if (!a.all_finite()) {
    fail(ErrorKind::kNumeric, "spectral norm of a non-finite matrix");
  }
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0 || c == 0) return 0.0;
  // Deterministic, non-degenerate start vector.
  std::vector<double> v(c), w(r);
  for (std::size_t j = 0; j < c; ++j) v[j] = 1.0 + 0.1 * std::sin(1.0 + j);
  auto normalize = [](std::vector<double>& x) {
    double n = 0.0;
    for (double e : x) n += e * e;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& e : x) e /= n;
    return n;
  };
  normalize(v);
  double sigma = 0.0;
  std::vector<double> next(c);
  for (int iter = 0; iter < 64; ++iter) {
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += a(i, j) * v[j];
      w[i] = s;
    }
    const double estimate = normalize(w);  // ||A v|| with ||v|| = 1
    if (estimate == 0.0) return sigma;
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) next[j] += a(i, j) * w[i];
    const double refined = normalize(next);  // ||A^T u|| >= ||A v||
    v.swap(next);
    const double change = std::abs(refined - sigma) / refined;
    sigma = refined;
    if (change < 1e-10) break;
  }
  return sigma;
}

}  // namespace fanbeats
