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

#include "fanbeats/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fanbeats/error.hpp"

namespace fanbeats {

const Tensor& Var::value() const {
  if (!tape_) fail(ErrorKind::kNoGraph, "value() on a detached Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const Tensor& Gradients::at(NodeId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    fail(ErrorKind::kNoGraph, "no gradient recorded for node " + std::to_string(id));
  }
  return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs,
                 Adjoint adjoint) {
  if (!value.all_finite()) {
    fail(ErrorKind::kNumeric, std::string(op) + " produced a non-finite value");
  }
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) {
      fail(ErrorKind::kNoGraph, std::string(op) + ": input belongs to another tape");
    }
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (node.requires_grad) node.adjoint = std::move(adjoint);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

void Tape::accumulate(NodeId input, const Tensor& g) {
  if (!nodes_[input].requires_grad) return;
  auto& slot = grads_[input];
  if (!slot) {
    slot = g;
  } else {
    *slot += g;
  }
}

Tensor* Tape::grad_slot(NodeId input) {
  if (!nodes_[input].requires_grad) return nullptr;
  auto& slot = grads_[input];
  if (!slot) slot = Tensor::zeros_like(nodes_[input].value);
  return &*slot;
}

Gradients Tape::backward(Var loss) {
  if (loss.tape() != this) fail(ErrorKind::kNoGraph, "loss is not on this tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    fail(ErrorKind::kRank, "backward needs a scalar loss, got shape " +
                               shape_string(lv.shape()));
  }
  if (!nodes_[loss.id()].requires_grad) {
    fail(ErrorKind::kNoGraph, "loss does not depend on any requires_grad leaf");
  }
  grads_.assign(nodes_.size(), std::nullopt);
  grads_[loss.id()] = Tensor(lv.shape(), 1.0);
  visits_ = 0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!grads_[i] || !node.adjoint) continue;
    ++visits_;
    // The adjoint may write into grads_ of lower ids only, so the reference
    // to this slot stays valid.
    const Tensor grad_out = std::move(*grads_[i]);
    node.adjoint(*this, static_cast<NodeId>(i), grad_out);
  }
  Gradients out;
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    if (nodes_[i].leaf && nodes_[i].requires_grad) {
      out.insert(static_cast<NodeId>(i), grads_[i] ? std::move(*grads_[i])
                                                   : Tensor::zeros_like(nodes_[i].value));
    }
  }
  grads_.clear();
  return out;
}

namespace {

Tape& common_tape(const char* op, Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    fail(ErrorKind::kNoGraph, std::string(op) + ": inputs are not on one tape");
  }
  return *a.tape();
}

Tape& tape_of(const char* op, Var a) {
  if (!a.valid()) fail(ErrorKind::kNoGraph, std::string(op) + ": detached input");
  return *a.tape();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::kDimension, std::string(op) + " shape mismatch: " +
                                    shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = common_tape("add", a, b);
  const Tensor& av = a.value();
  require_same_shape("add", av, b.value());
  Tensor out = av;
  out += b.value();
  const NodeId ia = a.id(), ib = b.id();
  return t.record("add", std::move(out), {a, b},
                  [ia, ib](Tape& tp, NodeId, const Tensor& g) {
                    tp.accumulate(ia, g);
                    tp.accumulate(ib, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = common_tape("sub", a, b);
  const Tensor& av = a.value();
  require_same_shape("sub", av, b.value());
  Tensor out = av;
  out -= b.value();
  const NodeId ia = a.id(), ib = b.id();
  return t.record("sub", std::move(out), {a, b},
                  [ia, ib](Tape& tp, NodeId, const Tensor& g) {
                    tp.accumulate(ia, g);
                    Tensor ng = g;
                    ng *= -1.0;
                    tp.accumulate(ib, ng);
                  });
}

Var mul(Var a, Var b) {
  Tape& t = common_tape("mul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const NodeId ia = a.id(), ib = b.id();
  return t.record("mul", std::move(out), {a, b},
                  [ia, ib](Tape& tp, NodeId, const Tensor& g) {
                    const Tensor& x = tp.value(ia);
                    const Tensor& y = tp.value(ib);
                    if (Tensor* ga = tp.grad_slot(ia))
                      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
                    if (Tensor* gb = tp.grad_slot(ib))
                      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * x[i];
                  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of("scale", a);
  Tensor out = a.value();
  out *= s;
  const NodeId ia = a.id();
  return t.record("scale", std::move(out), {a},
                  [ia, s](Tape& tp, NodeId, const Tensor& g) {
                    Tensor sg = g;
                    sg *= s;
                    tp.accumulate(ia, sg);
                  });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of("add_scalar", a);
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  const NodeId ia = a.id();
  return t.record("add_scalar", std::move(out), {a},
                  [ia](Tape& tp, NodeId, const Tensor& g) { tp.accumulate(ia, g); });
}

Var add_row(Var x, Var bias) {
  Tape& t = common_tape("add_row", x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols()) {
    fail(ErrorKind::kDimension, "add_row shape mismatch: " + shape_string(xv.shape()) +
                                    " + " + shape_string(bv.shape()));
  }
  Tensor out = xv;
  const std::size_t r = xv.rows(), c = xv.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += bv[j];
  const NodeId ix = x.id(), ib = bias.id();
  return t.record("add_row", std::move(out), {x, bias},
                  [ix, ib, r, c](Tape& tp, NodeId, const Tensor& g) {
                    tp.accumulate(ix, g);
                    if (Tensor* gb = tp.grad_slot(ib))
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g(i, j);
                  });
}

Var matmul(Var a, Var b) {
  Tape& t = common_tape("matmul", a, b);
  Tensor out = matmul(a.value(), b.value());
  const NodeId ia = a.id(), ib = b.id();
  return t.record("matmul", std::move(out), {a, b},
                  [ia, ib](Tape& tp, NodeId, const Tensor& g) {
                    const Tensor& av = tp.value(ia);
                    const Tensor& bv = tp.value(ib);
                    const std::size_t r = av.rows(), k = av.cols(), c = bv.cols();
                    // dA = G B^T, dB = A^T G
                    if (Tensor* ga = tp.grad_slot(ia)) {
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < c; ++j) s += g(i, j) * bv(p, j);
                          (*ga)(i, p) += s;
                        }
                    }
                    if (Tensor* gb = tp.grad_slot(ib)) {
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = av(i, p);
                          if (aip == 0.0) continue;
                          for (std::size_t j = 0; j < c; ++j) (*gb)(p, j) += aip * g(i, j);
                        }
                    }
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = common_tape("matmul_nt", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t r = av.rows(), k = av.cols(), c = bv.rows();
  if (bv.cols() != k) {
    fail(ErrorKind::kDimension, "matmul_nt shape mismatch: " + shape_string(av.shape()) +
                                    " x " + shape_string(bv.shape()) + "^T");
  }
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* ar = av.data() + i * k;
    for (std::size_t j = 0; j < c; ++j) {
      const double* br = bv.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out(i, j) = s;
    }
  }
  const NodeId ia = a.id(), ib = b.id();
  return t.record("matmul_nt", std::move(out), {a, b},
                  [ia, ib, r, k, c](Tape& tp, NodeId, const Tensor& g) {
                    const Tensor& av = tp.value(ia);
                    const Tensor& bv = tp.value(ib);
                    // dA = G B, dB = G^T A
                    if (Tensor* ga = tp.grad_slot(ia)) {
                      for (std::size_t i = 0; i < r; ++i) {
                        double* gr = ga->data() + i * k;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double gij = g(i, j);
                          if (gij == 0.0) continue;
                          const double* br = bv.data() + j * k;
                          for (std::size_t p = 0; p < k; ++p) gr[p] += gij * br[p];
                        }
                      }
                    }
                    if (Tensor* gb = tp.grad_slot(ib)) {
                      for (std::size_t i = 0; i < r; ++i) {
                        const double* ar = av.data() + i * k;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double gij = g(i, j);
                          if (gij == 0.0) continue;
                          double* gr = gb->data() + j * k;
                          for (std::size_t p = 0; p < k; ++p) gr[p] += gij * ar[p];
                        }
                      }
                    }
                  });
}

Var transpose(Var a) {
  Tape& t = tape_of("transpose", a);
  Tensor out = transpose(a.value());
  const NodeId ia = a.id();
  return t.record("transpose", std::move(out), {a},
                  [ia](Tape& tp, NodeId, const Tensor& g) {
                    Tensor gt = transpose(g);
                    if (Tensor* ga = tp.grad_slot(ia))
                      for (std::size_t i = 0; i < gt.size(); ++i) (*ga)[i] += gt[i];
                  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = common_tape("linear", x, weight);
  common_tape("linear", x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  const std::size_t n = xv.rows(), in = xv.cols(), out_dim = wv.rows();
  if (wv.cols() != in || bv.size() != out_dim) {
    fail(ErrorKind::kDimension, "linear shape mismatch: x" + shape_string(xv.shape()) +
                                    " W" + shape_string(wv.shape()) + " b" +
                                    shape_string(bv.shape()));
  }
  Tensor out(Shape{n, out_dim});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = xv.data() + i * in;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = wv.data() + o * in;
      double s = bv[o];
      for (std::size_t k = 0; k < in; ++k) s += xr[k] * wr[k];
      out(i, o) = s;
    }
  }
  const NodeId ix = x.id(), iw = weight.id(), ib = bias.id();
  return t.record(
      "linear", std::move(out), {x, weight, bias},
      [ix, iw, ib, n, in, out_dim](Tape& tp, NodeId, const Tensor& g) {
        const Tensor& xv = tp.value(ix);
        const Tensor& wv = tp.value(iw);
        if (Tensor* gx = tp.grad_slot(ix)) {
          for (std::size_t i = 0; i < n; ++i) {
            double* gr = gx->data() + i * in;
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double go = g(i, o);
              if (go == 0.0) continue;
              const double* wr = wv.data() + o * in;
              for (std::size_t k = 0; k < in; ++k) gr[k] += go * wr[k];
            }
          }
        }
        if (Tensor* gw = tp.grad_slot(iw)) {
          for (std::size_t i = 0; i < n; ++i) {
            const double* xr = xv.data() + i * in;
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double go = g(i, o);
              if (go == 0.0) continue;
              double* gwr = gw->data() + o * in;
              for (std::size_t k = 0; k < in; ++k) gwr[k] += go * xr[k];
            }
          }
        }
        if (Tensor* gb = tp.grad_slot(ib)) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < out_dim; ++o) (*gb)[o] += g(i, o);
        }
      });
}

Tensor map_unary(UnaryKind kind, const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    switch (kind) {
      case UnaryKind::kRelu: out[i] = v > 0.0 ? v : 0.0; break;
      case UnaryKind::kTanh: out[i] = std::tanh(v); break;
      case UnaryKind::kExp: out[i] = std::exp(v); break;
      case UnaryKind::kLog:
        if (!(v > 0.0)) {
          fail(ErrorKind::kDomain, "log of non-positive entry " + std::to_string(v) +
                                       " at index " + std::to_string(i));
        }
        out[i] = std::log(v);
        break;
      case UnaryKind::kNeg: out[i] = -v; break;
      case UnaryKind::kSquare: out[i] = v * v; break;
      case UnaryKind::kAbs: out[i] = std::abs(v); break;
    }
  }
  return out;
}

Var map_unary(UnaryKind kind, Var x) {
  Tape& t = tape_of("map_unary", x);
  Tensor out = map_unary(kind, x.value());
  const NodeId ix = x.id();
  return t.record("map_unary", std::move(out), {x},
                  [ix, kind](Tape& tp, NodeId self, const Tensor& g) {
                    Tensor* gx = tp.grad_slot(ix);
                    if (!gx) return;
                    const Tensor& xv = tp.value(ix);
                    const Tensor& yv = tp.value(self);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      double d = 0.0;
                      switch (kind) {
                        case UnaryKind::kRelu: d = xv[i] > 0.0 ? 1.0 : 0.0; break;
                        case UnaryKind::kTanh: d = 1.0 - yv[i] * yv[i]; break;
                        case UnaryKind::kExp: d = yv[i]; break;
                        case UnaryKind::kLog: d = 1.0 / xv[i]; break;
                        case UnaryKind::kNeg: d = -1.0; break;
                        case UnaryKind::kSquare: d = 2.0 * xv[i]; break;
                        case UnaryKind::kAbs:
                          d = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
                          break;
                      }
                      (*gx)[i] += g[i] * d;
                    }
                  });
}

namespace {

// Strided view of the groups reduced by one reduce() call.
struct ReducePlan {
  std::size_t outputs = 1;
  std::size_t count = 0;
  std::size_t stride = 1;
  std::size_t group_stride = 0;  // start offset between consecutive outputs
  Shape out_shape;
};

ReducePlan plan_reduce(const Tensor& x, std::optional<int> axis) {
  ReducePlan p;
  if (!axis) {
    p.count = x.size();
    return p;
  }
  const int ax = *axis;
  const int rank = static_cast<int>(x.rank());
  if (ax < 0 || ax >= std::max(rank, 1)) {
    fail(ErrorKind::kRank, "reduce axis " + std::to_string(ax) + " outside rank " +
                               std::to_string(rank));
  }
  if (rank <= 1) {
    p.count = x.size();
    return p;
  }
  const std::size_t r = x.rows(), c = x.cols();
  if (ax == 0) {
    p.outputs = c;
    p.count = r;
    p.stride = c;
    p.group_stride = 1;
    p.out_shape = Shape{c};
  } else {
    p.outputs = r;
    p.count = c;
    p.stride = 1;
    p.group_stride = c;
    p.out_shape = Shape{r};
  }
  return p;
}

}  // namespace

Tensor reduce(ReduceKind kind, const Tensor& x, std::optional<int> axis) {
  const ReducePlan p = plan_reduce(x, axis);
  if (p.count == 0) fail(ErrorKind::kEmptyReduction, "reduction over an empty axis");
  Tensor out(p.out_shape);
  for (std::size_t o = 0; o < p.outputs; ++o) {
    const double* base = x.data() + o * p.group_stride;
    double acc = 0.0;
    switch (kind) {
      case ReduceKind::kSum:
      case ReduceKind::kMean:
        for (std::size_t k = 0; k < p.count; ++k) acc += base[k * p.stride];
        if (kind == ReduceKind::kMean) acc /= static_cast<double>(p.count);
        break;
      case ReduceKind::kMax:
        acc = base[0];
        for (std::size_t k = 1; k < p.count; ++k) acc = std::max(acc, base[k * p.stride]);
        break;
      case ReduceKind::kLogSumExp: {
        double m = base[0];
        for (std::size_t k = 1; k < p.count; ++k) m = std::max(m, base[k * p.stride]);
        double s = 0.0;
        for (std::size_t k = 0; k < p.count; ++k) s += std::exp(base[k * p.stride] - m);
        acc = m + std::log(s);
        break;
      }
    }
    out[o] = acc;
  }
  return out;
}

Var reduce(ReduceKind kind, Var x, std::optional<int> axis) {
  Tape& t = tape_of("reduce", x);
  Tensor out = reduce(kind, x.value(), axis);
  const NodeId ix = x.id();
  return t.record(
      "reduce", std::move(out), {x},
      [ix, kind, axis](Tape& tp, NodeId self, const Tensor& g) {
        Tensor* gx = tp.grad_slot(ix);
        if (!gx) return;
        const Tensor& xv = tp.value(ix);
        const Tensor& yv = tp.value(self);
        const ReducePlan p = plan_reduce(xv, axis);
        for (std::size_t o = 0; o < p.outputs; ++o) {
          const std::size_t start = o * p.group_stride;
          const double go = g[o];
          switch (kind) {
            case ReduceKind::kSum:
              for (std::size_t k = 0; k < p.count; ++k) (*gx)[start + k * p.stride] += go;
              break;
            case ReduceKind::kMean: {
              const double w = go / static_cast<double>(p.count);
              for (std::size_t k = 0; k < p.count; ++k) (*gx)[start + k * p.stride] += w;
              break;
            }
            case ReduceKind::kMax:
              // First maximal index takes the whole adjoint.
              for (std::size_t k = 0; k < p.count; ++k) {
                if (xv[start + k * p.stride] == yv[o]) {
                  (*gx)[start + k * p.stride] += go;
                  break;
                }
              }
              break;
            case ReduceKind::kLogSumExp:
              for (std::size_t k = 0; k < p.count; ++k) {
                const std::size_t idx = start + k * p.stride;
                (*gx)[idx] += go * std::exp(xv[idx] - yv[o]);
              }
              break;
          }
        }
      });
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  const std::size_t r = x.rows(), c = x.cols();
  for (std::size_t i = 0; i < r; ++i) {
    auto row = out.row(i);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double& v : row) {
      v = std::exp(v - m);
      s += v;
    }
    for (double& v : row) v /= s;
  }
  (void)c;
  return out;
}

Var softmax_rows(Var x) {
  Tape& t = tape_of("softmax_rows", x);
  Tensor out = softmax_rows(x.value());
  const NodeId ix = x.id();
  return t.record("softmax_rows", std::move(out), {x},
                  [ix](Tape& tp, NodeId self, const Tensor& g) {
                    Tensor* gx = tp.grad_slot(ix);
                    if (!gx) return;
                    const Tensor& y = tp.value(self);
                    const std::size_t r = y.rows(), c = y.cols();
                    for (std::size_t i = 0; i < r; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
                      for (std::size_t j = 0; j < c; ++j)
                        (*gx)(i, j) += y(i, j) * (g(i, j) - dot);
                    }
                  });
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double h) {
  if (!(h > 0.0)) fail(ErrorKind::kOracle, "finite difference step must be positive");
  Tensor grad = Tensor::zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorKind::kOracle, "non-finite function value at coordinate " +
                                   std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace fanbeats
