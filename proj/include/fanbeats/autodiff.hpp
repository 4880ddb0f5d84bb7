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

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive in execution order, so the record is
// topologically sorted by construction. Var is a cheap handle (tape, node id)
// that participates in the graph only when one of its ancestors is a leaf
// created with requires_grad. Nodes that cannot reach such a leaf keep no
// adjoint and cost nothing in backward().
//
// A tape and its vars belong to one thread.

#ifndef FANBEATS_AUTODIFF_HPP
#define FANBEATS_AUTODIFF_HPP

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "fanbeats/tensor.hpp"

namespace fanbeats {

using NodeId = std::uint32_t;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  NodeId id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Gradients of a scalar loss keyed by leaf node id.
class Gradients {
 public:
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  bool contains(Var v) const { return contains(v.id()); }
  const Tensor& at(NodeId id) const;
  const Tensor& operator[](Var v) const { return at(v.id()); }
  const std::map<NodeId, Tensor>& all() const noexcept { return grads_; }
  void insert(NodeId id, Tensor g) { grads_.insert_or_assign(id, std::move(g)); }

 private:
  std::map<NodeId, Tensor> grads_;
};

class Tape {
 public:
  /// Adjoint of one recorded node: reads the node's inputs from the tape and
  /// accumulates their gradient contributions given the output gradient.
  using Adjoint = std::function<void(Tape&, NodeId self, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op output. The adjoint is dropped when no input needs grad.
  /// A non-finite output raises ErrorKind::kNumeric naming `op`.
  Var record(const char* op, Tensor value, std::vector<Var> inputs,
             Adjoint adjoint);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  bool is_leaf(NodeId id) const { return nodes_[id].leaf; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Adds g into the gradient slot of `input`; ignored for nodes that do not
  /// require grad. Only meaningful inside an adjoint.
  void accumulate(NodeId input, const Tensor& g);
  /// Mutable gradient slot, zero-initialised on first use.
  Tensor* grad_slot(NodeId input);

  /// Gradients of a scalar loss w.r.t. every requires_grad leaf. Each node is
  /// visited exactly once, in reverse recording order.
  Gradients backward(Var loss);

  /// Number of adjoints executed by the last backward() call.
  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> inputs;
    Adjoint adjoint;
    bool requires_grad = false;
    bool leaf = false;
  };

  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  std::size_t visits_ = 0;
};

enum class UnaryKind { kRelu, kTanh, kExp, kLog, kNeg, kSquare, kAbs };
enum class ReduceKind { kSum, kMean, kMax, kLogSumExp };

// Primitives. Every op checks shapes and raises ErrorKind::kDimension with both
// shapes on mismatch.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// x[r x c] + bias[c] broadcast over rows.
Var add_row(Var x, Var bias);
Var matmul(Var a, Var b);
/// a b^T without materialising the transpose.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
/// x W^T + b, the fully connected layer with W stored as (out x in).
Var linear(Var x, Var weight, Var bias);
Var map_unary(UnaryKind kind, Var x);
/// axis: nullopt reduces everything to a scalar; 0 reduces rows (result has
/// one entry per column); 1 reduces columns (one entry per row).
Var reduce(ReduceKind kind, Var x, std::optional<int> axis = std::nullopt);
Var softmax_rows(Var x);

inline Var relu(Var x) { return map_unary(UnaryKind::kRelu, x); }
inline Var tanh(Var x) { return map_unary(UnaryKind::kTanh, x); }
inline Var exp(Var x) { return map_unary(UnaryKind::kExp, x); }
inline Var log(Var x) { return map_unary(UnaryKind::kLog, x); }
inline Var neg(Var x) { return map_unary(UnaryKind::kNeg, x); }
inline Var square(Var x) { return map_unary(UnaryKind::kSquare, x); }
inline Var sum(Var x) { return reduce(ReduceKind::kSum, x); }
inline Var mean(Var x) { return reduce(ReduceKind::kMean, x); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// Gradient-free versions of the same math for evaluation code paths.
Tensor map_unary(UnaryKind kind, const Tensor& x);
Tensor reduce(ReduceKind kind, const Tensor& x, std::optional<int> axis = std::nullopt);
Tensor softmax_rows(const Tensor& x);

/// Central-difference gradient of a scalar function:
/// (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double h = 1e-5);

}  // namespace fanbeats

#endif  // FANBEATS_AUTODIFF_HPP
