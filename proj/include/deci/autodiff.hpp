#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

#include "deci/tensor.hpp"

// Reverse-mode differentiation over tensor-valued nodes. Each recorded node
// holds its forward value and a vector-Jacobian rule; nodes are appended in
// evaluation order, so walking the tape backwards is a reverse topological
// traversal.
namespace deci::ad {

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tape;

class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct VjpArgs {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::span<const Tensor* const> inputs;
  // nullptr where the input does not need a gradient.
  std::span<Tensor* const> input_grads;
};

using Vjp = std::function<void(const VjpArgs&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Leaf whose gradient is collected by backward().
  Var variable(Tensor value);
  Var record(Tensor value, std::initializer_list<Var> parents, Vjp vjp);
  Var record(Tensor value, std::span<const Var> parents, Vjp vjp);

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one value.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  // Zero-filled when no gradient reached the node.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    Vjp vjp;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

// Elementwise / structural ops.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_row_vector(Var x, Var bias);
Var silu(Var x);
Var softplus(Var x);
Var exp(Var x);
Var matmul(Var x, Var w);     // x·w
Var matmul_nt(Var x, Var w);  // x·wᵀ
Var rms_norm(Var x, Var scale);
Var embedding(Var table, std::span<const int> ids);
Var gather_rows(Var x, std::span<const std::size_t> indices);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var sum(Var x);
Var sum_squares(Var x);
// Depthwise causal convolution without activation: x L×D, w K×D, b D.
Var causal_conv1d(Var x, Var w, Var b);
// Mean negative log-likelihood of `targets` under row-wise softmax of
// `logits`. Entries with target < 0 are skipped.
Var cross_entropy(Var logits, std::span<const int> targets);

}  // namespace deci::ad
