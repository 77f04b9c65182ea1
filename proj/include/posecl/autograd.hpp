#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "posecl/tensor.hpp"

namespace posecl {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using GradientMap = std::map<std::string, Tensor>;

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node list is always a
/// topological order. backward() walks it in reverse and accumulates
/// gradients in that fixed order, which keeps results bit-stable.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Tensor value);
  /// Named leaf whose gradient is reported by backward().
  Var parameter(std::string name, Tensor value);

  /// Gradients of a scalar loss for every named parameter leaf.
  /// Parameters the loss does not reach get an all-zero gradient.
  GradientMap backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Op names in recording order.
  std::vector<std::string> ops() const;

  // Used by the op implementations.
  struct Node {
    std::string op;
    Tensor value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::string param;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(std::string op, Tensor value, bool requires_grad,
           std::function<void(Tape&, std::size_t)> backward);
  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  /// Gradient buffer of a node, allocated (zeroed) on first use.
  std::vector<double>& grad_buffer(std::size_t id);

 private:
  std::vector<Node> nodes_;
};

// Ops. Every op checks that all inputs live on the same tape.

Var matmul(Var a, Var b);
/// x[m x n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var sigmoid(Var x);
Var reshape(Var x, Shape shape);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var square(Var x);
Var scale(Var x, double factor);
/// Elementwise product with a constant tensor of the same shape.
Var mul_const(Var x, const Tensor& factor);
Var sum(Var x);
Var mean(Var x);

/// Temperature softmax along the last axis of a rank-1 or rank-2 tensor.
Var softmax_temp(Var logits, double tau);

/// Sum over rows of KL(p || q) for rank-1 or rank-2 probability tensors.
/// q is floored at 1e-12 before the log. p is treated as a fixed target:
/// gradient flows to q only.
Var kl_div(Var p, Var q);

/// Mean of (a - b)^2 over elements where mask == 1 (all elements if mask is null).
/// Returns 0 when every element is masked out.
Var mse(Var a, Var b, const Tensor* mask = nullptr);

/// Rows of x[B x C*block] regrouped as [B*|channels| x block], keeping only the
/// requested channels (each a contiguous run of `block` columns).
Var gather_channels(Var x, std::span<const std::size_t> channels, std::size_t block);

/// Top-left rows x cols block of a rank-2 tensor; for rank 1, the first `cols` entries.
Var leading_block(Var x, std::size_t rows, std::size_t cols);

inline constexpr double kKlFloor = 1e-12;

}  // namespace posecl
