#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a shared handle to a graph node holding an immutable value and an
// optional gradient buffer. Operations record onto the thread's active Tape
// (see TapeScope) whenever at least one input requires a gradient; with no
// active tape they only compute values, which is what inference uses.
//
// Reductions and inner products accumulate in double regardless of Real, in
// ascending row-major index order, so results are reproducible.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "slicegen/tensor.hpp"

namespace slicegen {

template <typename Real>
class Var {
 public:
  struct Node {
    Tensor<Real> value;
    std::vector<Real> grad;  // empty until a backward pass reaches the node
    bool requires_grad = false;
    bool is_leaf = true;
  };

  Var();
  explicit Var(Tensor<Real> value, bool requires_grad = false);

  static Var parameter(Tensor<Real> value) { return Var(std::move(value), true); }
  static Var constant(Tensor<Real> value) { return Var(std::move(value), false); }

  const Tensor<Real>& value() const noexcept { return node_->value; }
  const Shape& shape() const noexcept { return node_->value.shape(); }
  std::size_t size() const noexcept { return node_->value.size(); }
  Real item() const { return node_->value.item(); }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  bool is_leaf() const noexcept { return node_->is_leaf; }
  bool has_grad() const noexcept { return !node_->grad.empty(); }

  /// Accumulated gradient; zeros when nothing has flowed into this node yet.
  Tensor<Real> grad() const;
  void zero_grad() noexcept { node_->grad.clear(); }

  /// Replace a leaf's value in place (optimizer updates, checkpoint loads).
  /// Tapes that still reference this leaf must not be replayed afterwards.
  void set_value(Tensor<Real> value);

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations.
template <typename Real>
class Tape {
 public:
  using NodePtr = std::shared_ptr<typename Var<Real>::Node>;
  using BackwardRule = std::function<void(std::span<const Real> output_grad)>;

  struct Entry {
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardRule rule;
  };

  void record(std::vector<NodePtr> inputs, NodePtr output, BackwardRule rule);

  /// Propagates d(loss)/d(node) to every requires_grad leaf, visiting each
  /// recorded op once in reverse order. Leaf gradients accumulate across calls.
  void backward(const Var<Real>& loss);

  void clear() noexcept { entries_.clear(); }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  /// Tape that operations on this thread currently record onto, or nullptr.
  static Tape* active() noexcept;

 private:
  template <typename>
  friend class TapeScope;
  template <typename>
  friend class NoGradScope;
  static Tape*& active_slot() noexcept;

  std::vector<Entry> entries_;
};

/// Makes a tape the active one for the current thread for its lifetime.
template <typename Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& tape) : previous_(Tape<Real>::active_slot()) {
    Tape<Real>::active_slot() = &tape;
  }
  ~TapeScope() { Tape<Real>::active_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* previous_;
};

/// Suspends recording on the current thread (inference inside a training loop).
template <typename Real>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<Real>::active_slot()) { Tape<Real>::active_slot() = nullptr; }
  ~NoGradScope() { Tape<Real>::active_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Real>* previous_;
};

// ---- operation catalog ---------------------------------------------------

template <typename Real> Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> scale(const Var<Real>& a, double factor);
template <typename Real> Var<Real> add_scalar(const Var<Real>& a, double offset);

/// x: [N, C, ...], bias: [C]; adds bias[c] along axis 1.
template <typename Real> Var<Real> bias_add(const Var<Real>& x, const Var<Real>& bias);

/// [M, K] x [K, N] -> [M, N].
template <typename Real> Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);

/// x: [N, Cin, H, W], kernel: [Cout, Cin, KH, KW], zero padding on all sides.
template <typename Real>
Var<Real> conv2d(const Var<Real>& x, const Var<Real>& kernel, std::size_t stride, std::size_t padding);

/// Adjoint of conv2d. x: [N, Cin, H, W], kernel: [Cin, Cout, KH, KW];
/// output spatial size (H - 1) * stride - 2 * padding + KH.
template <typename Real>
Var<Real> conv_transpose2d(const Var<Real>& x, const Var<Real>& kernel, std::size_t stride,
                           std::size_t padding);

template <typename Real> Var<Real> relu(const Var<Real>& x);
template <typename Real> Var<Real> leaky_relu(const Var<Real>& x, double slope);
template <typename Real> Var<Real> sigmoid(const Var<Real>& x);
template <typename Real> Var<Real> tanh(const Var<Real>& x);
template <typename Real> Var<Real> exp(const Var<Real>& x);
template <typename Real> Var<Real> log(const Var<Real>& x);
template <typename Real> Var<Real> square(const Var<Real>& x);
template <typename Real> Var<Real> sqrt(const Var<Real>& x);
template <typename Real> Var<Real> abs(const Var<Real>& x);

/// Full reductions to shape {1}.
template <typename Real> Var<Real> sum(const Var<Real>& x);
template <typename Real> Var<Real> mean(const Var<Real>& x);

template <typename Real> Var<Real> reshape(const Var<Real>& x, Shape shape);
template <typename Real> Var<Real> concat(const std::vector<Var<Real>>& parts, std::size_t axis);
template <typename Real>
Var<Real> slice(const Var<Real>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Rows of x (axis 0) in the given order; indices may repeat.
template <typename Real>
Var<Real> gather(const Var<Real>& x, std::span<const std::size_t> indices);

}  // namespace slicegen
