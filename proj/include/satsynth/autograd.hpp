#pragma once

#include "satsynth/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace satsynth {

/// Thread-local switch; while disabled no op records a backward closure.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor<Scalar>& g);
  void accumulate(const typename Tensor<Scalar>::Vector& g);
};

/// Handle to a node of the dynamic computation graph. Copies share the node.
template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var parameter(Tensor<Scalar> value) { return Var(std::move(value), true); }

  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index i) const { return node_->value.dim(i); }
  Scalar item() const { return node_->value[0]; }
  bool defined() const { return static_cast<bool>(node_); }

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Reverse-mode sweep from a single-element root. Gradients accumulate into
/// every reachable node that requires them; interior graph links are released.
template <typename Scalar>
void backward(const Var<Scalar>& root);

// Elementwise arithmetic (operands of identical shape).
template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> div(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, S offset);
template <typename S> Var<S> exp(const Var<S>& a);
template <typename S> Var<S> tanh(const Var<S>& a);
template <typename S> Var<S> abs(const Var<S>& a);
template <typename S> Var<S> square(const Var<S>& a);
template <typename S> Var<S> relu(const Var<S>& a);
template <typename S> Var<S> leaky_relu(const Var<S>& a, S slope);
/// min(a, hi); the gradient passes only where a < hi, so the boundary itself gets 0.
template <typename S> Var<S> clamp_max(const Var<S>& a, S hi);

// Reductions.
template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);
/// [N, ...] -> [N]: mean over all non-batch axes.
template <typename S> Var<S> mean_per_sample(const Var<S>& a);
/// [N, ...] -> [N]: sum over all non-batch axes.
template <typename S> Var<S> sum_per_sample(const Var<S>& a);

// Structural.
template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);
template <typename S> Var<S> concat_channels(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> upsample_nearest2x(const Var<S>& a);
template <typename S> Var<S> avg_pool2(const Var<S>& a);
template <typename S> Var<S> max_pool2(const Var<S>& a);

// Network primitives.
/// x: [N,C,H,W], weight: [O,C,K,K], bias: [O] or undefined.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad);
/// x: [N,F], weight: [O,F], bias: [O] or undefined.
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);
/// Parameter-free per-sample, per-channel normalization over spatial axes.
template <typename S> Var<S> instance_norm(const Var<S>& x, S eps = S(1e-5));
/// Mean per-pixel cross-entropy; labels are flattened N·H·W class indices.
template <typename S>
Var<S> cross_entropy(const Var<S>& logits, const std::vector<int>& labels);
/// weight / (uᵀ W v) with u, v held constant; W viewed as [rows, numel/rows].
template <typename S>
Var<S> spectral_normalize(const Var<S>& weight, const typename Tensor<S>::Vector& u,
                          const typename Tensor<S>::Vector& v);

/// Nearest-neighbour resize of a constant NCHW tensor (no graph).
template <typename S>
Tensor<S> resize_nearest(const Tensor<S>& x, Index out_h, Index out_w);

}  // namespace satsynth
