#pragma once
// Reverse-mode differentiation over the tensor primitives.
//
// Every op on Var computes its value eagerly. While gradient recording is
// enabled and at least one input requires a gradient, the result also keeps
// its inputs and a backward rule; the resulting graph is a DAG rooted at the
// loss. With recording disabled (NoGradGuard) ops keep nothing, so inference
// runs the same code without building a graph.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "lrt/tensor.hpp"
#include "lrt/tensor_ops.hpp"

namespace lrt {

template <typename T>
struct Node {
  const char* op = "leaf";
  Tensor<T> value;
  std::vector<std::shared_ptr<Node>> inputs;
  // Maps d(loss)/d(this) to d(loss)/d(input) per input; entries for inputs
  // that do not require gradients may be left empty.
  std::function<std::vector<Tensor<T>>(const Tensor<T>&)> backward;
  bool requires_grad = false;
  int param_id = -1;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  /// Leaf that never receives a gradient.
  static Var constant(Tensor<T> value);
  /// Trainable leaf; `id` keys its entry in the GradientMap.
  static Var parameter(Tensor<T> value, int id);

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  /// Leaf values may be updated in place between steps.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  int param_id() const { return node_->param_id; }
  const char* op() const { return node_->op; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// parameter id -> gradient, same shape as the parameter.
template <typename T>
using GradientMap = std::map<int, Tensor<T>>;

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

/// Gradients of a scalar loss with respect to every reachable parameter.
/// Nodes are visited once each in reverse topological order.
template <typename T>
GradientMap<T> backward(const Var<T>& loss);

/// Entries for every parameter in `params`, zero where unreachable.
template <typename T>
std::vector<Tensor<T>> dense_gradients(const GradientMap<T>& grads,
                                       std::span<const Var<T>> params);

/// |a-b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

struct FiniteDiffResult {
  /// Over coordinates outside the zero-gradient bound.
  double max_rel_error = 0.0;
  /// Plain metric over every coordinate.
  double raw_max_rel_error = 0.0;
  /// Zero-gradient coordinates: both values within the rounding bound.
  std::size_t within_rounding = 0;
  /// Coordinates whose step straddles a non-differentiable point.
  std::size_t kinks = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares backward() against central differences (f(p+eps)-f(p-eps))/2eps
/// for every coordinate of every parameter. `loss_fn` must rebuild the loss
/// from the current parameter values each call. A coordinate where both the
/// analytic and numeric values are at most 4 ulp(max|f|) / 2eps, the
/// resolution of the difference quotient itself, is a zero gradient and
/// counts as agreeing. A coordinate whose difference quotients at eps and
/// eps/2 disagree by more than 0.1% (a relu or max-pool switch inside the
/// step) is a kink and is skipped; the analytic value plays no part in it.
template <typename T>
FiniteDiffResult finite_diff_check(const std::function<Var<T>()>& loss_fn,
                                   std::span<Var<T>> params, T eps);

namespace ag {

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_bias(const Var<T>& a, const Var<T>& bias);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> softmax(const Var<T>& x, const AttentionMask* mask);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps);
/// x [C x H x W], kernels [Co x C x kh x kw], bias [Co].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels, const Var<T>& bias,
              std::size_t stride, std::size_t pad);
template <typename T> Var<T> max_pool2d(const Var<T>& x, std::size_t window);
template <typename T> Var<T> concat_lastdim(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_lastdim(const Var<T>& x, std::size_t start, std::size_t width);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_rows(const Var<T>& x, std::size_t start, std::size_t count);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
/// Reorders a [C x H x W] map to [H x C*W]: one row per time step.
template <typename T> Var<T> frames_to_rows(const Var<T>& x);
template <typename T> Var<T> sum(const Var<T>& x);
/// Rows of `table` selected by `ids`.
template <typename T> Var<T> embedding(const Var<T>& table, std::span<const int> ids);
/// Sum over rows t with targets[t] != ignore_id of -log softmax(logits[t])[targets[t]].
template <typename T>
Var<T> nll_sum(const Var<T>& logits, std::span<const int> targets, int ignore_id);

}  // namespace ag

}  // namespace lrt
