#pragma once

// Minimal reverse-mode differentiation over Tensor values.
//
// Every op returns a Variable whose node remembers its inputs and a closure
// that pushes the node's gradient back into them. backward() walks the
// recorded graph in reverse topological order. Gradients accumulate, so a
// value consumed twice receives the sum of both contributions.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ectnet/numerics/kernels.hpp"
#include "ectnet/numerics/tensor.hpp"

namespace ectnet {

enum class Mode { Training, Inference };

template <typename T>
class Variable {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(const Tensor<T>&)> backward;

    Tensor<T>& ensure_grad() {
      if (grad.empty()) grad = Tensor<T>(value.shape());
      return grad;
    }
  };

  Variable() = default;

  /// Leaf that never receives gradients.
  static Variable constant(Tensor<T> value);
  /// Leaf that accumulates gradients (a trainable parameter or a checked input).
  static Variable parameter(Tensor<T> value);

  explicit operator bool() const noexcept { return node_ != nullptr; }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  /// Allocates (if needed) and zeroes the gradient buffer.
  void zero_grad() { node_->ensure_grad().fill(T{0}); }
  /// Drops the recorded history so the graph behind this value can be freed.
  void detach_history() {
    node_->inputs.clear();
    node_->backward = nullptr;
  }

  const std::shared_ptr<Node>& node() const { return node_; }

  /// Builds an op result. When gradient recording is off or no input needs a
  /// gradient the result is a plain constant and `backward` is discarded.
  static Variable make_result(Tensor<T> value, std::vector<Variable> inputs,
                              std::function<void(const Tensor<T>&)> backward,
                              const char* op_name);

 private:
  explicit Variable(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Thread-local switch for graph recording (inference disables it).
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

/// Throws NumericError naming `what` if any value is NaN or infinite.
template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what);

/// Reverse-mode accumulation from a scalar (single element) output.
template <typename T>
void backward(const Variable<T>& output);

// ---------------------------------------------------------------------------
// Layer state

/// Convolution layer: geometry, weights (Cout, Cin/groups, K) and optional bias.
template <typename T>
struct ConvParams {
  kernels::ConvGeometry geometry;
  Variable<T> weight;
  Variable<T> bias;  // null when the layer has no bias

  static ConvParams create(const kernels::ConvGeometry& geometry, bool with_bias);
  bool has_bias() const { return static_cast<bool>(bias); }
};

template <typename T>
struct BatchNormState {
  Variable<T> gamma;
  Variable<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  T epsilon = static_cast<T>(1e-5);
  bool stats_ready = true;  // false only for states built without initial statistics

  /// gamma = 1, beta = 0, running mean 0 / variance 1.
  static BatchNormState create(std::size_t channels);
  /// Same, but inference refuses to run until a training pass updated the stats.
  static BatchNormState create_without_stats(std::size_t channels);
  std::size_t channels() const { return running_mean.size(); }
};

// ---------------------------------------------------------------------------
// Differentiable ops

template <typename T>
Variable<T> conv1d(const Variable<T>& x, const ConvParams<T>& p);

template <typename T>
Variable<T> maxpool1d(const Variable<T>& x, std::size_t kernel, std::size_t stride,
                      std::size_t padding);

template <typename T>
Variable<T> relu(const Variable<T>& x);

template <typename T>
Variable<T> add(const Variable<T>& a, const Variable<T>& b);

/// Training mode uses batch statistics and updates the running statistics.
template <typename T>
Variable<T> batchnorm1d(const Variable<T>& x, BatchNormState<T>& state, Mode mode);

template <typename T>
Variable<T> global_avg_pool(const Variable<T>& x);

template <typename T>
Variable<T> fully_connected(const Variable<T>& x, const Variable<T>& weight,
                            const Variable<T>& bias);

template <typename T>
struct LossResult {
  Variable<T> loss;  // scalar mean cross-entropy
  Tensor<T> probs;   // (N, K) softmax outputs
};

template <typename T>
LossResult<T> softmax_cross_entropy(const Variable<T>& logits, std::span<const int> labels,
                                    double label_smoothing = 0.0);

/// Sum of all elements as a scalar.
template <typename T>
Variable<T> sum(const Variable<T>& x);

/// sum(x * weights) with constant weights; handy for probing gradients.
template <typename T>
Variable<T> weighted_sum(const Variable<T>& x, const Tensor<T>& weights);

}  // namespace ectnet
