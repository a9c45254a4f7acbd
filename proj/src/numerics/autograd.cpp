#include "ectnet/numerics/autograd.hpp"

#include <algorithm>
#include <unordered_set>

namespace ectnet {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite value produced by " + what);
}

template <typename T>
Variable<T> Variable<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Variable(std::move(node));
}

template <typename T>
Variable<T> Variable<T>::parameter(Tensor<T> value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Variable(std::move(node));
}

template <typename T>
Variable<T> Variable<T>::make_result(Tensor<T> value, std::vector<Variable> inputs,
                                     std::function<void(const Tensor<T>&)> backward,
                                     const char* op_name) {
  require_finite(value, op_name);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool needs = GradMode::enabled() &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const Variable& v) { return v.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    for (auto& in : inputs) node->inputs.push_back(in.node_);
  }
  return Variable(std::move(node));
}

template <typename T>
void backward(const Variable<T>& output) {
  using Node = typename Variable<T>::Node;
  if (!output) throw ConfigError("backward: null variable");
  if (output.value().size() != 1) {
    throw ConfigError("backward: output must be a scalar, got shape " +
                      shape_string(output.shape()));
  }
  if (!output.requires_grad() || !output.node()->backward) {
    throw ConfigError("backward: no recorded forward graph behind this value");
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{output.node().get(), 0}};
  seen.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  output.node()->ensure_grad().fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
  for (Node* node : order) {
    if (!node->backward && !node->grad.empty()) require_finite(node->grad, "backward pass");
  }
}

template <typename T>
ConvParams<T> ConvParams<T>::create(const kernels::ConvGeometry& geometry, bool with_bias) {
  geometry.validate();
  ConvParams p;
  p.geometry = geometry;
  p.weight = Variable<T>::parameter(Tensor<T>(geometry.weight_shape()));
  if (with_bias) p.bias = Variable<T>::parameter(Tensor<T>({geometry.out_channels}));
  return p;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::create(std::size_t channels) {
  BatchNormState s;
  s.gamma = Variable<T>::parameter(Tensor<T>({channels}, T{1}));
  s.beta = Variable<T>::parameter(Tensor<T>({channels}, T{0}));
  s.running_mean = Tensor<T>({channels}, T{0});
  s.running_var = Tensor<T>({channels}, T{1});
  return s;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::create_without_stats(std::size_t channels) {
  BatchNormState s = create(channels);
  s.stats_ready = false;
  return s;
}

template <typename T>
Variable<T> conv1d(const Variable<T>& x, const ConvParams<T>& p) {
  const Tensor<T>* bias = p.has_bias() ? &p.bias.value() : nullptr;
  Tensor<T> y = kernels::conv1d_forward(x.value(), p.weight.value(), bias, p.geometry);
  std::vector<Variable<T>> inputs{x, p.weight};
  if (p.has_bias()) inputs.push_back(p.bias);
  auto geom = p.geometry;
  auto xn = x.node().get();
  auto wn = p.weight.node().get();
  auto bn = p.has_bias() ? p.bias.node().get() : nullptr;
  return Variable<T>::make_result(
      std::move(y), std::move(inputs),
      [xn, wn, bn, geom](const Tensor<T>& dy) {
        Tensor<T>* dx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
        Tensor<T>* dw = wn->requires_grad ? &wn->ensure_grad() : nullptr;
        Tensor<T>* db = (bn != nullptr && bn->requires_grad) ? &bn->ensure_grad() : nullptr;
        kernels::conv1d_backward(xn->value, wn->value, dy, geom, dx, dw, db);
      },
      "conv1d");
}

template <typename T>
Variable<T> maxpool1d(const Variable<T>& x, std::size_t kernel, std::size_t stride,
                      std::size_t padding) {
  auto r = kernels::maxpool1d_forward(x.value(), kernel, stride, padding);
  auto xn = x.node().get();
  const std::size_t len = x.value().dim(1);
  return Variable<T>::make_result(
      std::move(r.output), {x},
      [xn, len, argmax = std::move(r.argmax)](const Tensor<T>& dy) {
        if (xn->requires_grad) kernels::maxpool1d_backward(dy, argmax, len, xn->ensure_grad());
      },
      "maxpool1d");
}

template <typename T>
Variable<T> relu(const Variable<T>& x) {
  auto xn = x.node().get();
  return Variable<T>::make_result(
      kernels::relu_forward(x.value()), {x},
      [xn](const Tensor<T>& dy) {
        if (xn->requires_grad) kernels::relu_backward(xn->value, dy, xn->ensure_grad());
      },
      "relu");
}

template <typename T>
Variable<T> add(const Variable<T>& a, const Variable<T>& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add: shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  auto an = a.node().get();
  auto bn = b.node().get();
  return Variable<T>::make_result(
      std::move(y), {a, b},
      [an, bn](const Tensor<T>& dy) {
        for (auto* n : {an, bn}) {
          if (!n->requires_grad) continue;
          Tensor<T>& g = n->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
        }
      },
      "add");
}

template <typename T>
Variable<T> batchnorm1d(const Variable<T>& x, BatchNormState<T>& state, Mode mode) {
  auto xn = x.node().get();
  auto gn = state.gamma.node().get();
  auto bn = state.beta.node().get();
  if (mode == Mode::Training) {
    auto cache = std::make_shared<kernels::BatchNormCache<T>>();
    Tensor<T> y = kernels::batchnorm_train_forward(x.value(), state.gamma.value(),
                                                   state.beta.value(), state.epsilon, *cache);
    const double mom = state.momentum;
    for (std::size_t c = 0; c < state.channels(); ++c) {
      state.running_mean[c] =
          static_cast<T>(mom * state.running_mean[c] + (1.0 - mom) * cache->mean[c]);
      state.running_var[c] =
          static_cast<T>(mom * state.running_var[c] + (1.0 - mom) * cache->variance[c]);
    }
    state.stats_ready = true;
    return Variable<T>::make_result(
        std::move(y), {x, state.gamma, state.beta},
        [xn, gn, bn, cache](const Tensor<T>& dy) {
          kernels::batchnorm_train_backward(dy, gn->value, *cache,
                                            xn->requires_grad ? &xn->ensure_grad() : nullptr,
                                            gn->requires_grad ? &gn->ensure_grad() : nullptr,
                                            bn->requires_grad ? &bn->ensure_grad() : nullptr);
        },
        "batchnorm1d");
  }
  if (!state.stats_ready) {
    throw ConfigError("batchnorm1d: inference requested before running statistics exist");
  }
  Tensor<T> y = kernels::batchnorm_infer_forward(x.value(), state.gamma.value(),
                                                 state.beta.value(), state.running_mean,
                                                 state.running_var, state.epsilon);
  // Inference gradients use a snapshot of the statistics.
  auto mean = state.running_mean;
  auto var = state.running_var;
  const T eps = state.epsilon;
  return Variable<T>::make_result(
      std::move(y), {x, state.gamma, state.beta},
      [xn, gn, bn, mean, var, eps](const Tensor<T>& dy) {
        kernels::batchnorm_infer_backward(xn->value, dy, gn->value, mean, var, eps,
                                          xn->requires_grad ? &xn->ensure_grad() : nullptr,
                                          gn->requires_grad ? &gn->ensure_grad() : nullptr,
                                          bn->requires_grad ? &bn->ensure_grad() : nullptr);
      },
      "batchnorm1d");
}

template <typename T>
Variable<T> global_avg_pool(const Variable<T>& x) {
  auto xn = x.node().get();
  const std::size_t len = x.value().dim(1);
  return Variable<T>::make_result(
      kernels::global_avg_pool_forward(x.value()), {x},
      [xn, len](const Tensor<T>& dy) {
        if (xn->requires_grad) kernels::global_avg_pool_backward(dy, len, xn->ensure_grad());
      },
      "global_avg_pool");
}

template <typename T>
Variable<T> fully_connected(const Variable<T>& x, const Variable<T>& weight,
                            const Variable<T>& bias) {
  auto xn = x.node().get();
  auto wn = weight.node().get();
  auto bn = bias.node().get();
  return Variable<T>::make_result(
      kernels::fully_connected_forward(x.value(), weight.value(), bias.value()),
      {x, weight, bias},
      [xn, wn, bn](const Tensor<T>& dy) {
        kernels::fully_connected_backward(xn->value, wn->value, dy,
                                          xn->requires_grad ? &xn->ensure_grad() : nullptr,
                                          wn->requires_grad ? &wn->ensure_grad() : nullptr,
                                          bn->requires_grad ? &bn->ensure_grad() : nullptr);
      },
      "fully_connected");
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Variable<T>& logits, std::span<const int> labels,
                                    double label_smoothing) {
  auto r = kernels::softmax_cross_entropy_forward(logits.value(), labels, label_smoothing);
  if (!std::isfinite(r.loss)) throw NumericError("non-finite cross-entropy loss");
  auto ln = logits.node().get();
  std::vector<int> lab(labels.begin(), labels.end());
  auto probs = std::make_shared<Tensor<T>>(r.probs);
  LossResult<T> out;
  out.probs = std::move(r.probs);
  out.loss = Variable<T>::make_result(
      Tensor<T>::scalar(static_cast<T>(r.loss)), {logits},
      [ln, lab = std::move(lab), probs, label_smoothing](const Tensor<T>& dy) {
        if (ln->requires_grad) {
          kernels::softmax_cross_entropy_backward(*probs, lab, static_cast<double>(dy[0]),
                                                  label_smoothing, ln->ensure_grad());
        }
      },
      "softmax_cross_entropy");
  return out;
}

template <typename T>
Variable<T> sum(const Variable<T>& x) {
  double total = 0.0;
  for (T v : x.value().data()) total += v;
  auto xn = x.node().get();
  return Variable<T>::make_result(
      Tensor<T>::scalar(static_cast<T>(total)), {x},
      [xn](const Tensor<T>& dy) {
        if (!xn->requires_grad) return;
        for (T& g : xn->ensure_grad().data()) g += dy[0];
      },
      "sum");
}

template <typename T>
Variable<T> weighted_sum(const Variable<T>& x, const Tensor<T>& weights) {
  if (!x.value().same_shape(weights)) throw ShapeError("weighted_sum: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    total += static_cast<double>(x.value()[i]) * weights[i];
  }
  auto xn = x.node().get();
  return Variable<T>::make_result(
      Tensor<T>::scalar(static_cast<T>(total)), {x},
      [xn, weights](const Tensor<T>& dy) {
        if (!xn->requires_grad) return;
        Tensor<T>& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[0] * weights[i];
      },
      "weighted_sum");
}

#define ECTNET_INSTANTIATE_AUTOGRAD(T)                                                        \
  template class Variable<T>;                                                                 \
  template struct ConvParams<T>;                                                              \
  template struct BatchNormState<T>;                                                          \
  template void require_finite(const Tensor<T>&, const std::string&);                         \
  template void backward(const Variable<T>&);                                                 \
  template Variable<T> conv1d(const Variable<T>&, const ConvParams<T>&);                      \
  template Variable<T> maxpool1d(const Variable<T>&, std::size_t, std::size_t, std::size_t);  \
  template Variable<T> relu(const Variable<T>&);                                              \
  template Variable<T> add(const Variable<T>&, const Variable<T>&);                           \
  template Variable<T> batchnorm1d(const Variable<T>&, BatchNormState<T>&, Mode);             \
  template Variable<T> global_avg_pool(const Variable<T>&);                                   \
  template Variable<T> fully_connected(const Variable<T>&, const Variable<T>&,                \
                                       const Variable<T>&);                                   \
  template LossResult<T> softmax_cross_entropy(const Variable<T>&, std::span<const int>,      \
                                               double);                                       \
  template Variable<T> sum(const Variable<T>&);                                               \
  template Variable<T> weighted_sum(const Variable<T>&, const Tensor<T>&);

ECTNET_INSTANTIATE_AUTOGRAD(float)
ECTNET_INSTANTIATE_AUTOGRAD(double)

#undef ECTNET_INSTANTIATE_AUTOGRAD

}  // namespace ectnet
