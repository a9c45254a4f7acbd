#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ectnet/architectures/accounting.hpp"
#include "ectnet/architectures/spec.hpp"
#include "ectnet/numerics/autograd.hpp"

namespace ectnet {

/// Bottleneck residual unit.
///
///   v1:       y = relu(x + bn3(conv3(relu(bn2(conv2(relu(bn1(conv1(x)))))))))
///   v2/resnext: a = relu(bn0(x));  y = s(x) + conv3(relu(bn2(conv2(relu(bn1(conv1(a)))))))
///
/// conv2 carries the unit stride (and the groups for ResNeXt). The shortcut is
/// the identity when shapes agree and a k1 projection with the unit stride
/// otherwise; v1 follows the projection with BN, pre-activation units project
/// the activated input `a`.
template <typename T>
struct ResidualUnit {
  ResidualUnitSpec spec;
  std::size_t in_channels = 0;

  std::optional<BatchNormState<T>> bn0;
  ConvParams<T> conv1, conv2, conv3;
  BatchNormState<T> bn1, bn2;
  std::optional<BatchNormState<T>> bn3;
  std::optional<ConvParams<T>> shortcut;
  std::optional<BatchNormState<T>> shortcut_bn;

  Variable<T> forward(const Variable<T>& x, Mode mode);

  /// Visits layers in canonical order with their local names.
  void visit(const std::function<void(const std::string&, ConvParams<T>&)>& on_conv,
             const std::function<void(const std::string&, BatchNormState<T>&)>& on_bn);

  /// Layer table entries for an input of the given length, names prefixed.
  void describe(const std::string& prefix, std::size_t in_length, LayerTable& out) const;
};

/// Builds a unit with zero weights, zero biases and identity BN (gamma 1,
/// beta 0, running mean 0, variance 1).
template <typename T>
ResidualUnit<T> build_residual_unit(const ResidualUnitSpec& spec, std::size_t in_channels);

/// Temporal sizes and shapes recorded during a forward pass.
template <typename T>
struct ForwardTrace {
  std::vector<std::pair<std::string, Shape>> stages;  // stem, pool, stage1..stage4, gap
  Tensor<T> features;                                 // input to the global average pool

  std::vector<std::size_t> lengths() const;
};

template <typename T>
class Network {
 public:
  /// Validates the spec and builds all layers (zero weights, identity BN).
  explicit Network(NetworkSpec spec);

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  /// Independent deep copy (parameters, buffers).
  Network clone() const;

  const NetworkSpec& spec() const { return spec_; }
  std::size_t feature_channels() const { return feature_channels_; }

  /// He-normal conv and fc weights (variance 2 / fan_in), zero biases,
  /// identity BN, drawn from the "init" stream of `seed`.
  void initialize(std::uint64_t seed);

  /// x: (N, L, input_channels) -> logits (N, num_classes).
  Variable<T> forward(const Variable<T>& x, Mode mode, ForwardTrace<T>* trace = nullptr);

  /// Inference-mode logits without recording a graph.
  Tensor<T> infer(const Tensor<T>& x, ForwardTrace<T>* trace = nullptr);

  /// Trainable parameters in canonical order (handles share storage with the network).
  std::vector<std::pair<std::string, Variable<T>>> named_parameters() const;
  /// Non-trainable state (BN running statistics).
  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers();
  std::vector<std::pair<std::string, const Tensor<T>*>> named_buffers() const;

  const Variable<T>& fc_weight() const { return fc_weight_; }  // (D, num_classes)
  const Variable<T>& fc_bias() const { return fc_bias_; }

  LayerTable layer_table(std::size_t input_length) const;
  LayerTable layer_table() const { return layer_table(spec_.input_length); }

  /// Unit access for tests and diagnostics.
  ResidualUnit<T>& unit(std::size_t stage, std::size_t index) { return stages_.at(stage).at(index); }

 private:
  void visit(const std::function<void(const std::string&, ConvParams<T>&)>& on_conv,
             const std::function<void(const std::string&, BatchNormState<T>&)>& on_bn);

  NetworkSpec spec_;
  ConvParams<T> stem_conv_;
  std::optional<BatchNormState<T>> stem_bn_;
  std::vector<std::vector<ResidualUnit<T>>> stages_;
  std::optional<BatchNormState<T>> final_bn_;
  Variable<T> fc_weight_;
  Variable<T> fc_bias_;
  std::size_t feature_channels_ = 0;
};

template <typename T>
Network<T> build_network(std::string_view name) {
  return Network<T>(network_spec(name));
}

/// Same network with parameters and running statistics converted to scalar type U.
template <typename U, typename T>
Network<U> convert_network(const Network<T>& net) {
  Network<U> out(net.spec());
  const auto src = net.named_parameters();
  const auto dst = out.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto v = dst[i].second;
    v.mutable_value() = src[i].second.value().template cast<U>();
  }
  const auto sb = net.named_buffers();
  auto db = out.named_buffers();
  for (std::size_t i = 0; i < sb.size(); ++i) *db[i].second = sb[i].second->template cast<U>();
  return out;
}

/// Trainable scalar count via the static layer table.
template <typename T>
std::uint64_t count_parameters(const Network<T>& net, ParameterConvention convention = {}) {
  return count_parameters(net.layer_table(), convention);
}

template <typename T>
std::uint64_t count_flops(const Network<T>& net, std::size_t input_length = 224,
                          FlopConvention convention = {}) {
  return count_flops(net.layer_table(input_length), convention);
}

}  // namespace ectnet
