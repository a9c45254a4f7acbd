#include "ectnet/architectures/network.hpp"

#include <cmath>

#include "ectnet/error.hpp"
#include "ectnet/numerics/rng.hpp"

namespace ectnet {

namespace {

kernels::ConvGeometry geometry(std::size_t in, std::size_t out, std::size_t k, std::size_t s,
                               std::size_t groups = 1) {
  kernels::ConvGeometry g;
  g.in_channels = in;
  g.out_channels = out;
  g.kernel_size = k;
  g.stride = s;
  g.padding = k / 2;
  g.groups = groups;
  return g;
}

LayerInfo conv_info(const std::string& name, const kernels::ConvGeometry& g, bool bias,
                    std::size_t in_length) {
  LayerInfo l;
  l.name = name;
  l.kind = LayerKind::Conv;
  l.in_channels = g.in_channels;
  l.out_channels = g.out_channels;
  l.kernel_size = g.kernel_size;
  l.stride = g.stride;
  l.groups = g.groups;
  l.bias = bias;
  l.in_length = in_length;
  l.out_length = g.output_length(in_length);
  return l;
}

LayerInfo pointwise_info(const std::string& name, LayerKind kind, std::size_t channels,
                         std::size_t length) {
  LayerInfo l;
  l.name = name;
  l.kind = kind;
  l.in_channels = channels;
  l.out_channels = channels;
  l.in_length = length;
  l.out_length = length;
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// ResidualUnit

template <typename T>
ResidualUnit<T> build_residual_unit(const ResidualUnitSpec& spec, std::size_t in_channels) {
  spec.validate();
  if (in_channels == 0) throw ConfigError("residual unit: in_channels must be positive");
  const std::size_t b = spec.bottleneck_channels;
  const std::size_t out = spec.out_channels;
  const bool v1 = spec.variant == UnitVariant::V1;

  ResidualUnit<T> u;
  u.spec = spec;
  u.in_channels = in_channels;
  if (!v1) u.bn0 = BatchNormState<T>::create(in_channels);
  u.conv1 = ConvParams<T>::create(geometry(in_channels, b, 1, 1), true);
  u.bn1 = BatchNormState<T>::create(b);
  u.conv2 = ConvParams<T>::create(geometry(b, b, 3, spec.stride, spec.cardinality), true);
  u.bn2 = BatchNormState<T>::create(b);
  u.conv3 = ConvParams<T>::create(geometry(b, out, 1, 1), true);
  if (v1) u.bn3 = BatchNormState<T>::create(out);
  if (in_channels != out || spec.stride != 1) {
    u.shortcut = ConvParams<T>::create(geometry(in_channels, out, 1, spec.stride), true);
    if (v1) u.shortcut_bn = BatchNormState<T>::create(out);
  }
  return u;
}

template <typename T>
Variable<T> ResidualUnit<T>::forward(const Variable<T>& x, Mode mode) {
  if (x.shape().size() != 3 || x.shape()[2] != in_channels) {
    throw ShapeError("residual unit expects (N, L, " + std::to_string(in_channels) +
                     ") input, got " + shape_string(x.shape()));
  }
  if (spec.variant == UnitVariant::V1) {
    Variable<T> r = relu(batchnorm1d(conv1d(x, conv1), bn1, mode));
    r = relu(batchnorm1d(conv1d(r, conv2), bn2, mode));
    r = batchnorm1d(conv1d(r, conv3), *bn3, mode);
    Variable<T> s = x;
    if (shortcut) s = batchnorm1d(conv1d(x, *shortcut), *shortcut_bn, mode);
    return relu(add(r, s));
  }
  const Variable<T> a = relu(batchnorm1d(x, *bn0, mode));
  Variable<T> r = relu(batchnorm1d(conv1d(a, conv1), bn1, mode));
  r = relu(batchnorm1d(conv1d(r, conv2), bn2, mode));
  r = conv1d(r, conv3);
  const Variable<T> s = shortcut ? conv1d(a, *shortcut) : x;
  return add(r, s);
}

template <typename T>
void ResidualUnit<T>::visit(
    const std::function<void(const std::string&, ConvParams<T>&)>& on_conv,
    const std::function<void(const std::string&, BatchNormState<T>&)>& on_bn) {
  if (bn0) on_bn("bn0", *bn0);
  on_conv("conv1", conv1);
  on_bn("bn1", bn1);
  on_conv("conv2", conv2);
  on_bn("bn2", bn2);
  on_conv("conv3", conv3);
  if (bn3) on_bn("bn3", *bn3);
  if (shortcut) on_conv("shortcut", *shortcut);
  if (shortcut_bn) on_bn("shortcut_bn", *shortcut_bn);
}

template <typename T>
void ResidualUnit<T>::describe(const std::string& prefix, std::size_t in_length,
                               LayerTable& out) const {
  const std::size_t b = spec.bottleneck_channels;
  const std::size_t oc = spec.out_channels;
  const std::size_t out_length = conv2.geometry.output_length(in_length);
  auto bn = [&](const char* name, std::size_t ch, std::size_t len) {
    out.push_back(pointwise_info(prefix + name, LayerKind::BatchNorm, ch, len));
  };
  auto act = [&](const char* name, std::size_t ch, std::size_t len) {
    out.push_back(pointwise_info(prefix + name, LayerKind::ReLU, ch, len));
  };
  if (bn0) {
    bn("bn0", in_channels, in_length);
    act("relu0", in_channels, in_length);
  }
  out.push_back(conv_info(prefix + "conv1", conv1.geometry, conv1.has_bias(), in_length));
  bn("bn1", b, in_length);
  act("relu1", b, in_length);
  out.push_back(conv_info(prefix + "conv2", conv2.geometry, conv2.has_bias(), in_length));
  bn("bn2", b, out_length);
  act("relu2", b, out_length);
  out.push_back(conv_info(prefix + "conv3", conv3.geometry, conv3.has_bias(), out_length));
  if (bn3) bn("bn3", oc, out_length);
  if (shortcut) {
    out.push_back(
        conv_info(prefix + "shortcut", shortcut->geometry, shortcut->has_bias(), in_length));
  }
  if (shortcut_bn) bn("shortcut_bn", oc, out_length);
  out.push_back(pointwise_info(prefix + "add", LayerKind::Add, oc, out_length));
  if (spec.variant == UnitVariant::V1) act("relu_out", oc, out_length);
}

template <typename T>
std::vector<std::size_t> ForwardTrace<T>::lengths() const {
  std::vector<std::size_t> out;
  for (const auto& [name, shape] : stages) out.push_back(shape.size() == 3 ? shape[1] : 1);
  return out;
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
Network<T>::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const bool v1 = spec_.stages.front().unit.variant == UnitVariant::V1;
  stem_conv_ = ConvParams<T>::create(geometry(spec_.input_channels, spec_.stem_filters, 3, 1), true);
  if (v1) stem_bn_ = BatchNormState<T>::create(spec_.stem_filters);

  std::size_t channels = spec_.stem_filters;
  for (const auto& st : spec_.stages) {
    std::vector<ResidualUnit<T>> units;
    for (std::size_t j = 0; j < st.unit_count; ++j) {
      ResidualUnitSpec us = st.unit;
      if (j > 0) us.stride = 1;
      units.push_back(build_residual_unit<T>(us, channels));
      channels = us.out_channels;
    }
    stages_.push_back(std::move(units));
  }
  if (!v1) final_bn_ = BatchNormState<T>::create(channels);
  feature_channels_ = channels;
  fc_weight_ = Variable<T>::parameter(Tensor<T>({channels, spec_.num_classes}));
  fc_bias_ = Variable<T>::parameter(Tensor<T>({spec_.num_classes}));
}

template <typename T>
void Network<T>::visit(const std::function<void(const std::string&, ConvParams<T>&)>& on_conv,
                       const std::function<void(const std::string&, BatchNormState<T>&)>& on_bn) {
  on_conv("stem.conv", stem_conv_);
  if (stem_bn_) on_bn("stem.bn", *stem_bn_);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    for (std::size_t j = 0; j < stages_[i].size(); ++j) {
      const std::string prefix =
          "stage" + std::to_string(i + 1) + ".unit" + std::to_string(j + 1) + ".";
      stages_[i][j].visit(
          [&](const std::string& n, ConvParams<T>& c) { on_conv(prefix + n, c); },
          [&](const std::string& n, BatchNormState<T>& b) { on_bn(prefix + n, b); });
    }
  }
  if (final_bn_) on_bn("final_bn", *final_bn_);
}

template <typename T>
std::vector<std::pair<std::string, Variable<T>>> Network<T>::named_parameters() const {
  std::vector<std::pair<std::string, Variable<T>>> out;
  auto* self = const_cast<Network*>(this);
  self->visit(
      [&](const std::string& n, ConvParams<T>& c) {
        out.emplace_back(n + ".weight", c.weight);
        if (c.has_bias()) out.emplace_back(n + ".bias", c.bias);
      },
      [&](const std::string& n, BatchNormState<T>& b) {
        out.emplace_back(n + ".gamma", b.gamma);
        out.emplace_back(n + ".beta", b.beta);
      });
  out.emplace_back("fc.weight", fc_weight_);
  out.emplace_back("fc.bias", fc_bias_);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Network<T>::named_buffers() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  visit([](const std::string&, ConvParams<T>&) {},
        [&](const std::string& n, BatchNormState<T>& b) {
          out.emplace_back(n + ".running_mean", &b.running_mean);
          out.emplace_back(n + ".running_var", &b.running_var);
        });
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Network<T>::named_buffers() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& [n, t] : const_cast<Network*>(this)->named_buffers()) out.emplace_back(n, t);
  return out;
}

template <typename T>
Network<T> Network<T>::clone() const {
  Network copy(spec_);
  auto src = named_parameters();
  auto dst = copy.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.mutable_value() = src[i].second.value();
  auto sb = named_buffers();
  auto db = copy.named_buffers();
  for (std::size_t i = 0; i < sb.size(); ++i) *db[i].second = *sb[i].second;
  return copy;
}

template <typename T>
void Network<T>::initialize(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "init");
  auto he = [&rng](Tensor<T>& w, std::size_t fan_in) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.data()) v = static_cast<T>(rng.normal(0.0, sd));
  };
  visit(
      [&](const std::string&, ConvParams<T>& c) {
        he(c.weight.mutable_value(), c.geometry.in_per_group() * c.geometry.kernel_size);
        if (c.has_bias()) c.bias.mutable_value().fill(T{0});
      },
      [&](const std::string&, BatchNormState<T>& b) {
        b.gamma.mutable_value().fill(T{1});
        b.beta.mutable_value().fill(T{0});
        b.running_mean.fill(T{0});
        b.running_var.fill(T{1});
      });
  he(fc_weight_.mutable_value(), feature_channels_);
  fc_bias_.mutable_value().fill(T{0});
}

template <typename T>
Variable<T> Network<T>::forward(const Variable<T>& x, Mode mode, ForwardTrace<T>* trace) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != spec_.input_channels) {
    throw ShapeError("network '" + spec_.name + "' expects (N, L, " +
                     std::to_string(spec_.input_channels) + ") input, got " + shape_string(s));
  }
  auto record = [trace](const char* name, const Variable<T>& v) {
    if (trace) trace->stages.emplace_back(name, v.shape());
  };
  if (trace) trace->stages.clear();

  Variable<T> h = conv1d(x, stem_conv_);
  if (stem_bn_) h = relu(batchnorm1d(h, *stem_bn_, mode));
  record("stem", h);
  h = maxpool1d(h, 3, 2, 1);
  record("pool", h);
  static const char* names[] = {"stage1", "stage2", "stage3", "stage4"};
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    for (auto& u : stages_[i]) h = u.forward(h, mode);
    record(names[i], h);
  }
  if (final_bn_) h = relu(batchnorm1d(h, *final_bn_, mode));
  if (trace) trace->features = h.value();
  Variable<T> pooled = global_avg_pool(h);
  record("gap", pooled);
  return fully_connected(pooled, fc_weight_, fc_bias_);
}

template <typename T>
Tensor<T> Network<T>::infer(const Tensor<T>& x, ForwardTrace<T>* trace) {
  NoGradGuard guard;
  return forward(Variable<T>::constant(x), Mode::Inference, trace).value();
}

template <typename T>
LayerTable Network<T>::layer_table(std::size_t input_length) const {
  LayerTable t;
  std::size_t len = input_length;
  t.push_back(conv_info("stem.conv", stem_conv_.geometry, stem_conv_.has_bias(), len));
  len = t.back().out_length;
  if (stem_bn_) {
    t.push_back(pointwise_info("stem.bn", LayerKind::BatchNorm, spec_.stem_filters, len));
    t.push_back(pointwise_info("stem.relu", LayerKind::ReLU, spec_.stem_filters, len));
  }
  LayerInfo pool = pointwise_info("stem.pool", LayerKind::MaxPool, spec_.stem_filters, len);
  pool.kernel_size = 3;
  pool.stride = 2;
  pool.out_length = kernels::output_length(len, 3, 2, 1);
  t.push_back(pool);
  len = pool.out_length;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    for (std::size_t j = 0; j < stages_[i].size(); ++j) {
      const auto& u = stages_[i][j];
      u.describe("stage" + std::to_string(i + 1) + ".unit" + std::to_string(j + 1) + ".", len, t);
      len = u.conv2.geometry.output_length(len);
    }
  }
  if (final_bn_) {
    t.push_back(pointwise_info("final_bn", LayerKind::BatchNorm, feature_channels_, len));
    t.push_back(pointwise_info("final_relu", LayerKind::ReLU, feature_channels_, len));
  }
  LayerInfo gap = pointwise_info("gap", LayerKind::GlobalAvgPool, feature_channels_, len);
  gap.out_length = 1;
  t.push_back(gap);
  LayerInfo fc;
  fc.name = "fc";
  fc.kind = LayerKind::FullyConnected;
  fc.in_channels = feature_channels_;
  fc.out_channels = spec_.num_classes;
  fc.bias = true;
  t.push_back(fc);
  return t;
}

template struct ResidualUnit<float>;
template struct ResidualUnit<double>;
template struct ForwardTrace<float>;
template struct ForwardTrace<double>;
template class Network<float>;
template class Network<double>;
template ResidualUnit<float> build_residual_unit<float>(const ResidualUnitSpec&, std::size_t);
template ResidualUnit<double> build_residual_unit<double>(const ResidualUnitSpec&, std::size_t);

}  // namespace ectnet
