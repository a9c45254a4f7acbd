#include "ectnet/architectures/accounting.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace ectnet {

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "bn";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Add: return "add";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::FullyConnected: return "fc";
  }
  return "?";
}

std::uint64_t LayerInfo::parameters() const {
  switch (kind) {
    case LayerKind::Conv:
      return out_channels * (in_channels / groups) * kernel_size + (bias ? out_channels : 0);
    case LayerKind::BatchNorm: return 2 * out_channels;
    case LayerKind::FullyConnected: return in_channels * out_channels + (bias ? out_channels : 0);
    default: return 0;
  }
}

std::uint64_t LayerInfo::macs() const {
  switch (kind) {
    case LayerKind::Conv:
      return static_cast<std::uint64_t>(out_length) * out_channels * (in_channels / groups) *
             kernel_size;
    case LayerKind::FullyConnected: return static_cast<std::uint64_t>(in_channels) * out_channels;
    default: return 0;
  }
}

std::uint64_t count_parameters(const LayerTable& layers, ParameterConvention convention) {
  std::uint64_t total = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::BatchNorm && !convention.include_batchnorm) continue;
    total += l.parameters();
  }
  return total;
}

std::uint64_t layer_flops(const LayerInfo& l, const FlopConvention& c) {
  const double elements = static_cast<double>(l.out_length) * static_cast<double>(l.out_channels);
  double f = c.flops_per_mac * static_cast<double>(l.macs());
  switch (l.kind) {
    case LayerKind::Conv:
    case LayerKind::FullyConnected:
      if (c.include_bias && l.bias) f += elements;
      break;
    case LayerKind::BatchNorm:
      if (c.include_batchnorm) f += 2.0 * elements;
      break;
    case LayerKind::ReLU:
      if (c.include_relu) f += elements;
      break;
    case LayerKind::Add:
      if (c.include_add) f += elements;
      break;
    case LayerKind::MaxPool:
      if (c.include_pool) f += elements * static_cast<double>(l.kernel_size - 1);
      break;
    case LayerKind::GlobalAvgPool:
      if (c.include_pool) f += static_cast<double>(l.in_length) * static_cast<double>(l.in_channels);
      break;
  }
  return static_cast<std::uint64_t>(std::llround(f));
}

std::uint64_t count_flops(const LayerTable& layers, FlopConvention convention) {
  std::uint64_t total = 0;
  for (const auto& l : layers) total += layer_flops(l, convention);
  return total;
}

std::string FlopConvention::describe() const {
  std::ostringstream os;
  os << flops_per_mac << " FLOP/MAC";
  if (include_bias) os << " +bias";
  if (include_batchnorm) os << " +bn";
  if (include_relu) os << " +relu";
  if (include_pool) os << " +pool";
  if (include_add) os << " +add";
  return os.str();
}

std::string breakdown_report(const LayerTable& layers, const FlopConvention& convention) {
  std::ostringstream os;
  os << std::left << std::setw(34) << "layer" << std::setw(8) << "kind" << std::setw(22)
     << "channels(k,s,g)" << std::setw(12) << "length" << std::right << std::setw(10)
     << "params" << std::setw(12) << "flops" << '\n';
  std::uint64_t params = 0, flops = 0;
  for (const auto& l : layers) {
    std::ostringstream geom;
    geom << l.in_channels << "->" << l.out_channels;
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool) {
      geom << " (" << l.kernel_size << ',' << l.stride << ',' << l.groups << ')';
    }
    std::ostringstream len;
    len << l.in_length << "->" << l.out_length;
    const auto p = l.parameters();
    const auto f = layer_flops(l, convention);
    params += p;
    flops += f;
    os << std::left << std::setw(34) << l.name << std::setw(8) << to_string(l.kind)
       << std::setw(22) << geom.str() << std::setw(12) << len.str() << std::right
       << std::setw(10) << p << std::setw(12) << f << '\n';
  }
  os << std::left << std::setw(76) << "total" << std::right << std::setw(10) << params
     << std::setw(12) << flops << "  [" << convention.describe() << "]\n";
  return os.str();
}

double round_significant(double x, int digits) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  const double scale = std::pow(10.0, digits - 1 - static_cast<int>(std::floor(std::log10(std::abs(x)))));
  return std::round(x * scale) / scale;
}

std::vector<ConventionResult> convention_sweep(const LayerTable& layers, double reference) {
  std::vector<ConventionResult> out;
  for (double per_mac : {1.0, 2.0}) {
    for (unsigned mask = 0; mask < 32; ++mask) {
      FlopConvention c;
      c.flops_per_mac = per_mac;
      c.include_bias = mask & 1u;
      c.include_batchnorm = mask & 2u;
      c.include_relu = mask & 4u;
      c.include_pool = mask & 8u;
      c.include_add = mask & 16u;
      const auto f = count_flops(layers, c);
      out.push_back({c, f, reference > 0.0 ? (static_cast<double>(f) - reference) / reference : 0.0});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ConventionResult& a, const ConventionResult& b) {
    return std::abs(a.relative_error) < std::abs(b.relative_error);
  });
  return out;
}

std::string convention_sweep_report(const LayerTable& layers, double reference) {
  std::ostringstream os;
  os << "reference " << reference << " FLOPs\n";
  for (const auto& r : convention_sweep(layers, reference)) {
    os << std::setw(12) << r.flops << std::setw(10) << std::fixed << std::setprecision(2)
       << 100.0 * r.relative_error << "%  " << r.convention.describe() << '\n';
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

}  // namespace ectnet
