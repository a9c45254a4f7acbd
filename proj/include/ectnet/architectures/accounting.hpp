#pragma once

// Parameter and FLOP accounting over a flat, static description of the layers
// a network evaluates for a given input length.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ectnet {

enum class LayerKind { Conv, BatchNorm, ReLU, MaxPool, Add, GlobalAvgPool, FullyConnected };

std::string_view to_string(LayerKind k);

struct LayerInfo {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_size = 1;
  std::size_t stride = 1;
  std::size_t groups = 1;
  bool bias = false;
  std::size_t in_length = 1;
  std::size_t out_length = 1;

  /// Trainable scalars held by this layer.
  std::uint64_t parameters() const;
  /// Multiply-accumulate operations (convolution and fully connected layers only).
  std::uint64_t macs() const;
};

using LayerTable = std::vector<LayerInfo>;

struct ParameterConvention {
  bool include_batchnorm = true;  // gamma and beta; running statistics never count
};

std::uint64_t count_parameters(const LayerTable& layers, ParameterConvention convention = {});

/// Default: 1 multiply-accumulate = 2 FLOPs (multiply and add counted
/// separately), only convolution and fully connected layers counted.
struct FlopConvention {
  double flops_per_mac = 2.0;
  bool include_bias = false;       // one add per biased output element
  bool include_batchnorm = false;  // scale and shift: 2 per element
  bool include_relu = false;       // 1 per element
  bool include_pool = false;       // kernel-1 comparisons per output element, L adds for GAP
  bool include_add = false;        // 1 per element of a residual addition

  std::string describe() const;
};

std::uint64_t count_flops(const LayerTable& layers, FlopConvention convention = {});
std::uint64_t layer_flops(const LayerInfo& layer, const FlopConvention& convention);

/// Per-layer text table (name, kind, geometry, parameters, FLOPs).
std::string breakdown_report(const LayerTable& layers, const FlopConvention& convention = {});

/// x rounded to `digits` significant figures.
double round_significant(double x, int digits);

struct ConventionResult {
  FlopConvention convention;
  std::uint64_t flops = 0;
  double relative_error = 0.0;  // against the reference count
};

/// Every combination of counting options (1 or 2 FLOPs per MAC, each optional
/// term on or off), closest to `reference` first.
std::vector<ConventionResult> convention_sweep(const LayerTable& layers, double reference);
std::string convention_sweep_report(const LayerTable& layers, double reference);

}  // namespace ectnet
