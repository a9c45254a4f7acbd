#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ectnet {

enum class UnitVariant {
  V1,       // post-activation: y = relu(x + R(x))
  V2,       // pre-activation:  y = x + R(x)
  ResNeXt,  // pre-activation with a grouped middle convolution
};

std::string_view to_string(UnitVariant v);
UnitVariant unit_variant_from_string(std::string_view s);

/// One bottleneck residual unit: [1, b; 3, b (groups C); 1, out].
struct ResidualUnitSpec {
  UnitVariant variant = UnitVariant::V1;
  std::size_t bottleneck_channels = 0;
  std::size_t out_channels = 0;
  std::size_t cardinality = 1;
  std::size_t stride = 1;  // applied on the middle conv and on the projection shortcut

  /// Expansion out/bottleneck: 4 for ResNet units, 2 for ResNeXt units.
  static std::size_t expansion(UnitVariant v) { return v == UnitVariant::ResNeXt ? 2 : 4; }
  bool pre_activation() const { return variant != UnitVariant::V1; }
  void validate() const;

  friend bool operator==(const ResidualUnitSpec&, const ResidualUnitSpec&) = default;
};

struct StageSpec {
  std::size_t unit_count = 1;
  ResidualUnitSpec unit;  // unit.stride is the stride of the first unit; the rest use 1

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct NetworkSpec {
  std::string name;
  std::size_t stem_filters = 6;
  std::vector<StageSpec> stages;
  std::size_t num_classes = 20;
  std::size_t input_length = 224;
  std::size_t input_channels = 2;

  /// Stem conv + 3 layers per unit + fully connected head.
  std::size_t depth() const;
  /// Throws ConfigError unless there are exactly four stages with strides 1, 2, 2, 2 and
  /// every unit spec is valid.
  void validate() const;

  nlohmann::json to_json() const;
  static NetworkSpec from_json(const nlohmann::json& j);

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// The eleven architectures, in the order they are reported.
const std::vector<std::string>& architecture_names();

/// Architecture description by name; throws ConfigError for unknown names.
NetworkSpec network_spec(std::string_view name);

/// Published trainable-parameter and FLOP figures (absent for the three base-line
/// networks, which are described only graphically).
struct PublishedFigures {
  double parameters = 0.0;
  double flops = 0.0;
};
std::optional<PublishedFigures> published_figures(std::string_view name);

}  // namespace ectnet
