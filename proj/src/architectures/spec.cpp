#include "ectnet/architectures/spec.hpp"

#include <array>
#include <map>

#include "ectnet/error.hpp"

namespace ectnet {

std::string_view to_string(UnitVariant v) {
  switch (v) {
    case UnitVariant::V1: return "v1";
    case UnitVariant::V2: return "v2";
    case UnitVariant::ResNeXt: return "resnext";
  }
  return "?";
}

UnitVariant unit_variant_from_string(std::string_view s) {
  if (s == "v1") return UnitVariant::V1;
  if (s == "v2") return UnitVariant::V2;
  if (s == "resnext") return UnitVariant::ResNeXt;
  throw ConfigError("unknown residual unit variant '" + std::string(s) + "'");
}

void ResidualUnitSpec::validate() const {
  if (bottleneck_channels == 0 || cardinality == 0 || stride == 0) {
    throw ConfigError("residual unit: bottleneck width, cardinality and stride must be positive");
  }
  if (out_channels != expansion(variant) * bottleneck_channels) {
    throw ConfigError("residual unit (" + std::string(to_string(variant)) + "): out_channels " +
                      std::to_string(out_channels) + " must be " +
                      std::to_string(expansion(variant)) + " x bottleneck " +
                      std::to_string(bottleneck_channels));
  }
  if (variant != UnitVariant::ResNeXt && cardinality != 1) {
    throw ConfigError("residual unit: cardinality must be 1 for ResNet units");
  }
  if (bottleneck_channels % cardinality != 0) {
    throw ConfigError("residual unit: cardinality " + std::to_string(cardinality) +
                      " does not divide bottleneck width " + std::to_string(bottleneck_channels));
  }
}

std::size_t NetworkSpec::depth() const {
  std::size_t units = 0;
  for (const auto& s : stages) units += s.unit_count;
  return 1 + 3 * units + 1;
}

void NetworkSpec::validate() const {
  if (stages.size() != 4) {
    throw ConfigError("network '" + name + "' must have exactly 4 stages, got " +
                      std::to_string(stages.size()));
  }
  if (stem_filters == 0 || num_classes < 2 || input_channels == 0 || input_length == 0) {
    throw ConfigError("network '" + name + "': stem, classes and input extents must be positive");
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    if (st.unit_count == 0) throw ConfigError("stage " + std::to_string(i + 1) + " has no units");
    const std::size_t expected_stride = i == 0 ? 1 : 2;
    if (st.unit.stride != expected_stride) {
      throw ConfigError("stage " + std::to_string(i + 1) + " must start with stride " +
                        std::to_string(expected_stride));
    }
    st.unit.validate();
  }
}

nlohmann::json NetworkSpec::to_json() const {
  nlohmann::json stages_json = nlohmann::json::array();
  for (const auto& s : stages) {
    stages_json.push_back({{"units", s.unit_count},
                           {"variant", to_string(s.unit.variant)},
                           {"bottleneck", s.unit.bottleneck_channels},
                           {"out", s.unit.out_channels},
                           {"cardinality", s.unit.cardinality},
                           {"stride", s.unit.stride}});
  }
  return {{"name", name},
          {"stem_filters", stem_filters},
          {"stages", stages_json},
          {"num_classes", num_classes},
          {"input_length", input_length},
          {"input_channels", input_channels}};
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
  try {
    NetworkSpec s;
    s.name = j.at("name").get<std::string>();
    s.stem_filters = j.at("stem_filters").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.input_length = j.at("input_length").get<std::size_t>();
    s.input_channels = j.at("input_channels").get<std::size_t>();
    for (const auto& st : j.at("stages")) {
      StageSpec stage;
      stage.unit_count = st.at("units").get<std::size_t>();
      stage.unit.variant = unit_variant_from_string(st.at("variant").get<std::string>());
      stage.unit.bottleneck_channels = st.at("bottleneck").get<std::size_t>();
      stage.unit.out_channels = st.at("out").get<std::size_t>();
      stage.unit.cardinality = st.at("cardinality").get<std::size_t>();
      stage.unit.stride = st.at("stride").get<std::size_t>();
      s.stages.push_back(stage);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network description: ") + e.what());
  }
}

namespace {

NetworkSpec make_spec(std::string name, UnitVariant variant, std::size_t stem,
                      std::array<std::size_t, 4> widths, std::size_t units,
                      std::size_t cardinality) {
  NetworkSpec s;
  s.name = std::move(name);
  s.stem_filters = stem;
  for (std::size_t i = 0; i < 4; ++i) {
    StageSpec st;
    st.unit_count = units;
    st.unit.variant = variant;
    st.unit.bottleneck_channels = widths[i];
    st.unit.out_channels = ResidualUnitSpec::expansion(variant) * widths[i];
    st.unit.cardinality = cardinality;
    st.unit.stride = i == 0 ? 1 : 2;
    s.stages.push_back(st);
  }
  return s;
}

const std::map<std::string, NetworkSpec, std::less<>>& registry() {
  using V = UnitVariant;
  static const std::map<std::string, NetworkSpec, std::less<>> specs = [] {
    std::map<std::string, NetworkSpec, std::less<>> m;
    auto put = [&m](NetworkSpec s) { m.emplace(s.name, std::move(s)); };
    put(make_spec("ResNet1Dv1-14", V::V1, 6, {6, 12, 24, 48}, 1, 1));
    put(make_spec("ResNet1Dv2-14", V::V2, 6, {6, 12, 24, 48}, 1, 1));
    put(make_spec("ResNeXt1D-14", V::ResNeXt, 6, {10, 20, 40, 80}, 1, 5));
    put(make_spec("ResNet1Dv1-26", V::V1, 6, {6, 12, 24, 48}, 2, 1));
    put(make_spec("ResNet1Dv2-26", V::V2, 6, {6, 12, 24, 48}, 2, 1));
    put(make_spec("ResNeXt1D-26", V::ResNeXt, 6, {10, 20, 40, 80}, 2, 5));
    put(make_spec("ResNet1Dv1-14-Wider", V::V1, 8, {8, 16, 32, 64}, 1, 1));
    put(make_spec("ResNet1Dv2-14-Wider", V::V2, 8, {8, 16, 32, 64}, 1, 1));
    // Stage 3/4 widths 56/112: the printed 80/160 are not divisible by C = 7, and
    // 56/112 reproduce both the published parameter and FLOP figures.
    put(make_spec("ResNeXt1D-14-Wider1", V::ResNeXt, 8, {14, 28, 56, 112}, 1, 7));
    put(make_spec("ResNeXt1D-14-Wider2", V::ResNeXt, 8, {15, 30, 60, 120}, 1, 5));
    put(make_spec("ResNeXt1D-38", V::ResNeXt, 6, {10, 20, 40, 80}, 3, 5));
    return m;
  }();
  return specs;
}

}  // namespace

const std::vector<std::string>& architecture_names() {
  static const std::vector<std::string> names{
      "ResNet1Dv1-14",       "ResNet1Dv2-14",       "ResNeXt1D-14",
      "ResNet1Dv1-26",       "ResNet1Dv2-26",       "ResNeXt1D-26",
      "ResNet1Dv1-14-Wider", "ResNet1Dv2-14-Wider", "ResNeXt1D-14-Wider1",
      "ResNeXt1D-14-Wider2", "ResNeXt1D-38"};
  return names;
}

NetworkSpec network_spec(std::string_view name) {
  const auto& reg = registry();
  auto it = reg.find(name);
  if (it == reg.end()) throw ConfigError("unknown architecture '" + std::string(name) + "'");
  return it->second;
}

std::optional<PublishedFigures> published_figures(std::string_view name) {
  static const std::map<std::string, PublishedFigures, std::less<>> table{
      {"ResNet1Dv1-26", {9.37e4, 3.70e6}},
      {"ResNet1Dv2-26", {9.30e4, 3.69e6}},
      {"ResNeXt1D-26", {9.38e4, 3.84e6}},
      {"ResNet1Dv1-14-Wider", {1.01e5, 4.11e6}},
      {"ResNet1Dv2-14-Wider", {1.00e5, 4.09e6}},
      {"ResNeXt1D-14-Wider1", {9.77e4, 4.25e6}},
      {"ResNeXt1D-14-Wider2", {1.14e5, 4.99e6}},
      {"ResNeXt1D-38", {1.35e6, 5.42e6}},
  };
  auto it = table.find(name);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

}  // namespace ectnet
