#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spiralmlp/offsets.hpp"

namespace spiralmlp {

enum class Style { PVT, Swin };

std::string to_string(Style s);
Style parse_style(const std::string& s);

/// One of the four stages: a downsampling embedding followed by `depth`
/// identical Spiral Blocks of width `channels`.
struct StageConfig {
  std::size_t stride = 2;
  std::size_t channels = 64;
  std::size_t expansion = 4;
  std::size_t depth = 1;
  std::size_t a_max = 3;
  std::size_t partitions = 2;
  std::size_t period = 8;

  bool operator==(const StageConfig&) const = default;
};

struct ModelConfig {
  std::string name = "custom";
  Style style = Style::PVT;
  std::array<StageConfig, 4> stages{};
  std::size_t num_classes = 1000;
  double drop_path = 0.1;  ///< largest per-block rate; rates ramp linearly from 0
  Rounding rounding = Rounding::NearestInteger;

  /// Throws ConfigError on impossible stage arithmetic.
  void validate() const;
  /// Product of the stage strides (32 for every preset).
  std::size_t total_stride() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Per-build overrides of the spiral geometry of every stage.
struct SpiralOverrides {
  std::optional<std::size_t> a_max;
  std::optional<std::size_t> partitions;
  std::optional<std::size_t> period;
  std::optional<Rounding> rounding;
};

/// Named architectures: B1..B5 (PVT-style), T, S, B (Swin-style) and
/// tiny-desk, a reduced PVT-style network for tests and desk-scale training.
ModelConfig preset(std::string_view name);
std::vector<std::string> preset_names();

ModelConfig apply_overrides(ModelConfig cfg, const SpiralOverrides& o);

// Config files are `key = value` lines; `#` starts a comment. Model keys:
//
//   preset      = B1 | ... | tiny-desk   (base config, applied first)
//   style       = pvt | swin
//   num_classes = <int>
//   drop_path   = <real>
//   rounding    = nearest | bilinear
//   a_max, partitions, period = <int>   (all stages)
//   stageN      = stride=S channels=C expansion=E depth=L a_max=A partitions=K period=T
//                 (N in 1..4; any subset of fields)

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines; throws ConfigError naming the line on syntax
/// errors or duplicate keys.
KeyValues parse_key_values(std::string_view text);

/// Value conversions used by the config readers; throw ConfigError naming
/// the key.
std::size_t parse_size(const std::string& key, const std::string& value);
double parse_real(const std::string& key, const std::string& value);

/// Model keys recognised by model_config_from().
const std::vector<std::string>& model_config_keys();

ModelConfig model_config_from(const KeyValues& kv);
/// Fully explicit text form (no preset key) that parses back to `cfg`.
std::string serialize_model_config(const ModelConfig& cfg);

}  // namespace spiralmlp
