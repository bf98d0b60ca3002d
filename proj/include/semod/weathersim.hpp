#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "semod/image.hpp"

namespace semod::weathersim {

// Inputs of the additive degradation model
//   I(x) = B(x) + sum_i S_i(x) m(x) + A (1 - m(x)).
struct DegradationParams {
  torch::Tensor atmospheric_light;          // [1] or [C], values in [0,1]
  torch::Tensor transmission;               // [H,W], values in [0,1]
  std::vector<torch::Tensor> scattering;    // each [C,H,W], values in [0,1]

  // Throws on any violated invariant. `height`/`width`/`channels` describe
  // the clean image the params will be applied to.
  void validate(int64_t height, int64_t width, int64_t channels) const;
  bool identical_to(const DegradationParams& other) const;
};

enum class WeatherKind { kFog, kRain, kSnow, kClear };

std::string_view to_string(WeatherKind kind);
WeatherKind parse_weather_kind(std::string_view name);

struct WeatherRecipe {
  WeatherKind kind = WeatherKind::kClear;
  double intensity = 1.0;
  uint64_t seed = 0;
  // Fog attenuation per meter. Non-positive means "derive from intensity"
  // (0.02 * intensity).
  double fog_beta = 0.0;
  // Optional [H,W] depth in meters; fog falls back to a vertical ramp
  // (150 m at the top row down to 5 m at the bottom row) without it.
  std::optional<torch::Tensor> depth_map;

  // Clear recipes carry zero intensity; everything else is returned unchanged.
  WeatherRecipe normalized() const;
  void validate() const;
};

// Parses "fog", "rain:1.5", "snow:0.5:42" (kind[:intensity[:seed]]).
WeatherRecipe parse_recipe(std::string_view text);

struct ImageShape {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 3;
};

inline constexpr double kFogAtmosphericLight = 0.9;
inline constexpr double kPrecipitationAtmosphericLight = 0.75;
inline constexpr double kFogRampFarMeters = 150.0;
inline constexpr double kFogRampNearMeters = 5.0;

ImagePlane apply_degradation(const ImagePlane& clean, const DegradationParams& params);

// Deterministic in (recipe, recipe.seed, shape).
DegradationParams make_recipe_params(const WeatherRecipe& recipe, const ImageShape& shape);

// Convenience: params + apply in one call.
ImagePlane degrade(const ImagePlane& clean, const WeatherRecipe& recipe);

struct PairRecord {
  std::string clean_path;     // relative to the manifest directory
  std::string degraded_path;  // relative to the manifest directory
  WeatherKind kind = WeatherKind::kClear;
  double intensity = 0.0;
  uint64_t seed = 0;

  bool operator==(const PairRecord&) const = default;
};

struct PairManifest {
  std::filesystem::path path;  // the .jsonl file
  std::vector<PairRecord> pairs;
};

inline constexpr const char* kManifestName = "pairs_manifest.jsonl";

// Degrades every decodable image in `clean_dir` (sorted by filename) with
// every recipe. Image k of the sorted list uses seed recipe.seed + k.
// Writes out_dir/clean/*.png, out_dir/degraded/*.png and the manifest.
PairManifest generate_pair_dataset(const std::filesystem::path& clean_dir,
                                   const std::vector<WeatherRecipe>& recipes,
                                   const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& path, const std::vector<PairRecord>& pairs);
PairManifest read_manifest(const std::filesystem::path& path);

}  // namespace semod::weathersim
