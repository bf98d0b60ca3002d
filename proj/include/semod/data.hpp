#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "semod/image.hpp"
#include "semod/metrics.hpp"
#include "semod/weathersim.hpp"

namespace semod::data {

enum class Weather { kFoggy, kRainy, kSnowy, kSunny };

inline constexpr std::array<Weather, 4> kAllWeather = {Weather::kFoggy, Weather::kRainy, Weather::kSnowy,
                                                      Weather::kSunny};

std::string_view to_string(Weather w);
Weather parse_weather(std::string_view name);
Weather weather_of(weathersim::WeatherKind kind);
weathersim::WeatherKind kind_of(Weather w);

// The detection vocabulary, in class-id order.
const std::vector<std::string>& class_vocabulary();
inline constexpr int kClassCount = 7;

struct LabeledBox {
  Box box;  // center form, pixels
  int class_id = 0;
  bool operator==(const LabeledBox&) const = default;
};

struct GroundTruthSet {
  std::vector<LabeledBox> boxes;
  int class_count = kClassCount;

  // Positive area, class ids in range and, when a canvas is given, every box
  // inside it (1e-6 px slack).
  void validate(std::optional<std::pair<double, double>> canvas_hw = std::nullopt) const;
  std::vector<metrics::GroundTruthBox> to_metrics(int64_t image_id) const;
};

struct Sample {
  int64_t id = 0;
  std::filesystem::path image_path;
  Weather weather = Weather::kSunny;
  GroundTruthSet boxes;
  std::optional<std::filesystem::path> clean_path;
  std::optional<std::filesystem::path> mask_path;
  int64_t height = 0;
  int64_t width = 0;
};

struct LoadOptions {
  // Decode every image and check its size against the annotation.
  bool decode_images = true;
};

// COCO-like JSON: images[] {id, file_name, width, height, weather, clean_file?, mask_file?},
// annotations[] {image_id, bbox [left, top, w, h], category_id}, categories[] {id, name}.
// Relative file names resolve against the JSON file's directory. Boxes poking
// outside the canvas are clipped; boxes left with no area are rejected.
std::vector<Sample> load_annotations(const std::filesystem::path& path, const LoadOptions& options = {});
void write_annotations(const std::filesystem::path& path, const std::vector<Sample>& samples);

ImagePlane load_image(const Sample& sample);
// Class-index mask [H,W] int64 (0 = background, k+1 = class k).
torch::Tensor load_mask(const Sample& sample);
torch::Tensor read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask);

GroundTruthSet scale_boxes(const GroundTruthSet& boxes, double scale_x, double scale_y);

struct Resized {
  ImagePlane image;
  GroundTruthSet boxes;
  double scale_x = 1.0;
  double scale_y = 1.0;
};

Resized resize_sample(const ImagePlane& image, const GroundTruthSet& boxes, int64_t height, int64_t width);
inline constexpr int64_t kPpuSize = 512;
inline constexpr int64_t kDtuHeight = 512;
inline constexpr int64_t kDtuWidth = 1024;
Resized resize_for_ppu(const ImagePlane& image, const GroundTruthSet& boxes, int64_t size = kPpuSize);
Resized resize_for_dtu(const ImagePlane& image, const GroundTruthSet& boxes, int64_t height = kDtuHeight,
                       int64_t width = kDtuWidth);
// Nearest-neighbor resize of a class mask.
torch::Tensor resize_mask(const torch::Tensor& mask, int64_t height, int64_t width);

struct SplitManifest {
  std::vector<int64_t> train;
  std::vector<int64_t> val;
  uint64_t seed = 0;
  int train_parts = 4;
  int val_parts = 1;

  nlohmann::json to_json() const;
  static SplitManifest from_json(const nlohmann::json& j);
  bool operator==(const SplitManifest&) const = default;
};

// Stratified by weather. Within each stratum the ids are shuffled with the
// seed; the validation share is allotted across strata by largest remainder
// so the overall ratio is met within one sample. Strata with fewer than five
// samples go wholly to train (with a warning).
SplitManifest split(const std::vector<Sample>& samples, uint64_t seed, int train_parts = 4, int val_parts = 1);

// Synthetic street-like scenes: sky/road background plus objects drawn with a
// per-class shape and color, each scene degraded with one weather.
struct SceneConfig {
  int64_t count = 8;
  int64_t height = 128;
  int64_t width = 256;
  int min_objects = 2;
  int max_objects = 5;
  uint64_t seed = 0;
  std::vector<Weather> weathers = {kAllWeather.begin(), kAllWeather.end()};  // assigned round-robin
  double intensity = 1.0;

  void validate() const;
};

struct Scene {
  ImagePlane clean;
  torch::Tensor mask;  // [H,W] int64
  GroundTruthSet boxes;
};

Scene render_scene(int64_t height, int64_t width, int objects, uint64_t seed);

struct SceneDataset {
  std::filesystem::path root;
  std::vector<Sample> samples;
};

// Writes root/images/<weather>/<id>.png, root/clean/<id>.png,
// root/masks/<id>.png, root/annotations.json and root/pairs_manifest.jsonl.
SceneDataset generate_scene_dataset(const std::filesystem::path& root, const SceneConfig& cfg);

}  // namespace semod::data
