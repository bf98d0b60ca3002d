#include "semod/weathersim.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "semod/log.hpp"
#include "semod/rng.hpp"

namespace semod::weathersim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool within_unit(const torch::Tensor& t) {
  if (t.numel() == 0) return true;
  return torch::isfinite(t).all().item<bool>() && t.min().item<double>() >= 0.0 &&
         t.max().item<double>() <= 1.0;
}

// Single-channel canvas that streaks and particles are painted into before
// being broadcast to the image channels.
class Canvas {
 public:
  Canvas(int64_t h, int64_t w) : h_(h), w_(w), px_(static_cast<size_t>(h * w), 0.0f) {}

  void deposit(int64_t y, int64_t x, float v) {
    if (y < 0 || x < 0 || y >= h_ || x >= w_) return;
    float& p = px_[static_cast<size_t>(y * w_ + x)];
    p = std::max(p, std::min(v, 1.0f));
  }

  // Streak from (x0,y0) along `angle_rad` (measured from the horizontal axis,
  // image y pointing down) with the given length and thickness.
  void streak(double x0, double y0, double angle_rad, double length, double thickness, float value) {
    const double dx = std::cos(angle_rad);
    const double dy = std::sin(angle_rad);
    const double half = thickness / 2.0;
    const int steps = std::max(1, static_cast<int>(std::ceil(length * 2.0)));
    for (int s = 0; s <= steps; ++s) {
      const double t = length * s / steps;
      const double cx = x0 + dx * t;
      const double cy = y0 + dy * t;
      // Fade the tails so streaks are brightest in the middle.
      const double fade = 1.0 - std::abs(2.0 * t / length - 1.0) * 0.5;
      for (int64_t yy = static_cast<int64_t>(std::floor(cy - half)); yy <= static_cast<int64_t>(std::ceil(cy + half)); ++yy) {
        for (int64_t xx = static_cast<int64_t>(std::floor(cx - half)); xx <= static_cast<int64_t>(std::ceil(cx + half)); ++xx) {
          const double dist = std::hypot(xx + 0.5 - cx, yy + 0.5 - cy);
          const double cover = std::clamp(half + 0.5 - dist, 0.0, 1.0);
          if (cover > 0.0) deposit(yy, xx, static_cast<float>(value * fade * cover));
        }
      }
    }
  }

  // Rotated ellipse with a soft rim.
  void particle(double cx, double cy, double rx, double ry, double angle_rad, float value) {
    const double c = std::cos(angle_rad);
    const double s = std::sin(angle_rad);
    const double reach = std::max(rx, ry) + 1.0;
    for (int64_t yy = static_cast<int64_t>(std::floor(cy - reach)); yy <= static_cast<int64_t>(std::ceil(cy + reach)); ++yy) {
      for (int64_t xx = static_cast<int64_t>(std::floor(cx - reach)); xx <= static_cast<int64_t>(std::ceil(cx + reach)); ++xx) {
        const double px = xx + 0.5 - cx;
        const double py = yy + 0.5 - cy;
        const double u = (c * px + s * py) / rx;
        const double v = (-s * px + c * py) / ry;
        const double q = std::sqrt(u * u + v * v);
        const double falloff = std::clamp((1.0 - q) / 0.35, 0.0, 1.0);
        if (falloff > 0.0) deposit(yy, xx, static_cast<float>(value * falloff));
      }
    }
  }

  torch::Tensor to_layer(int64_t channels) const {
    auto plane = torch::from_blob(const_cast<float*>(px_.data()), {1, h_, w_}, torch::kFloat32).clone();
    return plane.expand({channels, h_, w_}).contiguous().to(torch::kFloat64);
  }

 private:
  int64_t h_;
  int64_t w_;
  std::vector<float> px_;
};

double size_scale(const ImageShape& shape) {
  return std::max(0.25, static_cast<double>(std::min(shape.height, shape.width)) / 128.0);
}

int64_t particle_count(double intensity, const ImageShape& shape, double per_pixel) {
  return static_cast<int64_t>(std::llround(intensity * static_cast<double>(shape.height * shape.width) * per_pixel));
}

torch::Tensor constant_light(double value, int64_t channels) {
  return torch::full({channels}, value, torch::kFloat64);
}

DegradationParams fog_params(const WeatherRecipe& recipe, const ImageShape& shape) {
  const double beta = recipe.fog_beta > 0.0 ? recipe.fog_beta : 0.02 * recipe.intensity;
  torch::Tensor depth;
  if (recipe.depth_map) {
    depth = recipe.depth_map->to(torch::kFloat64);
    if (depth.dim() != 2 || depth.size(0) != shape.height || depth.size(1) != shape.width) {
      throw DimensionError(fmt::format("fog depth map must be {}x{}", shape.height, shape.width));
    }
    if (depth.numel() > 0 && depth.min().item<double>() < 0.0) {
      throw ValidationError("fog depth map must be non-negative");
    }
  } else {
    // Far at the top row, near at the bottom row.
    auto rows = shape.height > 1 ? torch::linspace(0.0, 1.0, shape.height, torch::kFloat64)
                                 : torch::zeros({1}, torch::kFloat64);
    auto column = kFogRampFarMeters + (kFogRampNearMeters - kFogRampFarMeters) * rows;
    depth = column.unsqueeze(1).expand({shape.height, shape.width}).contiguous();
  }
  DegradationParams p;
  p.atmospheric_light = constant_light(kFogAtmosphericLight, shape.channels);
  p.transmission = torch::exp(-beta * depth).clamp(0.0, 1.0);
  return p;
}

DegradationParams rain_params(const WeatherRecipe& recipe, const ImageShape& shape) {
  Rng rng(recipe.seed);
  const double scale = size_scale(shape);
  const double base_angle = rng.uniform(70.0, 110.0);
  DegradationParams p;
  p.atmospheric_light = constant_light(kPrecipitationAtmosphericLight, shape.channels);
  p.transmission = torch::full({shape.height, shape.width}, std::clamp(1.0 - 0.15 * recipe.intensity, 0.3, 1.0),
                               torch::kFloat64);

  struct Layer {
    double per_pixel, len_lo, len_hi, thick, val_lo, val_hi;
  };
  // Far streaks are short, thin and faint; near ones long and bright.
  const Layer layers[] = {{1.0 / 350.0, 4.0, 10.0, 1.0, 0.15, 0.35}, {1.0 / 1100.0, 12.0, 30.0, 1.6, 0.35, 0.7}};
  for (const Layer& layer : layers) {
    Canvas canvas(shape.height, shape.width);
    const int64_t n = particle_count(recipe.intensity, shape, layer.per_pixel);
    for (int64_t i = 0; i < n; ++i) {
      const double deg = std::clamp(base_angle + rng.uniform(-3.0, 3.0), 70.0, 110.0);
      const double len = rng.uniform(layer.len_lo, layer.len_hi) * scale;
      const double x = rng.uniform(-0.1, 1.1) * static_cast<double>(shape.width);
      const double y = rng.uniform(-0.2, 1.0) * static_cast<double>(shape.height);
      canvas.streak(x, y, deg * std::numbers::pi / 180.0, len, layer.thick,
                    static_cast<float>(rng.uniform(layer.val_lo, layer.val_hi)));
    }
    p.scattering.push_back(canvas.to_layer(shape.channels));
  }
  return p;
}

DegradationParams snow_params(const WeatherRecipe& recipe, const ImageShape& shape) {
  Rng rng(recipe.seed);
  DegradationParams p;
  p.atmospheric_light = constant_light(kPrecipitationAtmosphericLight, shape.channels);
  p.transmission = torch::full({shape.height, shape.width}, std::clamp(1.0 - 0.1 * recipe.intensity, 0.4, 1.0),
                               torch::kFloat64);
  struct Layer {
    double per_pixel, r_lo, r_hi, val_lo, val_hi;
  };
  // Distance bands: many small dim flakes far away, few large bright ones near.
  const Layer layers[] = {{1.0 / 150.0, 1.0, 2.0, 0.4, 0.6}, {1.0 / 500.0, 2.0, 4.0, 0.55, 0.8},
                          {1.0 / 1800.0, 4.0, 6.0, 0.7, 1.0}};
  for (const Layer& layer : layers) {
    Canvas canvas(shape.height, shape.width);
    const int64_t n = particle_count(recipe.intensity, shape, layer.per_pixel);
    for (int64_t i = 0; i < n; ++i) {
      const double rx = rng.uniform(layer.r_lo, layer.r_hi);
      const double ry = rx * rng.uniform(0.6, 1.0);
      const double x = rng.uniform(0.0, static_cast<double>(shape.width));
      const double y = rng.uniform(0.0, static_cast<double>(shape.height));
      const double angle = rng.uniform(0.0, std::numbers::pi);
      canvas.particle(x, y, rx, ry, angle, static_cast<float>(rng.uniform(layer.val_lo, layer.val_hi)));
    }
    p.scattering.push_back(canvas.to_layer(shape.channels));
  }
  return p;
}

std::string recipe_tag(const WeatherRecipe& r) {
  return fmt::format("{}_{:g}", to_string(r.kind), r.intensity);
}

}  // namespace

void DegradationParams::validate(int64_t height, int64_t width, int64_t channels) const {
  if (!atmospheric_light.defined() || atmospheric_light.dim() != 1 ||
      (atmospheric_light.size(0) != 1 && atmospheric_light.size(0) != channels)) {
    throw DimensionError(fmt::format("atmospheric light must have 1 or {} entries", channels));
  }
  if (!within_unit(atmospheric_light)) throw ValidationError("atmospheric light outside [0,1]");
  if (!transmission.defined() || transmission.dim() != 2 || transmission.size(0) != height ||
      transmission.size(1) != width) {
    throw DimensionError(fmt::format("transmission map must be {}x{}", height, width));
  }
  if (!within_unit(transmission)) throw ValidationError("transmission map outside [0,1]");
  for (size_t i = 0; i < scattering.size(); ++i) {
    const auto& s = scattering[i];
    if (!s.defined() || s.dim() != 3 || s.size(0) != channels || s.size(1) != height || s.size(2) != width) {
      throw DimensionError(fmt::format("scattering layer {} must be {}x{}x{}", i, channels, height, width));
    }
    if (!within_unit(s)) throw ValidationError(fmt::format("scattering layer {} outside [0,1]", i));
  }
}

bool DegradationParams::identical_to(const DegradationParams& other) const {
  if (scattering.size() != other.scattering.size()) return false;
  if (!torch::equal(atmospheric_light, other.atmospheric_light) || !torch::equal(transmission, other.transmission)) {
    return false;
  }
  for (size_t i = 0; i < scattering.size(); ++i) {
    if (!torch::equal(scattering[i], other.scattering[i])) return false;
  }
  return true;
}

std::string_view to_string(WeatherKind kind) {
  switch (kind) {
    case WeatherKind::kFog: return "fog";
    case WeatherKind::kRain: return "rain";
    case WeatherKind::kSnow: return "snow";
    case WeatherKind::kClear: return "clear";
  }
  return "unknown";
}

WeatherKind parse_weather_kind(std::string_view name) {
  if (name == "fog") return WeatherKind::kFog;
  if (name == "rain") return WeatherKind::kRain;
  if (name == "snow") return WeatherKind::kSnow;
  if (name == "clear") return WeatherKind::kClear;
  throw ValidationError(fmt::format("unknown weather kind '{}' (expected fog, rain, snow or clear)", name));
}

WeatherRecipe WeatherRecipe::normalized() const {
  WeatherRecipe r = *this;
  if (r.kind == WeatherKind::kClear) r.intensity = 0.0;
  return r;
}

void WeatherRecipe::validate() const {
  if (!std::isfinite(intensity) || intensity < 0.0) {
    throw ValidationError(fmt::format("recipe intensity must be >= 0, got {}", intensity));
  }
  if (!std::isfinite(fog_beta) || fog_beta < 0.0) {
    throw ValidationError("fog_beta must be >= 0");
  }
  if (depth_map && kind != WeatherKind::kFog) {
    throw ValidationError("depth maps only apply to fog recipes");
  }
}

WeatherRecipe parse_recipe(std::string_view text) {
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t pos = text.find(':', start);
    parts.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (parts.size() > 3) throw ValidationError(fmt::format("bad recipe '{}'", text));
  WeatherRecipe r;
  r.kind = parse_weather_kind(parts[0]);
  try {
    if (parts.size() > 1) r.intensity = std::stod(parts[1]);
    if (parts.size() > 2) r.seed = std::stoull(parts[2]);
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("bad recipe '{}' (expected kind[:intensity[:seed]])", text));
  }
  r = r.normalized();
  r.validate();
  return r;
}

ImagePlane apply_degradation(const ImagePlane& clean, const DegradationParams& params) {
  if (clean.empty()) throw ValidationError("clean image is empty");
  params.validate(clean.height(), clean.width(), clean.channels());
  clean.validate_range("clean image");

  const auto dtype = clean.tensor().scalar_type();
  const auto m = params.transmission.to(dtype).unsqueeze(0);
  const auto a = params.atmospheric_light.to(dtype).view({-1, 1, 1});
  auto out = clean.tensor().clone();
  for (const auto& s : params.scattering) out.add_(s.to(dtype) * m);
  out.add_(a * (1.0 - m));
  return ImagePlane(out.clamp_(0.0, 1.0));
}

DegradationParams make_recipe_params(const WeatherRecipe& input, const ImageShape& shape) {
  if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0) {
    throw ValidationError("image shape must be positive");
  }
  const WeatherRecipe recipe = input.normalized();
  recipe.validate();
  switch (recipe.kind) {
    case WeatherKind::kFog: return fog_params(recipe, shape);
    case WeatherKind::kRain: return rain_params(recipe, shape);
    case WeatherKind::kSnow: return snow_params(recipe, shape);
    case WeatherKind::kClear: {
      DegradationParams p;
      p.atmospheric_light = constant_light(kFogAtmosphericLight, shape.channels);
      p.transmission = torch::ones({shape.height, shape.width}, torch::kFloat64);
      return p;
    }
  }
  throw ValidationError("unknown weather kind");
}

ImagePlane degrade(const ImagePlane& clean, const WeatherRecipe& recipe) {
  return apply_degradation(clean, make_recipe_params(recipe, {clean.height(), clean.width(), clean.channels()}));
}

PairManifest generate_pair_dataset(const fs::path& clean_dir, const std::vector<WeatherRecipe>& recipes,
                                   const fs::path& out_dir) {
  if (recipes.empty()) throw ValidationError("no weather recipes given");
  if (!fs::is_directory(clean_dir)) {
    throw ValidationError(fmt::format("clean directory '{}' does not exist", clean_dir.string()));
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(clean_dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError(fmt::format("'{}' contains no images", clean_dir.string()));

  fs::create_directories(out_dir / "clean");
  fs::create_directories(out_dir / "degraded");
  std::vector<PairRecord> pairs;
  uint64_t index = 0;
  for (const auto& file : files) {
    ImagePlane clean;
    try {
      clean = read_png(file);
    } catch (const ValidationError& e) {
      log::warn("skipping {}: {}", file.string(), e.what());
      continue;
    }
    const std::string stem = file.stem().string();
    const std::string clean_rel = fmt::format("clean/{}.png", stem);
    write_png(out_dir / clean_rel, clean);
    for (const auto& raw : recipes) {
      WeatherRecipe recipe = raw.normalized();
      recipe.seed = raw.seed + index;
      const std::string degraded_rel = fmt::format("degraded/{}_{}.png", stem, recipe_tag(recipe));
      write_png(out_dir / degraded_rel, degrade(clean, recipe));
      pairs.push_back({clean_rel, degraded_rel, recipe.kind, recipe.intensity, recipe.seed});
    }
    ++index;
  }
  if (pairs.empty()) throw ValidationError(fmt::format("no decodable images in '{}'", clean_dir.string()));
  PairManifest manifest{out_dir / kManifestName, std::move(pairs)};
  write_manifest(manifest.path, manifest.pairs);
  return manifest;
}

void write_manifest(const fs::path& path, const std::vector<PairRecord>& pairs) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure(fmt::format("cannot write manifest '{}'", path.string()));
  for (const auto& p : pairs) {
    json row = {{"clean_path", p.clean_path},
                {"degraded_path", p.degraded_path},
                {"kind", std::string(to_string(p.kind))},
                {"intensity", p.intensity},
                {"seed", p.seed}};
    out << row.dump() << '\n';
  }
}

PairManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open manifest '{}'", path.string()));
  PairManifest manifest{path, {}};
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json row = json::parse(line);
      manifest.pairs.push_back({row.at("clean_path").get<std::string>(), row.at("degraded_path").get<std::string>(),
                                parse_weather_kind(row.at("kind").get<std::string>()),
                                row.at("intensity").get<double>(), row.at("seed").get<uint64_t>()});
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  return manifest;
}

}  // namespace semod::weathersim
