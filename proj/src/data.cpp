#include "semod/data.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "semod/log.hpp"
#include "semod/rng.hpp"

namespace semod::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Weather w) {
  switch (w) {
    case Weather::kFoggy: return "foggy";
    case Weather::kRainy: return "rainy";
    case Weather::kSnowy: return "snowy";
    case Weather::kSunny: return "sunny";
  }
  return "sunny";
}

Weather parse_weather(std::string_view name) {
  for (Weather w : kAllWeather) {
    if (to_string(w) == name) return w;
  }
  throw ValidationError(fmt::format("unknown weather tag '{}' (expected foggy, rainy, snowy or sunny)", name));
}

Weather weather_of(weathersim::WeatherKind kind) {
  switch (kind) {
    case weathersim::WeatherKind::kFog: return Weather::kFoggy;
    case weathersim::WeatherKind::kRain: return Weather::kRainy;
    case weathersim::WeatherKind::kSnow: return Weather::kSnowy;
    case weathersim::WeatherKind::kClear: return Weather::kSunny;
  }
  return Weather::kSunny;
}

weathersim::WeatherKind kind_of(Weather w) {
  switch (w) {
    case Weather::kFoggy: return weathersim::WeatherKind::kFog;
    case Weather::kRainy: return weathersim::WeatherKind::kRain;
    case Weather::kSnowy: return weathersim::WeatherKind::kSnow;
    case Weather::kSunny: return weathersim::WeatherKind::kClear;
  }
  return weathersim::WeatherKind::kClear;
}

const std::vector<std::string>& class_vocabulary() {
  static const std::vector<std::string> names = {"car",   "pedestrian", "truck",     "bus",
                                                 "rider", "bicycle",    "motorcycle"};
  return names;
}

void GroundTruthSet::validate(std::optional<std::pair<double, double>> canvas_hw) const {
  constexpr double kSlack = 1e-6;
  for (size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    if (b.class_id < 0 || b.class_id >= class_count) {
      throw ValidationError(fmt::format("box {}: class id {} outside [0,{})", i, b.class_id, class_count));
    }
    if (!(b.box.w > 0.0) || !(b.box.h > 0.0)) {
      throw ValidationError(fmt::format("box {}: non-positive area ({}x{})", i, b.box.w, b.box.h));
    }
    if (canvas_hw) {
      const auto [h, w] = *canvas_hw;
      if (b.box.x1() < -kSlack || b.box.y1() < -kSlack || b.box.x2() > w + kSlack || b.box.y2() > h + kSlack) {
        throw ValidationError(fmt::format("box {} lies outside the {}x{} canvas", i, h, w));
      }
    }
  }
}

std::vector<metrics::GroundTruthBox> GroundTruthSet::to_metrics(int64_t image_id) const {
  std::vector<metrics::GroundTruthBox> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) out.push_back({image_id, b.class_id, b.box});
  return out;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& name) {
  fs::path p(name);
  return p.is_absolute() ? p : base / p;
}

std::string relative_name(const fs::path& base, const fs::path& p) {
  auto rel = fs::relative(p, base);
  return rel.empty() ? p.string() : rel.generic_string();
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(fmt::format("{}: missing field '{}'", where, key));
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: field '{}': {}", where, key, e.what()));
  }
}

}  // namespace

std::vector<Sample> load_annotations(const fs::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open annotation file '{}'", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: byte {}: {}", path.string(), e.byte, e.what()));
  }
  const std::string where = path.string();
  if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array()) {
    throw ParseError(where + ": expected an object with an 'images' array");
  }
  const fs::path base = path.parent_path();
  const auto& vocab = class_vocabulary();

  std::map<int64_t, int> category_to_class;
  std::vector<std::string> unknown;
  std::set<int64_t> listed;
  if (doc.contains("categories")) {
    for (size_t i = 0; i < doc["categories"].size(); ++i) {
      const auto& c = doc["categories"][i];
      const auto loc = fmt::format("{}: categories[{}]", where, i);
      const auto id = field<int64_t>(c, "id", loc);
      const auto name = field<std::string>(c, "name", loc);
      auto it = std::find(vocab.begin(), vocab.end(), name);
      if (it == vocab.end()) {
        unknown.push_back(fmt::format("{} (id {})", name, id));
        listed.insert(id);
      } else {
        category_to_class[id] = static_cast<int>(it - vocab.begin());
      }
    }
  } else {
    // Without a category table the ids index the vocabulary directly.
    for (int k = 0; k < kClassCount; ++k) category_to_class[k] = k;
  }

  std::vector<Sample> samples;
  std::map<int64_t, size_t> index;
  for (size_t i = 0; i < doc["images"].size(); ++i) {
    const auto& im = doc["images"][i];
    const auto loc = fmt::format("{}: images[{}]", where, i);
    Sample s;
    s.id = field<int64_t>(im, "id", loc);
    s.image_path = resolve(base, field<std::string>(im, "file_name", loc));
    s.width = field<int64_t>(im, "width", loc);
    s.height = field<int64_t>(im, "height", loc);
    if (s.width <= 0 || s.height <= 0) throw ValidationError(loc + ": zero-sized image");
    s.weather = parse_weather(im.value("weather", std::string("sunny")));
    if (im.contains("clean_file")) s.clean_path = resolve(base, im["clean_file"].get<std::string>());
    if (im.contains("mask_file")) s.mask_path = resolve(base, im["mask_file"].get<std::string>());
    if (!index.emplace(s.id, samples.size()).second) {
      throw ValidationError(fmt::format("{}: duplicate image id {}", loc, s.id));
    }
    samples.push_back(std::move(s));
  }

  const auto annotations = doc.value("annotations", json::array());
  for (size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    const auto loc = fmt::format("{}: annotations[{}]", where, i);
    const auto image_id = field<int64_t>(a, "image_id", loc);
    const auto category = field<int64_t>(a, "category_id", loc);
    const auto bbox = field<std::vector<double>>(a, "bbox", loc);
    if (bbox.size() != 4) throw ParseError(loc + ": bbox must have 4 numbers");
    auto it = index.find(image_id);
    if (it == index.end()) throw ValidationError(fmt::format("{}: unknown image id {}", loc, image_id));
    auto cls = category_to_class.find(category);
    if (cls == category_to_class.end()) {
      if (listed.insert(category).second) unknown.push_back(fmt::format("category id {}", category));
      continue;
    }
    auto& s = samples[it->second];
    const double x1 = std::clamp(bbox[0], 0.0, static_cast<double>(s.width));
    const double y1 = std::clamp(bbox[1], 0.0, static_cast<double>(s.height));
    const double x2 = std::clamp(bbox[0] + bbox[2], 0.0, static_cast<double>(s.width));
    const double y2 = std::clamp(bbox[1] + bbox[3], 0.0, static_cast<double>(s.height));
    if (x2 - x1 <= 0.0 || y2 - y1 <= 0.0) {
      throw ValidationError(fmt::format("{}: box has no area inside the {}x{} canvas", loc, s.height, s.width));
    }
    s.boxes.boxes.push_back({Box::from_corners(x1, y1, x2, y2), cls->second});
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw ValidationError(fmt::format("{}: categories outside the vocabulary: {}", where, list));
  }

  for (const auto& s : samples) {
    s.boxes.validate(std::make_pair(static_cast<double>(s.height), static_cast<double>(s.width)));
    if (options.decode_images) {
      auto img = read_png(s.image_path);
      if (img.height() != s.height || img.width() != s.width) {
        throw ValidationError(fmt::format("image '{}' is {}x{} but annotated as {}x{}", s.image_path.string(),
                                          img.height(), img.width(), s.height, s.width));
      }
    }
  }
  return samples;
}

void write_annotations(const fs::path& path, const std::vector<Sample>& samples) {
  const fs::path base = path.parent_path();
  json images = json::array(), annotations = json::array(), categories = json::array();
  const auto& vocab = class_vocabulary();
  for (size_t k = 0; k < vocab.size(); ++k) categories.push_back({{"id", k}, {"name", vocab[k]}});
  int64_t ann_id = 1;
  for (const auto& s : samples) {
    json im = {{"id", s.id},
               {"file_name", relative_name(base, s.image_path)},
               {"width", s.width},
               {"height", s.height},
               {"weather", std::string(to_string(s.weather))}};
    if (s.clean_path) im["clean_file"] = relative_name(base, *s.clean_path);
    if (s.mask_path) im["mask_file"] = relative_name(base, *s.mask_path);
    images.push_back(im);
    for (const auto& b : s.boxes.boxes) {
      annotations.push_back({{"id", ann_id++},
                             {"image_id", s.id},
                             {"category_id", b.class_id},
                             {"bbox", {b.box.x1(), b.box.y1(), b.box.w, b.box.h}}});
    }
  }
  if (!base.empty()) fs::create_directories(base);
  std::ofstream out(path);
  if (!out) throw RuntimeFailure(fmt::format("cannot write '{}'", path.string()));
  out << json{{"images", images}, {"annotations", annotations}, {"categories", categories}}.dump(1) << '\n';
}

ImagePlane load_image(const Sample& sample) {
  auto img = read_png(sample.image_path);
  if (img.height() == 0 || img.width() == 0) throw ValidationError("zero-sized image");
  return img;
}

torch::Tensor read_mask_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw ValidationError(fmt::format("cannot decode mask '{}'", path.string()));
  if (m.type() != CV_8UC1) throw ValidationError(fmt::format("mask '{}' must be 8-bit single channel", path.string()));
  return torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).to(torch::kInt64);
}

void write_mask_png(const fs::path& path, const torch::Tensor& mask) {
  if (mask.dim() != 2) throw DimensionError("mask must be [H,W]");
  if (mask.numel() > 0 && (mask.min().item<int64_t>() < 0 || mask.max().item<int64_t>() > 255)) {
    throw ValidationError("mask values must fit in 8 bits");
  }
  auto bytes = mask.to(torch::kUInt8).contiguous();
  cv::Mat mat(static_cast<int>(mask.size(0)), static_cast<int>(mask.size(1)), CV_8UC1, bytes.data_ptr<uint8_t>());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw RuntimeFailure(fmt::format("failed to write '{}'", path.string()));
}

torch::Tensor load_mask(const Sample& sample) {
  if (!sample.mask_path) throw ValidationError(fmt::format("sample {} has no mask", sample.id));
  return read_mask_png(*sample.mask_path);
}

GroundTruthSet scale_boxes(const GroundTruthSet& boxes, double scale_x, double scale_y) {
  if (!(scale_x > 0.0) || !(scale_y > 0.0)) throw ValidationError("box scale factors must be positive");
  GroundTruthSet out{{}, boxes.class_count};
  out.boxes.reserve(boxes.boxes.size());
  for (const auto& b : boxes.boxes) {
    out.boxes.push_back({{b.box.x * scale_x, b.box.y * scale_y, b.box.w * scale_x, b.box.h * scale_y}, b.class_id});
  }
  return out;
}

Resized resize_sample(const ImagePlane& image, const GroundTruthSet& boxes, int64_t height, int64_t width) {
  if (image.empty() || image.height() == 0 || image.width() == 0) {
    throw ValidationError("cannot resize a zero-sized image");
  }
  if (height <= 0 || width <= 0) throw ValidationError("target size must be positive");
  Resized r;
  r.scale_x = static_cast<double>(width) / static_cast<double>(image.width());
  r.scale_y = static_cast<double>(height) / static_cast<double>(image.height());
  r.image = (height == image.height() && width == image.width()) ? image : resize_bilinear(image, height, width);
  r.boxes = scale_boxes(boxes, r.scale_x, r.scale_y);
  return r;
}

Resized resize_for_ppu(const ImagePlane& image, const GroundTruthSet& boxes, int64_t size) {
  return resize_sample(image, boxes, size, size);
}

Resized resize_for_dtu(const ImagePlane& image, const GroundTruthSet& boxes, int64_t height, int64_t width) {
  return resize_sample(image, boxes, height, width);
}

torch::Tensor resize_mask(const torch::Tensor& mask, int64_t height, int64_t width) {
  if (mask.dim() != 2) throw DimensionError("mask must be [H,W]");
  auto f = mask.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
  namespace F = torch::nn::functional;
  auto r = F::interpolate(f, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{height, width})
                                 .mode(torch::kNearest));
  return r.squeeze(0).squeeze(0).round().to(torch::kInt64);
}

json SplitManifest::to_json() const {
  return {{"train", train}, {"val", val}, {"seed", seed}, {"ratio", {train_parts, val_parts}}};
}

SplitManifest SplitManifest::from_json(const json& j) {
  SplitManifest m;
  try {
    m.train = j.at("train").get<std::vector<int64_t>>();
    m.val = j.at("val").get<std::vector<int64_t>>();
    m.seed = j.at("seed").get<uint64_t>();
    const auto ratio = j.at("ratio").get<std::vector<int>>();
    if (ratio.size() != 2) throw ParseError("split ratio must have two parts");
    m.train_parts = ratio[0];
    m.val_parts = ratio[1];
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("split manifest: {}", e.what()));
  }
  return m;
}

SplitManifest split(const std::vector<Sample>& samples, uint64_t seed, int train_parts, int val_parts) {
  if (samples.empty()) throw ValidationError("cannot split an empty sample list");
  if (train_parts <= 0 || val_parts <= 0) throw ValidationError("split ratio parts must be positive");
  constexpr size_t kMinStratum = 5;

  std::map<Weather, std::vector<int64_t>> strata;
  std::set<int64_t> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.id).second) throw ValidationError(fmt::format("duplicate sample id {}", s.id));
    strata[s.weather].push_back(s.id);
  }

  SplitManifest m;
  m.seed = seed;
  m.train_parts = train_parts;
  m.val_parts = val_parts;
  const double share = static_cast<double>(val_parts) / static_cast<double>(train_parts + val_parts);

  struct Quota {
    Weather weather;
    size_t n_val;
    double remainder;
  };
  std::vector<Quota> quotas;
  size_t eligible = 0;
  for (auto& [w, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<uint64_t>(w) + 1)));
    rng.shuffle(ids);
    if (ids.size() < kMinStratum) {
      log::warn("weather stratum '{}' has only {} samples; keeping it whole in train", to_string(w), ids.size());
      continue;
    }
    eligible += ids.size();
    const double exact = share * static_cast<double>(ids.size());
    quotas.push_back({w, static_cast<size_t>(std::floor(exact)), exact - std::floor(exact)});
  }
  const auto target = static_cast<size_t>(std::llround(share * static_cast<double>(eligible)));
  size_t assigned = 0;
  for (const auto& q : quotas) assigned += q.n_val;
  std::vector<size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (size_t k = 0; assigned < target && k < order.size(); ++k, ++assigned) ++quotas[order[k]].n_val;

  std::map<Weather, size_t> val_count;
  for (const auto& q : quotas) val_count[q.weather] = q.n_val;
  for (const auto& [w, ids] : strata) {
    const size_t n_val = val_count.count(w) ? val_count[w] : 0;
    m.val.insert(m.val.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
    m.train.insert(m.train.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_val), ids.end());
  }
  return m;
}

void SceneConfig::validate() const {
  if (count <= 0) throw ValidationError("scene count must be positive");
  if (height < 32 || width < 32) throw ValidationError("scenes must be at least 32x32");
  if (min_objects < 0 || max_objects < min_objects) throw ValidationError("bad object count range");
  if (weathers.empty()) throw ValidationError("at least one weather is required");
  if (intensity < 0.0) throw ValidationError("weather intensity must be non-negative");
}

namespace {

// Object parts in box-normalized coordinates. Ellipses with inner > 0 are rings.
struct Part {
  bool ellipse;
  double a, b, c, d;  // rect: x0,y0,x1,y1; ellipse: cx,cy,rx,ry
  double shade;
  double inner = 0.0;
};

struct ClassLook {
  double rel_height;  // of the canvas height at the nearest row
  double aspect;      // w / h
  std::array<double, 3> color;
  std::vector<Part> parts;
};

const std::vector<ClassLook>& looks() {
  static const std::vector<ClassLook> table = {
      // car
      {0.22, 2.0, {0.80, 0.12, 0.10},
       {{false, 0, 0.35, 1, 0.85, 1.0}, {false, 0.2, 0, 0.8, 0.4, 0.6},
        {true, 0.2, 0.85, 0.12, 0.15, 0.15}, {true, 0.8, 0.85, 0.12, 0.15, 0.15}}},
      // pedestrian
      {0.32, 0.4, {0.12, 0.22, 0.85},
       {{true, 0.5, 0.11, 0.3, 0.11, 0.9}, {false, 0, 0.22, 1, 0.62, 1.0},
        {false, 0.1, 0.62, 0.45, 1, 0.7}, {false, 0.55, 0.62, 0.9, 1, 0.7}}},
      // truck
      {0.34, 1.5, {0.30, 0.55, 0.22},
       {{false, 0, 0, 0.65, 0.85, 1.0}, {false, 0.65, 0.3, 1, 0.85, 0.65},
        {true, 0.15, 0.88, 0.1, 0.12, 0.15}, {true, 0.82, 0.88, 0.1, 0.12, 0.15}}},
      // bus
      {0.34, 2.6, {0.95, 0.80, 0.12},
       {{false, 0, 0, 1, 0.88, 1.0}, {false, 0.05, 0.15, 0.95, 0.4, 0.45},
        {true, 0.15, 0.9, 0.07, 0.1, 0.15}, {true, 0.85, 0.9, 0.07, 0.1, 0.15}}},
      // rider
      {0.30, 0.6, {0.80, 0.20, 0.80},
       {{true, 0.5, 0.09, 0.22, 0.09, 0.9}, {false, 0.2, 0.18, 0.8, 0.6, 1.0},
        {true, 0.5, 0.8, 0.5, 0.2, 0.45}}},
      // bicycle
      {0.20, 1.6, {0.12, 0.80, 0.80},
       {{true, 0.22, 0.7, 0.22, 0.3, 1.0, 0.6}, {true, 0.78, 0.7, 0.22, 0.3, 1.0, 0.6},
        {false, 0.22, 0.35, 0.78, 0.47, 0.8}, {false, 0.45, 0, 0.57, 0.4, 0.8}}},
      // motorcycle
      {0.22, 1.3, {0.95, 0.50, 0.10},
       {{true, 0.2, 0.75, 0.2, 0.25, 0.3}, {true, 0.8, 0.75, 0.2, 0.25, 0.3},
        {false, 0.1, 0.3, 0.9, 0.68, 1.0}, {false, 0.55, 0, 0.72, 0.32, 0.8}}},
  };
  return table;
}

bool inside(const Part& p, double u, double v) {
  if (!p.ellipse) return u >= p.a && u < p.c && v >= p.b && v < p.d;
  const double du = (u - p.a) / p.c, dv = (v - p.b) / p.d;
  const double r = du * du + dv * dv;
  return r <= 1.0 && r >= p.inner * p.inner;
}

}  // namespace

Scene render_scene(int64_t height, int64_t width, int objects, uint64_t seed) {
  if (height < 32 || width < 32) throw ValidationError("scenes must be at least 32x32");
  Rng rng(seed);
  const double horizon = height * rng.uniform(0.38, 0.5);
  auto img = torch::empty({3, height, width}, torch::kFloat32);
  auto acc = img.accessor<float, 3>();
  const std::array<double, 3> sky = {rng.uniform(0.55, 0.7), rng.uniform(0.65, 0.8), rng.uniform(0.8, 0.95)};
  const double road = rng.uniform(0.3, 0.45);
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      const double grain = 0.04 * (rng.uniform() - 0.5);
      for (int c = 0; c < 3; ++c) {
        double v;
        if (y < horizon) {
          v = sky[static_cast<size_t>(c)] * (0.85 + 0.15 * y / horizon);
        } else {
          // Dashed lane stripe down the middle.
          const bool stripe = std::abs(x - width / 2.0) < 1.0 + 2.0 * (y - horizon) / height &&
                              static_cast<int64_t>(y / 6) % 2 == 0;
          v = stripe ? 0.85 : road + 0.05 * (y - horizon) / height;
        }
        acc[c][y][x] = static_cast<float>(std::clamp(v + grain, 0.0, 1.0));
      }
    }
  }
  auto mask = torch::zeros({height, width}, torch::kInt64);
  auto macc = mask.accessor<int64_t, 2>();

  struct Placed {
    int cls;
    int64_t left, top, w, h;
  };
  std::vector<Placed> placed;
  for (int attempt = 0; static_cast<int>(placed.size()) < objects && attempt < objects * 20; ++attempt) {
    const int cls = static_cast<int>(rng.below(kClassCount));
    const auto& look = looks()[static_cast<size_t>(cls)];
    const double bottom = rng.uniform(horizon + 0.15 * (height - horizon), height - 1.0);
    const double depth = (bottom - horizon) / (height - horizon);
    const double hpx = std::max(8.0, look.rel_height * height * (0.35 + 0.65 * depth) * rng.uniform(0.9, 1.1));
    const double wpx = std::max(8.0, hpx * look.aspect);
    if (wpx >= width - 2 || hpx >= bottom) continue;
    const auto w = static_cast<int64_t>(std::lround(wpx)), h = static_cast<int64_t>(std::lround(hpx));
    const auto left = static_cast<int64_t>(rng.below(static_cast<uint64_t>(width - w)));
    const auto top = std::max<int64_t>(0, static_cast<int64_t>(std::lround(bottom)) - h);
    const Box cand = Box::from_top_left(left, top, w, h);
    bool clash = false;
    for (const auto& p : placed) {
      if (metrics::iou(cand, Box::from_top_left(p.left, p.top, p.w, p.h)) > 0.2) clash = true;
    }
    if (!clash) placed.push_back({cls, left, top, w, h});
  }
  // Far objects first so nearer ones occlude them.
  std::stable_sort(placed.begin(), placed.end(),
                   [](const Placed& a, const Placed& b) { return a.top + a.h < b.top + b.h; });

  Scene scene;
  for (const auto& p : placed) {
    const auto& look = looks()[static_cast<size_t>(p.cls)];
    std::array<double, 3> color;
    for (size_t c = 0; c < 3; ++c) color[c] = std::clamp(look.color[c] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    for (int64_t y = p.top; y < p.top + p.h; ++y) {
      for (int64_t x = p.left; x < p.left + p.w; ++x) {
        const double u = (x + 0.5 - p.left) / p.w, v = (y + 0.5 - p.top) / p.h;
        for (const auto& part : look.parts) {
          if (!inside(part, u, v)) continue;
          for (int c = 0; c < 3; ++c) acc[c][y][x] = static_cast<float>(color[static_cast<size_t>(c)] * part.shade);
          macc[y][x] = p.cls + 1;
        }
      }
    }
    scene.boxes.boxes.push_back({Box::from_top_left(p.left, p.top, p.w, p.h), p.cls});
  }
  scene.clean = ImagePlane(img);
  scene.mask = mask;
  return scene;
}

SceneDataset generate_scene_dataset(const fs::path& root, const SceneConfig& cfg) {
  cfg.validate();
  SceneDataset ds{root, {}};
  Rng rng(cfg.seed);
  std::vector<weathersim::PairRecord> pairs;
  for (int64_t i = 0; i < cfg.count; ++i) {
    const uint64_t scene_seed = rng.next();
    const int objects = static_cast<int>(rng.between(cfg.min_objects, cfg.max_objects));
    const Weather weather = cfg.weathers[static_cast<size_t>(i) % cfg.weathers.size()];
    auto scene = render_scene(cfg.height, cfg.width, objects, scene_seed);
    weathersim::WeatherRecipe recipe{kind_of(weather), cfg.intensity, scene_seed};
    recipe = recipe.normalized();
    auto degraded = weathersim::degrade(scene.clean, recipe);

    const auto stem = fmt::format("{:06d}", i + 1);
    const auto image_rel = fs::path("images") / std::string(to_string(weather)) / (stem + ".png");
    const auto clean_rel = fs::path("clean") / (stem + ".png");
    const auto mask_rel = fs::path("masks") / (stem + ".png");
    write_png(root / image_rel, degraded);
    write_png(root / clean_rel, scene.clean);
    write_mask_png(root / mask_rel, scene.mask);

    Sample s;
    s.id = i + 1;
    s.image_path = root / image_rel;
    s.weather = weather;
    s.boxes = scene.boxes;
    s.clean_path = root / clean_rel;
    s.mask_path = root / mask_rel;
    s.height = cfg.height;
    s.width = cfg.width;
    ds.samples.push_back(std::move(s));
    pairs.push_back({clean_rel.generic_string(), image_rel.generic_string(), recipe.kind, recipe.intensity,
                     scene_seed});
  }
  write_annotations(root / "annotations.json", ds.samples);
  weathersim::write_manifest(root / weathersim::kManifestName, pairs);
  return ds;
}

}  // namespace semod::data
