#include "semod/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace semod::metrics {

using nlohmann::json;

namespace {

std::vector<double> contiguous_values(const ImagePlane& img) {
  auto t = img.tensor().to(torch::kFloat64).contiguous();
  const double* p = t.data_ptr<double>();
  return {p, p + t.numel()};
}

void require_same_shape(const ImagePlane& a, const ImagePlane& b, const char* what) {
  if (a.empty() || b.empty()) throw ValidationError(fmt::format("{}: empty image", what));
  if (!a.same_shape(b)) {
    throw DimensionError(fmt::format("{}: shapes differ ({}x{}x{} vs {}x{}x{})", what, a.channels(), a.height(),
                                     a.width(), b.channels(), b.height(), b.width()));
  }
}

// Valid-region separable filter of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int64_t h, int64_t w,
                                 const std::vector<double>& taps) {
  const int64_t k = static_cast<int64_t>(taps.size());
  const int64_t oh = h - k + 1;
  const int64_t ow = w - k + 1;
  std::vector<double> tmp(static_cast<size_t>(h * ow));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int64_t i = 0; i < k; ++i) s += taps[static_cast<size_t>(i)] * plane[static_cast<size_t>(y * w + x + i)];
      tmp[static_cast<size_t>(y * ow + x)] = s;
    }
  }
  std::vector<double> out(static_cast<size_t>(oh * ow));
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int64_t i = 0; i < k; ++i) s += taps[static_cast<size_t>(i)] * tmp[static_cast<size_t>((y + i) * ow + x)];
      out[static_cast<size_t>(y * ow + x)] = s;
    }
  }
  return out;
}

std::vector<double> gaussian_taps() {
  std::vector<double> taps(kSsimWindow);
  const int half = kSsimWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - half;
    taps[static_cast<size_t>(i)] = std::exp(-(d * d) / (2.0 * kSsimSigma * kSsimSigma));
    sum += taps[static_cast<size_t>(i)];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// Descending score, ties in input order.
std::vector<size_t> score_order(std::span<const ScoredDetection> dets) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

int weather_rank(const std::string& tag) {
  static const std::vector<std::string> known = {"foggy", "rainy", "snowy", "sunny"};
  auto it = std::find(known.begin(), known.end(), tag);
  return it == known.end() ? static_cast<int>(known.size()) : static_cast<int>(it - known.begin());
}

std::vector<std::string> ordered_weathers(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::set<std::string> tags;
  for (const auto& [label, report] : rows) {
    for (const auto& [tag, m] : report.per_weather) tags.insert(tag);
  }
  std::vector<std::string> out(tags.begin(), tags.end());
  std::stable_sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
    return weather_rank(a) < weather_rank(b);
  });
  return out;
}

}  // namespace

double psnr(const ImagePlane& a, const ImagePlane& b, double peak) {
  require_same_shape(a, b, "psnr");
  if (!(peak > 0.0)) throw ValidationError("psnr peak must be positive");
  const auto va = contiguous_values(a);
  const auto vb = contiguous_values(b);
  double sum = 0.0;
  for (size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(va.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / mse);
}

std::vector<double> ssim_window() {
  const auto taps = gaussian_taps();
  std::vector<double> w(static_cast<size_t>(kSsimWindow * kSsimWindow));
  for (int i = 0; i < kSsimWindow; ++i) {
    for (int j = 0; j < kSsimWindow; ++j) {
      w[static_cast<size_t>(i * kSsimWindow + j)] = taps[static_cast<size_t>(i)] * taps[static_cast<size_t>(j)];
    }
  }
  return w;
}

double ssim(const ImagePlane& a, const ImagePlane& b, double peak) {
  require_same_shape(a, b, "ssim");
  const int64_t h = a.height();
  const int64_t w = a.width();
  if (h < kSsimWindow || w < kSsimWindow) {
    throw ValidationError(fmt::format("ssim needs images of at least {}x{}, got {}x{}", kSsimWindow, kSsimWindow, h, w));
  }
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const auto taps = gaussian_taps();
  const auto va = contiguous_values(a);
  const auto vb = contiguous_values(b);
  const size_t plane = static_cast<size_t>(h * w);

  double total = 0.0;
  size_t count = 0;
  for (int64_t c = 0; c < a.channels(); ++c) {
    std::vector<double> pa(va.begin() + static_cast<std::ptrdiff_t>(c * plane),
                           va.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane));
    std::vector<double> pb(vb.begin() + static_cast<std::ptrdiff_t>(c * plane),
                           vb.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane));
    std::vector<double> aa(plane), bb(plane), ab(plane);
    for (size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, h, w, taps);
    const auto mu_b = filter_valid(pb, h, w, taps);
    const auto e_aa = filter_valid(aa, h, w, taps);
    const auto e_bb = filter_valid(bb, h, w, taps);
    const auto e_ab = filter_valid(ab, h, w, taps);
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

std::vector<double> ApConfig::default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

void ApConfig::validate() const {
  if (iou_thresholds.empty()) throw ValidationError("ApConfig needs at least one IoU threshold");
  for (size_t i = 0; i < iou_thresholds.size(); ++i) {
    const double t = iou_thresholds[i];
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError(fmt::format("IoU threshold {} outside [0,1]", t));
    if (i > 0 && !(t > iou_thresholds[i - 1])) throw ValidationError("IoU thresholds must be strictly increasing");
  }
  if (recall_points < 2) throw ValidationError("recall_points must be >= 2");
  if (class_count < 1) throw ValidationError("class_count must be >= 1");
}

std::vector<bool> match_detections(std::span<const ScoredDetection> dets, std::span<const GroundTruthBox> gts,
                                   double iou_threshold) {
  std::vector<bool> tp(dets.size(), false);
  std::vector<bool> taken(gts.size(), false);
  for (size_t d : score_order(dets)) {
    const auto& det = dets[d];
    double best = -1.0;
    size_t best_gt = gts.size();
    for (size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].image_id != det.image_id || gts[g].class_id != det.class_id) continue;
      const double v = iou(det.box, gts[g].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      taken[best_gt] = true;
      tp[d] = true;
    }
  }
  return tp;
}

std::optional<double> average_precision(std::span<const ScoredDetection> dets, std::span<const GroundTruthBox> gts,
                                        double iou_threshold, const ApConfig& cfg) {
  if (gts.empty()) return std::nullopt;
  const auto tp = match_detections(dets, gts, iou_threshold);
  const auto order = score_order(dets);
  const size_t n = order.size();
  std::vector<double> precision(n), recall(n);
  double tps = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (tp[order[k]]) tps += 1.0;
    precision[k] = tps / static_cast<double>(k + 1);
    recall[k] = tps / static_cast<double>(gts.size());
  }
  // Precision envelope: monotone non-increasing from the right.
  for (size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  for (int r = 0; r < cfg.recall_points; ++r) {
    const double level = static_cast<double>(r) / static_cast<double>(cfg.recall_points - 1);
    auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<size_t>(it - recall.begin())];
  }
  return sum / static_cast<double>(cfg.recall_points);
}

MapSummary mean_average_precision(std::span<const ScoredDetection> dets, std::span<const GroundTruthBox> gts,
                                  const ApConfig& cfg) {
  cfg.validate();
  MapSummary summary;
  const auto& thresholds = cfg.iou_thresholds;
  std::vector<double> per_threshold(thresholds.size(), 0.0);
  for (int c = 0; c < cfg.class_count; ++c) {
    std::vector<ScoredDetection> cd;
    std::vector<GroundTruthBox> cg;
    for (const auto& d : dets) {
      if (d.class_id == c) cd.push_back(d);
    }
    for (const auto& g : gts) {
      if (g.class_id == c) cg.push_back(g);
    }
    if (cg.empty()) continue;
    ++summary.classes_evaluated;
    double class_mean = 0.0;
    double class_ap50 = 0.0;
    for (size_t t = 0; t < thresholds.size(); ++t) {
      const double ap = *average_precision(cd, cg, thresholds[t], cfg);
      per_threshold[t] += ap;
      class_mean += ap;
      if (std::abs(thresholds[t] - 0.5) < 1e-9) class_ap50 = ap;
    }
    summary.per_class[c] = {class_mean / static_cast<double>(thresholds.size()), class_ap50};
  }
  if (summary.classes_evaluated == 0) return summary;
  const double k = summary.classes_evaluated;
  double overall = 0.0;
  for (size_t t = 0; t < thresholds.size(); ++t) {
    const double m = per_threshold[t] / k;
    overall += m;
    if (std::abs(thresholds[t] - 0.5) < 1e-9) summary.map_50 = m;
    if (std::abs(thresholds[t] - 0.75) < 1e-9) summary.map_75 = m;
  }
  summary.map_50_95 = overall / static_cast<double>(thresholds.size());
  return summary;
}

json EvalReport::to_json() const {
  json weathers = json::object();
  for (const auto& [tag, m] : per_weather) {
    json per_class = json::object();
    for (const auto& [cls, ap] : m.per_class) {
      const std::string name =
          static_cast<size_t>(cls) < class_names.size() ? class_names[static_cast<size_t>(cls)] : std::to_string(cls);
      per_class[name] = {{"class_id", cls}, {"ap_50_95", ap.first}, {"ap_50", ap.second}};
    }
    json row = {{"mAP_50_95", m.map_50_95}, {"mAP_50", m.map_50}, {"mAP_75", m.map_75},
                {"images", m.images},       {"per_class", per_class}};
    row["PSNR"] = m.psnr ? json(*m.psnr) : json(nullptr);
    row["SSIM"] = m.ssim ? json(*m.ssim) : json(nullptr);
    weathers[tag] = row;
  }
  return {{"per_weather", weathers}, {"class_names", class_names}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  try {
    r.class_names = j.value("class_names", std::vector<std::string>{});
    for (const auto& [tag, row] : j.at("per_weather").items()) {
      WeatherMetrics m;
      m.map_50_95 = row.at("mAP_50_95").get<double>();
      m.map_50 = row.at("mAP_50").get<double>();
      m.map_75 = row.at("mAP_75").get<double>();
      m.images = row.value("images", 0);
      if (row.contains("PSNR") && !row["PSNR"].is_null()) m.psnr = row["PSNR"].get<double>();
      if (row.contains("SSIM") && !row["SSIM"].is_null()) m.ssim = row["SSIM"].get<double>();
      if (row.contains("per_class")) {
        for (const auto& [name, ap] : row["per_class"].items()) {
          m.per_class[ap.at("class_id").get<int>()] = {ap.at("ap_50_95").get<double>(), ap.at("ap_50").get<double>()};
        }
      }
      r.per_weather[tag] = m;
    }
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("bad eval report: {}", e.what()));
  }
  return r;
}

void EvalReport::validate() const {
  for (const auto& [tag, m] : per_weather) {
    for (double v : {m.map_50_95, m.map_50, m.map_75}) {
      if (!std::isfinite(v)) throw ValidationError(fmt::format("non-finite mAP for '{}'", tag));
    }
    if (m.ssim && !std::isfinite(*m.ssim)) throw ValidationError(fmt::format("non-finite SSIM for '{}'", tag));
    if (m.psnr && std::isnan(*m.psnr)) throw ValidationError(fmt::format("NaN PSNR for '{}'", tag));
    if (m.map_50 + 1e-12 < m.map_50_95) {
      throw ValidationError(fmt::format("mAP_50 < mAP_50_95 for '{}'", tag));
    }
  }
}

EvalReport evaluate(std::span<const ImageDetections> outputs, std::span<const ImageGroundTruth> ground_truth,
                    std::span<const ImagePair> images, const ApConfig& cfg, std::vector<std::string> class_names) {
  cfg.validate();
  std::map<int64_t, const ImageDetections*> by_id;
  for (const auto& o : outputs) {
    if (!by_id.emplace(o.image_id, &o).second) {
      throw ValidationError(fmt::format("duplicate detections for image id {}", o.image_id));
    }
  }
  std::set<int64_t> gt_ids;
  for (const auto& g : ground_truth) {
    if (!gt_ids.insert(g.image_id).second) throw ValidationError(fmt::format("duplicate ground truth id {}", g.image_id));
    if (!by_id.count(g.image_id)) throw ValidationError(fmt::format("no detections for image id {}", g.image_id));
  }
  for (const auto& [id, o] : by_id) {
    if (!gt_ids.count(id)) throw ValidationError(fmt::format("detections for unknown image id {}", id));
  }
  std::map<int64_t, const ImagePair*> pairs;
  for (const auto& p : images) {
    if (!gt_ids.count(p.image_id)) throw ValidationError(fmt::format("image pair for unknown id {}", p.image_id));
    pairs[p.image_id] = &p;
  }

  struct Group {
    std::vector<ScoredDetection> dets;
    std::vector<GroundTruthBox> gts;
    std::vector<double> psnr, ssim;
    int images = 0;
  };
  std::map<std::string, Group> groups;
  for (const auto& g : ground_truth) {
    auto& grp = groups[g.weather];
    ++grp.images;
    for (auto box : g.boxes) {
      box.image_id = g.image_id;
      grp.gts.push_back(box);
    }
    for (auto det : by_id.at(g.image_id)->detections) {
      det.image_id = g.image_id;
      grp.dets.push_back(det);
    }
    if (auto it = pairs.find(g.image_id); it != pairs.end()) {
      grp.psnr.push_back(psnr(it->second->restored, it->second->reference));
      grp.ssim.push_back(ssim(it->second->restored, it->second->reference));
    }
  }

  EvalReport report;
  report.class_names = std::move(class_names);
  for (auto& [tag, grp] : groups) {
    const auto s = mean_average_precision(grp.dets, grp.gts, cfg);
    WeatherMetrics m;
    m.map_50_95 = s.map_50_95;
    m.map_50 = s.map_50;
    m.map_75 = s.map_75;
    m.per_class = s.per_class;
    m.images = grp.images;
    if (!grp.psnr.empty()) {
      m.psnr = std::accumulate(grp.psnr.begin(), grp.psnr.end(), 0.0) / static_cast<double>(grp.psnr.size());
      m.ssim = std::accumulate(grp.ssim.begin(), grp.ssim.end(), 0.0) / static_cast<double>(grp.ssim.size());
    }
    report.per_weather[tag] = m;
  }
  return report;
}

std::string render_detection_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  const auto weathers = ordered_weathers(rows);
  size_t label_w = 7;
  for (const auto& [label, r] : rows) label_w = std::max(label_w, label.size());
  const int cell = 10;
  const int group_w = 3 * cell + 2;

  std::string out = fmt::format("{:<{}} ", "Weather", label_w);
  for (const auto& w : weathers) out += fmt::format("| {:^{}} ", w, group_w);
  out += "\n";
  out += fmt::format("{:<{}} ", "Methods", label_w);
  for (size_t i = 0; i < weathers.size(); ++i) {
    out += fmt::format("| {:>{}} {:>{}} {:>{}} ", "mAP_50-95", cell, "mAP_50", cell, "mAP_75", cell);
  }
  out += "\n" + std::string(label_w + 1 + weathers.size() * static_cast<size_t>(group_w + 3), '-') + "\n";
  for (const auto& [label, r] : rows) {
    out += fmt::format("{:<{}} ", label, label_w);
    for (const auto& w : weathers) {
      auto it = r.per_weather.find(w);
      if (it == r.per_weather.end()) {
        out += fmt::format("| {:>{}} {:>{}} {:>{}} ", "-", cell, "-", cell, "-", cell);
      } else {
        out += fmt::format("| {:>{}.2f} {:>{}.2f} {:>{}.2f} ", 100.0 * it->second.map_50_95, cell,
                           100.0 * it->second.map_50, cell, 100.0 * it->second.map_75, cell);
      }
    }
    out += "\n";
  }
  return out;
}

std::string render_restoration_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  size_t label_w = 7;
  for (const auto& [label, r] : rows) label_w = std::max(label_w, label.size());
  std::string out = fmt::format("{:<{}}  {:>8}  {:>8}\n", "Methods", label_w, "PSNR", "SSIM");
  out += std::string(label_w + 20, '-') + "\n";
  for (const auto& [label, r] : rows) {
    double p = 0.0, s = 0.0;
    int n = 0;
    for (const auto& [tag, m] : r.per_weather) {
      if (!m.psnr) continue;
      p += *m.psnr;
      s += *m.ssim;
      ++n;
    }
    if (n == 0) {
      out += fmt::format("{:<{}}  {:>8}  {:>8}\n", label, label_w, "-", "-");
    } else {
      out += fmt::format("{:<{}}  {:>8.2f}  {:>8.3f}\n", label, label_w, p / n, s / n);
    }
  }
  return out;
}

}  // namespace semod::metrics
