#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "semod/image.hpp"

namespace semod {

// Axis-aligned box in center form, pixel units.
struct Box {
  double x = 0.0;  // center
  double y = 0.0;  // center
  double w = 0.0;
  double h = 0.0;

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return {(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1};
  }
  static Box from_top_left(double left, double top, double w, double h) {
    return {left + w / 2.0, top + h / 2.0, w, h};
  }
  double x1() const { return x - w / 2.0; }
  double y1() const { return y - h / 2.0; }
  double x2() const { return x + w / 2.0; }
  double y2() const { return y + h / 2.0; }
  double area() const { return w * h; }

  bool operator==(const Box&) const = default;
};

}  // namespace semod

namespace semod::metrics {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

// Peak signal-to-noise ratio in dB; identical inputs give +infinity.
double psnr(const ImagePlane& a, const ImagePlane& b, double peak = 1.0);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5) and channels,
// with C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2.
double ssim(const ImagePlane& a, const ImagePlane& b, double peak = 1.0);

// The normalized 11x11 Gaussian weights, row-major.
std::vector<double> ssim_window();

double iou(const Box& a, const Box& b);

struct ScoredDetection {
  int64_t image_id = 0;
  int class_id = 0;
  Box box;
  double score = 0.0;
};

struct GroundTruthBox {
  int64_t image_id = 0;
  int class_id = 0;
  Box box;
};

struct ApConfig {
  std::vector<double> iou_thresholds = default_thresholds();
  int recall_points = 101;
  int class_count = 7;

  static std::vector<double> default_thresholds();  // 0.50:0.05:0.95
  void validate() const;
};

// Detection-to-ground-truth matching for one IoU threshold. Detections are
// visited in descending score order (ties keep input order); each claims the
// unmatched ground truth of the same image and class with the highest IoU,
// provided that IoU >= threshold. Returns the true-positive flag per
// detection, indexed like the input.
std::vector<bool> match_detections(std::span<const ScoredDetection> dets, std::span<const GroundTruthBox> gts,
                                   double iou_threshold);

// Interpolated AP for one class (callers filter by class). Returns nullopt
// when there is no ground truth; such classes are left out of class means.
std::optional<double> average_precision(std::span<const ScoredDetection> dets, std::span<const GroundTruthBox> gts,
                                        double iou_threshold, const ApConfig& cfg = {});

struct MapSummary {
  double map_50_95 = 0.0;
  double map_50 = 0.0;
  double map_75 = 0.0;
  // Per class, only classes with ground truth: AP averaged over thresholds, AP50.
  std::map<int, std::pair<double, double>> per_class;
  int classes_evaluated = 0;
};

// Averages AP over evaluated classes, then over thresholds.
MapSummary mean_average_precision(std::span<const ScoredDetection> dets, std::span<const GroundTruthBox> gts,
                                  const ApConfig& cfg = {});

struct WeatherMetrics {
  double map_50_95 = 0.0;
  double map_50 = 0.0;
  double map_75 = 0.0;
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::map<int, std::pair<double, double>> per_class;
  int images = 0;
};

struct EvalReport {
  std::map<std::string, WeatherMetrics> per_weather;
  std::vector<std::string> class_names;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  // Throws ValidationError when a value is non-finite or mAP_50 < mAP_50_95.
  void validate() const;
};

struct ImageDetections {
  int64_t image_id = 0;
  std::vector<ScoredDetection> detections;
};

struct ImageGroundTruth {
  int64_t image_id = 0;
  std::string weather;
  std::vector<GroundTruthBox> boxes;
};

// Restored/reference image pair for PSNR and SSIM.
struct ImagePair {
  int64_t image_id = 0;
  ImagePlane restored;
  ImagePlane reference;
};

// Groups by weather tag and fills an EvalReport. Every ground-truth image id
// must have exactly one detections entry and vice versa.
EvalReport evaluate(std::span<const ImageDetections> outputs, std::span<const ImageGroundTruth> ground_truth,
                    std::span<const ImagePair> images = {}, const ApConfig& cfg = {},
                    std::vector<std::string> class_names = {});

// Aligned text table: one row per labeled report, one
// mAP_50-95 / mAP_50 / mAP_75 column group per weather tag (percentages).
std::string render_detection_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

// PSNR/SSIM table: one row per labeled report (mean over weather groups that carry them).
std::string render_restoration_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace semod::metrics
