#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "semod/data.hpp"
#include "semod/image.hpp"
#include "semod/metrics.hpp"
#include "semod/nn.hpp"
#include "semod/semprior.hpp"

namespace semod::dtu {

inline constexpr std::array<int64_t, 3> kDetectionStrides = {8, 16, 32};
inline constexpr int kCheckpointVersion = 1;

// Sum of head-grid cells over the detection strides.
int64_t capacity_for(int64_t height, int64_t width);

struct GridCell {
  int64_t stride = 0;
  int64_t row = 0;
  int64_t col = 0;
  bool operator==(const GridCell&) const = default;
};

// Columns are laid out stride by stride (8, 16, 32), row-major inside a stride.
int64_t column_of(int64_t height, int64_t width, const GridCell& cell);
GridCell cell_of(int64_t height, int64_t width, int64_t column);

// Per image (4+C) x K: rows x, y, w, h (pixels, box center) then per-class
// scores in [0,1]. Batched as [B, 4+C, K].
struct PredictionTensor {
  torch::Tensor values;
  // Pre-sigmoid class scores [B, C, K]; left undefined when the tensor is
  // built directly from scores.
  torch::Tensor class_logits;
  int64_t image_height = 0;
  int64_t image_width = 0;

  int64_t batch() const { return values.size(0); }
  int num_classes() const { return static_cast<int>(values.size(1)) - 4; }
  int64_t capacity() const { return values.size(2); }
  void validate() const;
};

struct DetectionBox {
  Box box;  // center form, pixels
  int class_id = 0;
  double score = 0.0;
  bool operator==(const DetectionBox&) const = default;
};

struct NmsOptions {
  double score_thresh = 0.25;
  double iou_thresh = 0.45;
  int64_t max_detections = 300;
  void validate() const;
};

// Greedy per-class suppression over an already filtered candidate list:
// visits by score (descending, ties by list order) and drops a box whose IoU
// with a kept box of the same class exceeds iou_thresh.
std::vector<DetectionBox> suppress(const std::vector<DetectionBox>& candidates, double iou_thresh);

// Best class per column, score filter, canvas filter, then `suppress`.
std::vector<DetectionBox> nms(const PredictionTensor& pred, int64_t batch_index, const NmsOptions& opts = {});

struct Assignment {
  size_t gt_index = 0;
  int64_t column = 0;
  GridCell cell;
};

// Each box goes to the cell containing its center at the stride closest to
// sqrt(w h) in log scale; when that column is taken, the next-closest stride
// is tried. Boxes with no free column are left out.
std::vector<Assignment> assign_targets(const data::GroundTruthSet& gt, int64_t height, int64_t width);

struct LossWeights {
  double box = 1.0;
  double cls = 1.0;
  double score = 1.0;
};

struct LossComponents {
  torch::Tensor total, box, cls, score;
};

inline constexpr double kBceClamp = 1e-7;

// L_box = mean(1 - IoU) over assigned pairs; L_class = BCE of class scores
// against one-hot targets at assigned columns; L_score = BCE of each column's
// best class score against the assignment indicator, over all columns.
LossComponents detection_loss(const PredictionTensor& pred, const std::vector<data::GroundTruthSet>& gts,
                              const LossWeights& weights = {});

enum class FusionMode { kNone, kRaw, kAdapted };
std::string_view to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view name);

// Two Conv3x3 -> BN -> SiLU blocks mapping k_s channels to `out` channels.
struct DabImpl : torch::nn::Module {
  DabImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t in_channels;
  nn::ConvBnAct block1{nullptr}, block2{nullptr};
};
TORCH_MODULE(Dab);

// Channel concatenation followed by a cross-stage block.
struct FusionImpl : torch::nn::Module {
  FusionImpl(int64_t backbone_channels, int64_t semantic_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& backbone, const torch::Tensor& semantic);
  // Zeroes the input weights that read the semantic channels.
  void zero_semantic_weights();
  // Sets the block to copy its input channels through (activation applied),
  // with the bottleneck branch silenced. Requires out >= in.
  void rig_passthrough();

  int64_t backbone_channels, semantic_channels, out_channels;
  nn::CspBlock block{nullptr};
};
TORCH_MODULE(Fusion);

struct DtuConfig {
  std::vector<int64_t> widths = {32, 64, 128, 256, 512};  // strides 2..32
  int num_classes = data::kClassCount;
  int64_t semantic_channels = 32;
  FusionMode fusion = FusionMode::kAdapted;
  int64_t input_height = data::kDtuHeight;
  int64_t input_width = data::kDtuWidth;

  void validate() const;
  // Width after fusion at a detection stride.
  int64_t fused_width(size_t level) const;
  nlohmann::json to_json() const;
  static DtuConfig from_json(const nlohmann::json& j);
};

struct DtuNetImpl : torch::nn::Module {
  explicit DtuNetImpl(DtuConfig cfg = {});

  // Backbone maps at strides 8, 16, 32.
  std::vector<torch::Tensor> backbone(const torch::Tensor& x);
  PredictionTensor forward(const torch::Tensor& x, const semprior::SemanticPyramid* semantics = nullptr);

  DtuConfig cfg;
  nn::ConvBnAct stem{nullptr};
  torch::nn::ModuleList stages;
  torch::nn::ModuleList dabs;      // per detection stride, kAdapted only
  torch::nn::ModuleList fusions;   // per detection stride, unless kNone
  nn::ConvBnAct lateral{nullptr};  // stride 32
  nn::CspBlock merge16{nullptr}, merge8{nullptr};
  torch::nn::ModuleList heads;
};
TORCH_MODULE(DtuNet);

PredictionTensor dtu_forward(DtuNet& net, const ImagePlane& image, const semprior::SemanticPyramid* semantics);

void save_dtu(DtuNet& net, const std::filesystem::path& path);
DtuNet load_dtu(const std::filesystem::path& path);

// JSON-lines {image_id, class_id, x, y, w, h, score}.
void write_detections(const std::filesystem::path& path,
                      const std::vector<std::pair<int64_t, std::vector<DetectionBox>>>& per_image);
std::vector<std::pair<int64_t, std::vector<DetectionBox>>> read_detections(const std::filesystem::path& path);

std::vector<metrics::ScoredDetection> to_scored(int64_t image_id, const std::vector<DetectionBox>& boxes);

}  // namespace semod::dtu
