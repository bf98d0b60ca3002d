#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "semod/image.hpp"
#include "semod/semprior.hpp"

namespace semod::ppu {

inline constexpr std::array<int64_t, 5> kEncoderStrides = {1, 2, 4, 8, 16};
inline constexpr int kCheckpointVersion = 1;

struct CharbonnierConfig {
  double epsilon = 1e-3;
  void validate() const;
};

// mean(sqrt((pred - target)^2 + eps^2) - eps) over every element.
torch::Tensor charbonnier_loss(const torch::Tensor& pred, const torch::Tensor& target,
                               const CharbonnierConfig& cfg = {});
double charbonnier_loss(const ImagePlane& pred, const ImagePlane& target, const CharbonnierConfig& cfg = {});
// Closed-form d loss / d pred.
torch::Tensor charbonnier_grad(const torch::Tensor& pred, const torch::Tensor& target,
                               const CharbonnierConfig& cfg = {});

// Squeeze-and-excitation gates for x [B,C,H,W]: sigmoid(W_ex relu(W_sq avgpool(x))),
// squeeze_w [C/r, C], excite_w [C, C/r]. Returns [B,C].
torch::Tensor channel_gates(const torch::Tensor& x, const torch::Tensor& squeeze_w, const torch::Tensor& excite_w);
// x scaled per channel by its gate.
torch::Tensor channel_attention(const torch::Tensor& x, const torch::Tensor& squeeze_w,
                                const torch::Tensor& excite_w);

// Two depth-wise separable convolutions (3x3 depth-wise then 1x1 point-wise).
struct DsamParams {
  torch::Tensor dw1_w, dw1_b, pw1_w, pw1_b;
  torch::Tensor dw2_w, dw2_b, pw2_w, pw2_b;

  void validate(int64_t channels) const;
  static DsamParams zeros(int64_t channels, torch::TensorOptions options = {});
};

// X'' from the two separable convolutions.
torch::Tensor dsam_logits(const torch::Tensor& x, const DsamParams& p);
// x * sigmoid(X'').
torch::Tensor dsam(const torch::Tensor& x, const DsamParams& p);

struct ChannelAttentionImpl : torch::nn::Module {
  ChannelAttentionImpl(int64_t channels, int64_t reduction);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor gates(const torch::Tensor& x);

  torch::Tensor squeeze, excite;
};
TORCH_MODULE(ChannelAttention);

struct DsamImpl : torch::nn::Module {
  explicit DsamImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor multiplier(const torch::Tensor& x);  // sigmoid(X'')
  DsamParams params() const;

  torch::nn::Conv2d dw1{nullptr}, pw1{nullptr}, dw2{nullptr}, pw2{nullptr};
};
TORCH_MODULE(Dsam);

enum class AttentionPath { kNone, kChannel, kDepthwise };

// Encoder outputs keyed by stride.
struct EncoderPyramid {
  std::map<int64_t, torch::Tensor> maps;
  void validate(int64_t height, int64_t width, const std::vector<int64_t>& widths) const;
};

// One decoder step: stride i -> i/2.
struct AedImpl : torch::nn::Module {
  // `in_channels` at stride i, `out_channels` at stride i/2; `semantic_channels`
  // is 0 when this step never receives a semantic map.
  AedImpl(int64_t in_channels, int64_t out_channels, int64_t semantic_channels, int64_t reduction);

  torch::Tensor forward(const torch::Tensor& phi_i, const torch::Tensor& phi_half,
                        const std::optional<torch::Tensor>& theta_half = std::nullopt);
  void zero_final();

  int64_t out_channels, semantic_channels;
  torch::nn::Conv2d up{nullptr};
  torch::nn::BatchNorm2d norm{nullptr};
  ChannelAttention cam{nullptr};
  Dsam dsam{nullptr};
  torch::nn::Conv2d final{nullptr};
  AttentionPath last_path = AttentionPath::kNone;
};
TORCH_MODULE(Aed);

struct PpuConfig {
  std::vector<int64_t> widths = {32, 64, 128, 256, 512};  // at strides 1,2,4,8,16
  int64_t semantic_channels = 32;                          // 0 disables semantic guidance
  int64_t reduction = 16;
  CharbonnierConfig charbonnier;

  void validate() const;
  nlohmann::json to_json() const;
  static PpuConfig from_json(const nlohmann::json& j);
};

struct PpuNetImpl : torch::nn::Module {
  explicit PpuNetImpl(PpuConfig cfg = {});

  // x [B,3,H,W], H and W divisible by 16.
  EncoderPyramid encode(const torch::Tensor& x);
  // Enhanced image in [0,1], same shape as x. Semantic maps are used at the
  // decoder target strides 8, 4 and 2 when given.
  torch::Tensor forward(const torch::Tensor& x, const semprior::SemanticPyramid* semantics = nullptr);
  void zero_head();

  PpuConfig cfg;
  torch::nn::ModuleList encoder;
  torch::nn::ModuleList decoders;  // targets 8, 4, 2, 1
  Dsam head_attention{nullptr};
  torch::nn::Conv2d head{nullptr};
  // (target stride, path) for every decoder step of the last forward.
  std::vector<std::pair<int64_t, AttentionPath>> last_trace;
};
TORCH_MODULE(PpuNet);

inline constexpr double kLogitClamp = 1e-6;

ImagePlane ppu_forward(PpuNet& net, const ImagePlane& image, const semprior::SemanticPyramid* semantics = nullptr);

void save_ppu(PpuNet& net, const std::filesystem::path& path);
PpuNet load_ppu(const std::filesystem::path& path);

}  // namespace semod::ppu
