#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "semod/image.hpp"

namespace semod::semprior {

inline constexpr std::array<int64_t, 5> kStrides = {2, 4, 8, 16, 32};
inline constexpr int kCheckpointVersion = 1;

// Multi-scale semantic feature maps, stride -> [B, k_s, H/stride, W/stride].
struct SemanticPyramid {
  std::map<int64_t, torch::Tensor> maps;

  // Checks the stride set, shared channel count and the spatial law against
  // an input of `height` x `width`.
  void validate(int64_t height, int64_t width) const;
  int64_t channels() const;
  const torch::Tensor& at(int64_t stride) const;
  bool has(int64_t stride) const { return maps.count(stride) != 0; }
  bool equal(const SemanticPyramid& other) const;
};

struct SemanticProviderSpec {
  std::string provider_id = "toy";
  int num_classes = 8;
  int channel_count = 32;  // k_s
  std::optional<std::filesystem::path> checkpoint_path;

  void validate() const;
};

class SemanticProvider {
 public:
  virtual ~SemanticProvider() = default;

  // `batch` is [B,3,H,W] with H and W divisible by 32. Runs without gradient.
  SemanticPyramid extract(const torch::Tensor& batch);
  const SemanticProviderSpec& spec() const { return spec_; }
  // The trainable part, or nullptr for parameter-free providers.
  virtual std::shared_ptr<torch::nn::Module> module() { return nullptr; }
  void freeze();
  void to(torch::Device device);

 protected:
  explicit SemanticProvider(SemanticProviderSpec spec) : spec_(std::move(spec)) {}
  virtual SemanticPyramid compute(const torch::Tensor& batch) = 0;

  SemanticProviderSpec spec_;
};

using ProviderFactory = std::function<std::unique_ptr<SemanticProvider>(const SemanticProviderSpec&)>;

void register_provider(const std::string& id, ProviderFactory factory);
std::vector<std::string> registered_providers();
// Builds the provider named by spec.provider_id and loads spec.checkpoint_path
// when set. Unknown ids and unreadable checkpoints are configuration errors.
std::unique_ptr<SemanticProvider> make_provider(const SemanticProviderSpec& spec);

SemanticPyramid extract_semantics(const ImagePlane& image, SemanticProvider& provider);
SemanticPyramid extract_semantics(const ImagePlane& image, const SemanticProviderSpec& spec);

// Five stride-2 stages; a 1x1 lateral projection to k_s channels taps each
// stage, and a light head turns the laterals into per-pixel class logits.
struct ToySegmenterImpl : torch::nn::Module {
  ToySegmenterImpl(int num_classes, int channels, std::vector<int64_t> widths = {16, 32, 64, 96, 128});

  // Lateral outputs keyed by stride.
  std::map<int64_t, torch::Tensor> pyramid(const torch::Tensor& x);
  // [B, num_classes, H, W]
  torch::Tensor logits(const torch::Tensor& x);
  torch::Tensor logits_from(const std::map<int64_t, torch::Tensor>& pyramid, int64_t height, int64_t width);
  void zero_laterals();

  std::vector<int64_t> widths;
  torch::nn::ModuleList stages;
  torch::nn::ModuleList laterals;
  torch::nn::Conv2d classifier{nullptr};
};
TORCH_MODULE(ToySegmenter);

class ToyProvider : public SemanticProvider {
 public:
  explicit ToyProvider(const SemanticProviderSpec& spec);
  std::shared_ptr<torch::nn::Module> module() override { return net_.ptr(); }
  ToySegmenter& net() { return net_; }

 protected:
  SemanticPyramid compute(const torch::Tensor& batch) override;

 private:
  ToySegmenter net_;
};

// Parameter-free: average-pooled color at each stride through a fixed
// projection and tanh. Exists so providers can be swapped in tests.
class PooledColorProvider : public SemanticProvider {
 public:
  explicit PooledColorProvider(const SemanticProviderSpec& spec);

 protected:
  SemanticPyramid compute(const torch::Tensor& batch) override;

 private:
  torch::Tensor projection_;  // [k_s, 3]
};

struct SegmentationExample {
  ImagePlane image;
  torch::Tensor mask;  // [H,W] int64 class ids
};

struct ToyTrainConfig {
  int64_t steps = 200;
  double lr = 1e-3;
  int64_t batch = 4;
  uint64_t seed = 0;
};

struct ToyTrainResult {
  std::vector<double> losses;  // per step
};

// Adam on per-pixel cross-entropy. Images must already share one size
// divisible by 32.
ToyTrainResult train_toy_segmenter(ToyProvider& provider, const std::vector<SegmentationExample>& examples,
                                   const ToyTrainConfig& cfg);

void save_provider(SemanticProvider& provider, const std::filesystem::path& path);

}  // namespace semod::semprior
