#pragma once

// Building blocks shared by the semantic provider, the restoration unit and
// the detector.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace semod::nn {

enum class Act { kNone, kRelu, kSilu };

// "2x3x4" style shape text for messages.
std::string shape_string(const torch::Tensor& t);

torch::Tensor activate(const torch::Tensor& x, Act act);

// Conv -> BatchNorm -> activation, "same" padding.
struct ConvBnActImpl : torch::nn::Module {
  ConvBnActImpl(int64_t in, int64_t out, int64_t kernel = 3, int64_t stride = 1, Act act = Act::kSilu);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
  Act act;
};
TORCH_MODULE(ConvBnAct);

// Two 3x3 ConvBnAct with an optional residual connection.
struct BottleneckImpl : torch::nn::Module {
  BottleneckImpl(int64_t channels, bool shortcut = true, Act act = Act::kSilu);
  torch::Tensor forward(const torch::Tensor& x);

  ConvBnAct cv1{nullptr}, cv2{nullptr};
  bool shortcut;
};
TORCH_MODULE(Bottleneck);

// Cross-stage block: a 1x1 projection split in two halves, a chain of
// bottlenecks on the second half, every intermediate concatenated and merged
// by a 1x1 projection.
struct CspBlockImpl : torch::nn::Module {
  CspBlockImpl(int64_t in, int64_t out, int64_t depth = 1, bool shortcut = true, Act act = Act::kSilu);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t hidden;
  ConvBnAct cv1{nullptr}, cv2{nullptr};
  torch::nn::ModuleList blocks;
};
TORCH_MODULE(CspBlock);

void freeze(torch::nn::Module& module);
bool is_frozen(const torch::nn::Module& module);

// FNV-1a over every parameter and buffer, in registration order.
uint64_t parameter_hash(const torch::nn::Module& module);

// torch::save/torch::load plus a JSON sidecar at `<path>.json`.
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);
void save_checkpoint(const std::shared_ptr<torch::nn::Module>& module, const std::filesystem::path& path,
                     const nlohmann::json& sidecar);
nlohmann::json read_sidecar(const std::filesystem::path& checkpoint);
void load_parameters(const std::shared_ptr<torch::nn::Module>& module, const std::filesystem::path& path);

// Width list from JSON, e.g. [32,64,128,256,512].
std::vector<int64_t> widths_from_json(const nlohmann::json& j, size_t expected, const std::string& what);

}  // namespace semod::nn
