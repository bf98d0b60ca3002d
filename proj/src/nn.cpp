#include "semod/nn.hpp"

#include <fstream>

#include <fmt/format.h>

#include "semod/errors.hpp"

namespace semod::nn {

namespace fs = std::filesystem;

std::string shape_string(const torch::Tensor& t) {
  std::string out;
  for (int64_t d = 0; d < t.dim(); ++d) out += (d ? "x" : "") + std::to_string(t.size(d));
  return out;
}

torch::Tensor activate(const torch::Tensor& x, Act act) {
  switch (act) {
    case Act::kRelu: return torch::relu(x);
    case Act::kSilu: return torch::silu(x);
    case Act::kNone: return x;
  }
  return x;
}

ConvBnActImpl::ConvBnActImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, Act act_) : act(act_) {
  conv = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false)));
  bn = register_module("bn", torch::nn::BatchNorm2d(torch::nn::BatchNorm2dOptions(out).momentum(0.03).eps(1e-3)));
}

torch::Tensor ConvBnActImpl::forward(const torch::Tensor& x) { return activate(bn->forward(conv->forward(x)), act); }

BottleneckImpl::BottleneckImpl(int64_t channels, bool shortcut_, Act act) : shortcut(shortcut_) {
  cv1 = register_module("cv1", ConvBnAct(channels, channels, 3, 1, act));
  cv2 = register_module("cv2", ConvBnAct(channels, channels, 3, 1, act));
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto y = cv2->forward(cv1->forward(x));
  return shortcut ? x + y : y;
}

CspBlockImpl::CspBlockImpl(int64_t in, int64_t out, int64_t depth, bool shortcut, Act act) {
  hidden = std::max<int64_t>(1, out / 2);
  cv1 = register_module("cv1", ConvBnAct(in, 2 * hidden, 1, 1, act));
  for (int64_t i = 0; i < depth; ++i) blocks->push_back(Bottleneck(hidden, shortcut, act));
  register_module("blocks", blocks);
  cv2 = register_module("cv2", ConvBnAct((2 + depth) * hidden, out, 1, 1, act));
}

torch::Tensor CspBlockImpl::forward(const torch::Tensor& x) {
  auto halves = cv1->forward(x).chunk(2, 1);
  std::vector<torch::Tensor> parts = {halves[0], halves[1]};
  for (const auto& b : *blocks) parts.push_back(b->as<Bottleneck>()->forward(parts.back()));
  return cv2->forward(torch::cat(parts, 1));
}

void freeze(torch::nn::Module& module) {
  for (auto& p : module.parameters()) p.set_requires_grad(false);
  module.eval();
}

bool is_frozen(const torch::nn::Module& module) {
  for (const auto& p : module.parameters()) {
    if (p.requires_grad()) return false;
  }
  return !module.is_training();
}

uint64_t parameter_hash(const torch::nn::Module& module) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const torch::Tensor& t) {
    auto c = t.detach().cpu().contiguous();
    const auto* bytes = static_cast<const uint8_t*>(c.data_ptr());
    const auto n = static_cast<size_t>(c.numel()) * c.element_size();
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : module.parameters()) mix(p);
  for (const auto& b : module.buffers()) mix(b);
  return h;
}

fs::path sidecar_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".json"); }

void save_checkpoint(const std::shared_ptr<torch::nn::Module>& module, const fs::path& path,
                     const nlohmann::json& sidecar) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  module->save(archive);
  archive.save_to(path.string());
  std::ofstream out(sidecar_path(path));
  if (!out) throw RuntimeFailure(fmt::format("cannot write sidecar for '{}'", path.string()));
  out << sidecar.dump(2) << '\n';
}

nlohmann::json read_sidecar(const fs::path& checkpoint) {
  const auto side = sidecar_path(checkpoint);
  if (!fs::exists(checkpoint) || !fs::exists(side)) {
    throw ConfigurationError(fmt::format("checkpoint '{}' (or its .json sidecar) not found", checkpoint.string()));
  }
  std::ifstream in(side);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("{}: byte {}: {}", side.string(), e.byte, e.what()));
  }
}

void load_parameters(const std::shared_ptr<torch::nn::Module>& module, const fs::path& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
    module->load(archive);
  } catch (const c10::Error& e) {
    throw ConfigurationError(fmt::format("cannot load checkpoint '{}': {}", path.string(), e.what_without_backtrace()));
  }
}

std::vector<int64_t> widths_from_json(const nlohmann::json& j, size_t expected, const std::string& what) {
  std::vector<int64_t> w;
  try {
    w = j.get<std::vector<int64_t>>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigurationError(what + " must be a list of integers");
  }
  if (w.size() != expected) throw ConfigurationError(fmt::format("{} needs {} entries, got {}", what, expected, w.size()));
  for (auto v : w) {
    if (v <= 0) throw ConfigurationError(what + " entries must be positive");
  }
  return w;
}

}  // namespace semod::nn
