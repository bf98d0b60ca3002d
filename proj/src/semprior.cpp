#include "semod/semprior.hpp"

#include <algorithm>
#include <mutex>

#include <fmt/format.h>

#include "semod/errors.hpp"
#include "semod/nn.hpp"
#include "semod/rng.hpp"

namespace semod::semprior {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

void SemanticPyramid::validate(int64_t height, int64_t width) const {
  if (maps.size() != kStrides.size()) {
    throw DimensionError(fmt::format("semantic pyramid needs {} strides, has {}", kStrides.size(), maps.size()));
  }
  int64_t channels = -1, batch = -1;
  for (int64_t s : kStrides) {
    auto it = maps.find(s);
    if (it == maps.end()) throw DimensionError(fmt::format("semantic pyramid lacks stride {}", s));
    const auto& t = it->second;
    if (t.dim() != 4) throw DimensionError(fmt::format("semantic map at stride {} must be [B,C,H,W]", s));
    if (channels < 0) {
      channels = t.size(1);
      batch = t.size(0);
    }
    if (t.size(1) != channels || t.size(0) != batch) {
      throw DimensionError(fmt::format("semantic map at stride {} has shape {} (expected {} channels, batch {})", s,
                                       nn::shape_string(t), channels, batch));
    }
    if (t.size(2) != height / s || t.size(3) != width / s) {
      throw DimensionError(fmt::format("semantic map at stride {} is {}x{}, expected {}x{}", s, t.size(2), t.size(3),
                                       height / s, width / s));
    }
  }
}

int64_t SemanticPyramid::channels() const {
  if (maps.empty()) throw DimensionError("empty semantic pyramid");
  return maps.begin()->second.size(1);
}

const torch::Tensor& SemanticPyramid::at(int64_t stride) const {
  auto it = maps.find(stride);
  if (it == maps.end()) throw DimensionError(fmt::format("semantic pyramid lacks stride {}", stride));
  return it->second;
}

bool SemanticPyramid::equal(const SemanticPyramid& other) const {
  if (maps.size() != other.maps.size()) return false;
  for (const auto& [s, t] : maps) {
    if (!other.has(s) || !torch::equal(t, other.at(s))) return false;
  }
  return true;
}

void SemanticProviderSpec::validate() const {
  if (num_classes < 2) throw ConfigurationError("semantic provider needs at least 2 classes");
  if (channel_count < 4) throw ConfigurationError("semantic channel count k_s must be at least 4");
  const auto ids = registered_providers();
  if (std::find(ids.begin(), ids.end(), provider_id) == ids.end()) {
    throw ConfigurationError(fmt::format("unknown semantic provider '{}'", provider_id));
  }
}

SemanticPyramid SemanticProvider::extract(const torch::Tensor& batch) {
  if (batch.dim() != 4 || batch.size(1) != 3) throw DimensionError("semantic input must be [B,3,H,W]");
  if (batch.size(2) % 32 != 0 || batch.size(3) % 32 != 0 || batch.size(2) == 0 || batch.size(3) == 0) {
    throw ValidationError(
        fmt::format("semantic input {}x{} must have height and width divisible by 32", batch.size(2), batch.size(3)));
  }
  torch::NoGradGuard no_grad;
  auto m = module();
  const bool was_training = m && m->is_training();
  if (m) m->eval();
  auto pyramid = compute(batch);
  if (m && was_training) m->train();
  pyramid.validate(batch.size(2), batch.size(3));
  return pyramid;
}

void SemanticProvider::freeze() {
  if (auto m = module()) nn::freeze(*m);
}

void SemanticProvider::to(torch::Device device) {
  if (auto m = module()) m->to(device);
}

namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, ProviderFactory>& registry() {
  static std::map<std::string, ProviderFactory> r = {
      {"toy", [](const SemanticProviderSpec& s) { return std::make_unique<ToyProvider>(s); }},
      {"pooled-color", [](const SemanticProviderSpec& s) { return std::make_unique<PooledColorProvider>(s); }},
  };
  return r;
}

}  // namespace

void register_provider(const std::string& id, ProviderFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[id] = std::move(factory);
}

std::vector<std::string> registered_providers() {
  std::lock_guard lock(registry_mutex());
  std::vector<std::string> ids;
  for (const auto& [id, f] : registry()) ids.push_back(id);
  return ids;
}

std::unique_ptr<SemanticProvider> make_provider(const SemanticProviderSpec& spec) {
  spec.validate();
  ProviderFactory factory;
  {
    std::lock_guard lock(registry_mutex());
    factory = registry().at(spec.provider_id);
  }
  auto provider = factory(spec);
  if (spec.checkpoint_path) {
    const auto side = nn::read_sidecar(*spec.checkpoint_path);
    if (side.value("provider_id", std::string()) != spec.provider_id ||
        side.value("num_classes", -1) != spec.num_classes || side.value("k_s", -1) != spec.channel_count) {
      throw ConfigurationError(fmt::format("checkpoint '{}' was saved for a different provider ({})",
                                           spec.checkpoint_path->string(), side.dump()));
    }
    if (auto m = provider->module()) nn::load_parameters(m, *spec.checkpoint_path);
  }
  provider->freeze();
  return provider;
}

SemanticPyramid extract_semantics(const ImagePlane& image, SemanticProvider& provider) {
  return provider.extract(image.batched());
}

SemanticPyramid extract_semantics(const ImagePlane& image, const SemanticProviderSpec& spec) {
  auto provider = make_provider(spec);
  return extract_semantics(image, *provider);
}

ToySegmenterImpl::ToySegmenterImpl(int num_classes, int channels, std::vector<int64_t> widths_)
    : widths(std::move(widths_)) {
  if (widths.size() != kStrides.size()) throw ConfigurationError("toy segmenter needs five stage widths");
  int64_t in = 3;
  for (int64_t w : widths) {
    torch::nn::Sequential stage(nn::ConvBnAct(in, w, 3, 2, nn::Act::kRelu), nn::ConvBnAct(w, w, 3, 1, nn::Act::kRelu));
    stages->push_back(stage);
    laterals->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(w, channels, 1)));
    in = w;
  }
  register_module("stages", stages);
  register_module("laterals", laterals);
  classifier = register_module("classifier", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, num_classes, 1)));
}

std::map<int64_t, torch::Tensor> ToySegmenterImpl::pyramid(const torch::Tensor& x) {
  std::map<int64_t, torch::Tensor> out;
  auto h = x;
  for (size_t i = 0; i < kStrides.size(); ++i) {
    h = stages[i]->as<torch::nn::Sequential>()->forward(h);
    out[kStrides[i]] = laterals[i]->as<torch::nn::Conv2d>()->forward(h);
  }
  return out;
}

torch::Tensor ToySegmenterImpl::logits_from(const std::map<int64_t, torch::Tensor>& pyr, int64_t height,
                                            int64_t width) {
  const auto& base = pyr.at(2);
  auto sum = base;
  for (const auto& [s, t] : pyr) {
    if (s == 2) continue;
    sum = sum + F::interpolate(t, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{base.size(2), base.size(3)})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
  }
  auto low = classifier->forward(torch::relu(sum));
  return F::interpolate(low, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{height, width})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

torch::Tensor ToySegmenterImpl::logits(const torch::Tensor& x) { return logits_from(pyramid(x), x.size(2), x.size(3)); }

void ToySegmenterImpl::zero_laterals() {
  torch::NoGradGuard no_grad;
  for (auto& l : *laterals) {
    auto conv = l->as<torch::nn::Conv2d>();
    conv->weight.zero_();
    conv->bias.zero_();
  }
}

ToyProvider::ToyProvider(const SemanticProviderSpec& spec)
    : SemanticProvider(spec), net_(spec.num_classes, spec.channel_count) {}

SemanticPyramid ToyProvider::compute(const torch::Tensor& batch) {
  const auto dtype = net_->classifier->weight.dtype();
  return {net_->pyramid(batch.to(dtype))};
}

PooledColorProvider::PooledColorProvider(const SemanticProviderSpec& spec) : SemanticProvider(spec) {
  Rng rng(0x5eed);
  projection_ = torch::empty({spec.channel_count, 3}, torch::kFloat32);
  auto acc = projection_.accessor<float, 2>();
  for (int k = 0; k < spec.channel_count; ++k) {
    for (int c = 0; c < 3; ++c) acc[k][c] = static_cast<float>(rng.uniform(-2.0, 2.0));
  }
}

SemanticPyramid PooledColorProvider::compute(const torch::Tensor& batch) {
  SemanticPyramid p;
  auto proj = projection_.to(batch.options());
  for (int64_t s : kStrides) {
    auto pooled = F::avg_pool2d(batch, F::AvgPool2dFuncOptions(s).stride(s));
    p.maps[s] = torch::tanh(torch::einsum("kc,bchw->bkhw", {proj, pooled - 0.5}));
  }
  return p;
}

ToyTrainResult train_toy_segmenter(ToyProvider& provider, const std::vector<SegmentationExample>& examples,
                                   const ToyTrainConfig& cfg) {
  if (examples.empty()) throw ValidationError("toy segmenter training needs at least one example");
  if (cfg.steps < 0 || cfg.batch < 1 || !(cfg.lr >= 0.0)) throw ConfigurationError("bad toy segmenter config");
  const auto h = examples.front().image.height(), w = examples.front().image.width();
  if (h % 32 != 0 || w % 32 != 0) throw ValidationError("toy segmenter images must be divisible by 32");
  for (const auto& e : examples) {
    if (e.image.height() != h || e.image.width() != w || e.mask.size(0) != h || e.mask.size(1) != w) {
      throw DimensionError("toy segmenter examples must share one size");
    }
    if (e.mask.max().item<int64_t>() >= provider.spec().num_classes || e.mask.min().item<int64_t>() < 0) {
      throw ValidationError("mask class id outside the provider's class count");
    }
  }
  auto& net = provider.net();
  for (auto& p : net->parameters()) p.set_requires_grad(true);
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.lr));
  Rng rng(cfg.seed);
  std::vector<size_t> order;
  ToyTrainResult result;
  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<torch::Tensor> xs, ys;
    for (int64_t b = 0; b < std::min<int64_t>(cfg.batch, static_cast<int64_t>(examples.size())); ++b) {
      if (order.empty()) {
        order.resize(examples.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
      }
      const auto& e = examples[order.back()];
      order.pop_back();
      xs.push_back(e.image.tensor().to(torch::kFloat32));
      ys.push_back(e.mask);
    }
    auto x = torch::stack(xs), y = torch::stack(ys);
    auto loss = F::cross_entropy(net->logits(x), y);
    opt.zero_grad();
    loss.backward();
    opt.step();
    result.losses.push_back(loss.item<double>());
  }
  provider.freeze();
  return result;
}

void save_provider(SemanticProvider& provider, const fs::path& path) {
  const auto& spec = provider.spec();
  nlohmann::json side = {{"provider_id", spec.provider_id},
                         {"num_classes", spec.num_classes},
                         {"k_s", spec.channel_count},
                         {"version", kCheckpointVersion}};
  auto m = provider.module();
  if (!m) m = std::make_shared<torch::nn::Module>();
  nn::save_checkpoint(m, path, side);
}

}  // namespace semod::semprior
