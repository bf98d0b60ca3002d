#include "semod/ppu.hpp"

#include <cmath>

#include <fmt/format.h>

#include "semod/errors.hpp"
#include "semod/nn.hpp"

namespace semod::ppu {

namespace F = torch::nn::functional;

void CharbonnierConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigurationError("Charbonnier epsilon must be positive");
}

torch::Tensor charbonnier_loss(const torch::Tensor& pred, const torch::Tensor& target, const CharbonnierConfig& cfg) {
  cfg.validate();
  if (pred.sizes() != target.sizes()) {
    throw DimensionError(fmt::format("Charbonnier loss shapes differ: {} vs {}", nn::shape_string(pred),
                                     nn::shape_string(target)));
  }
  const double eps = cfg.epsilon;
  auto d = pred - target;
  return (torch::sqrt(d * d + eps * eps) - eps).mean();
}

double charbonnier_loss(const ImagePlane& pred, const ImagePlane& target, const CharbonnierConfig& cfg) {
  return charbonnier_loss(pred.tensor().to(torch::kFloat64), target.tensor().to(torch::kFloat64), cfg).item<double>();
}

torch::Tensor charbonnier_grad(const torch::Tensor& pred, const torch::Tensor& target, const CharbonnierConfig& cfg) {
  cfg.validate();
  if (pred.sizes() != target.sizes()) throw DimensionError("Charbonnier gradient shapes differ");
  auto d = pred - target;
  return d / torch::sqrt(d * d + cfg.epsilon * cfg.epsilon) / static_cast<double>(pred.numel());
}

torch::Tensor channel_gates(const torch::Tensor& x, const torch::Tensor& squeeze_w, const torch::Tensor& excite_w) {
  if (x.dim() != 4) throw DimensionError("channel attention input must be [B,C,H,W]");
  const auto c = x.size(1);
  if (squeeze_w.dim() != 2 || squeeze_w.size(1) != c || excite_w.dim() != 2 || excite_w.size(0) != c ||
      excite_w.size(1) != squeeze_w.size(0)) {
    throw DimensionError(fmt::format("channel attention weights {} / {} do not fit {} channels",
                                     nn::shape_string(squeeze_w), nn::shape_string(excite_w), c));
  }
  auto z = x.mean({2, 3});
  auto s = torch::relu(torch::matmul(z, squeeze_w.t()));
  return torch::sigmoid(torch::matmul(s, excite_w.t()));
}

torch::Tensor channel_attention(const torch::Tensor& x, const torch::Tensor& squeeze_w,
                                const torch::Tensor& excite_w) {
  auto g = channel_gates(x, squeeze_w, excite_w);
  return x * g.unsqueeze(-1).unsqueeze(-1);
}

void DsamParams::validate(int64_t channels) const {
  auto check = [&](const torch::Tensor& t, std::vector<int64_t> shape, const char* name) {
    if (!t.defined() || t.sizes() != c10::IntArrayRef(shape)) {
      throw DimensionError(fmt::format("DSAM parameter {} has shape {}, expected {} channels", name,
                                       t.defined() ? nn::shape_string(t) : "undefined", channels));
    }
  };
  check(dw1_w, {channels, 1, 3, 3}, "dw1_w");
  check(dw2_w, {channels, 1, 3, 3}, "dw2_w");
  check(pw1_w, {channels, channels, 1, 1}, "pw1_w");
  check(pw2_w, {channels, channels, 1, 1}, "pw2_w");
  for (const auto* b : {&dw1_b, &pw1_b, &dw2_b, &pw2_b}) check(*b, {channels}, "bias");
}

DsamParams DsamParams::zeros(int64_t c, torch::TensorOptions o) {
  return {torch::zeros({c, 1, 3, 3}, o), torch::zeros({c}, o), torch::zeros({c, c, 1, 1}, o), torch::zeros({c}, o),
          torch::zeros({c, 1, 3, 3}, o), torch::zeros({c}, o), torch::zeros({c, c, 1, 1}, o), torch::zeros({c}, o)};
}

namespace {

torch::Tensor separable(const torch::Tensor& x, const torch::Tensor& dw_w, const torch::Tensor& dw_b,
                        const torch::Tensor& pw_w, const torch::Tensor& pw_b) {
  auto h = F::conv2d(x, dw_w, F::Conv2dFuncOptions().bias(dw_b).padding(1).groups(x.size(1)));
  return F::conv2d(h, pw_w, F::Conv2dFuncOptions().bias(pw_b));
}

}  // namespace

torch::Tensor dsam_logits(const torch::Tensor& x, const DsamParams& p) {
  if (x.dim() != 4) throw DimensionError("DSAM input must be [B,C,H,W]");
  p.validate(x.size(1));
  return separable(separable(x, p.dw1_w, p.dw1_b, p.pw1_w, p.pw1_b), p.dw2_w, p.dw2_b, p.pw2_w, p.pw2_b);
}

torch::Tensor dsam(const torch::Tensor& x, const DsamParams& p) { return x * torch::sigmoid(dsam_logits(x, p)); }

ChannelAttentionImpl::ChannelAttentionImpl(int64_t channels, int64_t reduction) {
  if (channels <= 0 || reduction <= 0) throw ConfigurationError("channel attention needs positive sizes");
  const int64_t hidden = std::max<int64_t>(1, channels / reduction);
  // Same scale as a default linear layer.
  squeeze = register_parameter("squeeze", torch::empty({hidden, channels}).uniform_(-1.0, 1.0) / std::sqrt(channels));
  excite = register_parameter("excite", torch::empty({channels, hidden}).uniform_(-1.0, 1.0) / std::sqrt(hidden));
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& x) { return channel_attention(x, squeeze, excite); }
torch::Tensor ChannelAttentionImpl::gates(const torch::Tensor& x) { return channel_gates(x, squeeze, excite); }

DsamImpl::DsamImpl(int64_t c) {
  dw1 = register_module("dw1", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3).padding(1).groups(c)));
  pw1 = register_module("pw1", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 1)));
  dw2 = register_module("dw2", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3).padding(1).groups(c)));
  pw2 = register_module("pw2", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 1)));
}

DsamParams DsamImpl::params() const {
  return {dw1->weight, dw1->bias, pw1->weight, pw1->bias, dw2->weight, dw2->bias, pw2->weight, pw2->bias};
}

torch::Tensor DsamImpl::forward(const torch::Tensor& x) { return dsam(x, params()); }
torch::Tensor DsamImpl::multiplier(const torch::Tensor& x) { return torch::sigmoid(dsam_logits(x, params())); }

void EncoderPyramid::validate(int64_t height, int64_t width, const std::vector<int64_t>& widths) const {
  if (maps.size() != kEncoderStrides.size()) throw DimensionError("encoder pyramid must hold five strides");
  for (size_t i = 0; i < kEncoderStrides.size(); ++i) {
    const int64_t s = kEncoderStrides[i];
    auto it = maps.find(s);
    if (it == maps.end()) throw DimensionError(fmt::format("encoder pyramid lacks stride {}", s));
    const auto& t = it->second;
    if (t.dim() != 4 || t.size(1) != widths[i] || t.size(2) != height / s || t.size(3) != width / s) {
      throw DimensionError(fmt::format("encoder map at stride {} has shape {}", s, nn::shape_string(t)));
    }
  }
}

AedImpl::AedImpl(int64_t in_channels, int64_t out_channels_, int64_t semantic_channels_, int64_t reduction)
    : out_channels(out_channels_), semantic_channels(semantic_channels_) {
  const int64_t cat = 2 * out_channels + semantic_channels;
  up = register_module("up", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  norm = register_module("norm", torch::nn::BatchNorm2d(cat));
  if (semantic_channels > 0) cam = register_module("cam", ChannelAttention(cat, reduction));
  dsam = register_module("dsam", Dsam(cat));
  final = register_module("final", torch::nn::Conv2d(torch::nn::Conv2dOptions(cat, out_channels, 3).padding(1)));
}

torch::Tensor AedImpl::forward(const torch::Tensor& phi_i, const torch::Tensor& phi_half,
                               const std::optional<torch::Tensor>& theta_half) {
  if (phi_i.dim() != 4 || phi_half.dim() != 4 || phi_i.size(2) * 2 != phi_half.size(2) ||
      phi_i.size(3) * 2 != phi_half.size(3) || phi_i.size(0) != phi_half.size(0)) {
    throw DimensionError(fmt::format("decoder stride mismatch: {} cannot be upsampled onto {}",
                                     nn::shape_string(phi_i), nn::shape_string(phi_half)));
  }
  if (phi_half.size(1) != out_channels) throw DimensionError("decoder skip map has the wrong channel count");
  auto upsampled = up->forward(F::interpolate(
      phi_i, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
  std::vector<torch::Tensor> parts = {upsampled, phi_half};
  const bool with_semantics = theta_half.has_value() && semantic_channels > 0;
  if (theta_half.has_value()) {
    const auto& t = *theta_half;
    if (semantic_channels == 0) throw DimensionError("this decoder step takes no semantic map");
    if (t.dim() != 4 || t.size(1) != semantic_channels || t.size(2) != phi_half.size(2) ||
        t.size(3) != phi_half.size(3)) {
      throw DimensionError(fmt::format("semantic map {} does not match decoder target {}", nn::shape_string(t),
                                       nn::shape_string(phi_half)));
    }
    parts.push_back(t.to(phi_half.dtype()));
  } else if (semantic_channels > 0) {
    parts.push_back(torch::zeros({phi_half.size(0), semantic_channels, phi_half.size(2), phi_half.size(3)},
                                 phi_half.options()));
  }
  auto h = norm->forward(torch::cat(parts, 1));
  if (with_semantics) {
    h = cam->forward(h);
    last_path = AttentionPath::kChannel;
  } else {
    h = dsam->forward(h);
    last_path = AttentionPath::kDepthwise;
  }
  return torch::relu(final->forward(h));
}

void AedImpl::zero_final() {
  torch::NoGradGuard no_grad;
  final->weight.zero_();
  final->bias.zero_();
}

void PpuConfig::validate() const {
  if (widths.size() != kEncoderStrides.size()) throw ConfigurationError("PPU needs five encoder widths");
  for (auto w : widths) {
    if (w <= 0) throw ConfigurationError("PPU widths must be positive");
  }
  if (semantic_channels < 0) throw ConfigurationError("semantic channel count must be non-negative");
  if (reduction <= 0) throw ConfigurationError("attention reduction must be positive");
  charbonnier.validate();
}

nlohmann::json PpuConfig::to_json() const {
  return {{"epsilon", charbonnier.epsilon},
          {"width_schedule", widths},
          {"semantic_channels", semantic_channels},
          {"reduction", reduction},
          {"version", kCheckpointVersion}};
}

PpuConfig PpuConfig::from_json(const nlohmann::json& j) {
  PpuConfig c;
  try {
    c.charbonnier.epsilon = j.at("epsilon").get<double>();
    c.widths = nn::widths_from_json(j.at("width_schedule"), kEncoderStrides.size(), "width_schedule");
    c.semantic_channels = j.value("semantic_channels", c.semantic_channels);
    c.reduction = j.value("reduction", c.reduction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(fmt::format("bad PPU sidecar: {}", e.what()));
  }
  c.validate();
  return c;
}

PpuNetImpl::PpuNetImpl(PpuConfig cfg_) : cfg(std::move(cfg_)) {
  cfg.validate();
  const auto& w = cfg.widths;
  for (size_t i = 0; i < w.size(); ++i) {
    const int64_t in = i == 0 ? 3 : w[i - 1];
    const int64_t stride = i == 0 ? 1 : 2;
    encoder->push_back(torch::nn::Sequential(nn::ConvBnAct(in, w[i], 3, stride, nn::Act::kRelu),
                                             nn::ConvBnAct(w[i], w[i], 3, 1, nn::Act::kRelu)));
  }
  register_module("encoder", encoder);
  for (int t = 3; t >= 0; --t) {
    const int64_t target = kEncoderStrides[static_cast<size_t>(t)];
    const int64_t sem = target >= 2 ? cfg.semantic_channels : 0;
    decoders->push_back(Aed(w[static_cast<size_t>(t) + 1], w[static_cast<size_t>(t)], sem, cfg.reduction));
  }
  register_module("decoders", decoders);
  head_attention = register_module("head_attention", Dsam(w[0]));
  head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(w[0], 3, 3).padding(1)));
  zero_head();
}

void PpuNetImpl::zero_head() {
  torch::NoGradGuard no_grad;
  head->weight.zero_();
  head->bias.zero_();
}

EncoderPyramid PpuNetImpl::encode(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw DimensionError("PPU input must be [B,3,H,W]");
  if (x.size(2) % 16 != 0 || x.size(3) % 16 != 0 || x.size(2) == 0 || x.size(3) == 0) {
    throw ValidationError(fmt::format("PPU input {}x{} must be divisible by 16", x.size(2), x.size(3)));
  }
  EncoderPyramid pyr;
  auto h = x;
  for (size_t i = 0; i < kEncoderStrides.size(); ++i) {
    h = encoder[i]->as<torch::nn::Sequential>()->forward(h);
    pyr.maps[kEncoderStrides[i]] = h;
  }
  return pyr;
}

torch::Tensor PpuNetImpl::forward(const torch::Tensor& x, const semprior::SemanticPyramid* semantics) {
  if (semantics) {
    semantics->validate(x.size(2), x.size(3));
    if (cfg.semantic_channels > 0 && semantics->channels() != cfg.semantic_channels) {
      throw DimensionError(fmt::format("semantic maps carry {} channels, PPU expects {}", semantics->channels(),
                                       cfg.semantic_channels));
    }
    if (semantics->at(2).size(0) != x.size(0)) throw DimensionError("semantic batch size differs from the image");
  }
  auto pyr = encode(x);
  last_trace.clear();
  auto current = pyr.maps.at(16);
  for (size_t d = 0; d < decoders->size(); ++d) {
    const int64_t target = kEncoderStrides[3 - d];
    auto aed = decoders[d]->as<Aed>();
    std::optional<torch::Tensor> theta;
    if (semantics && aed->semantic_channels > 0) theta = semantics->at(target);
    current = aed->forward(current, pyr.maps.at(target), theta);
    last_trace.emplace_back(target, aed->last_path);
  }
  auto residual = head->forward(head_attention->forward(current));
  auto base = torch::logit(x.clamp(kLogitClamp, 1.0 - kLogitClamp));
  return torch::sigmoid(base + residual);
}

ImagePlane ppu_forward(PpuNet& net, const ImagePlane& image, const semprior::SemanticPyramid* semantics) {
  if (image.height() % 32 != 0 || image.width() % 32 != 0) {
    throw ValidationError(fmt::format("PPU image {}x{} must be divisible by 32", image.height(), image.width()));
  }
  const auto dtype = net->head->weight.dtype();
  auto out = net->forward(image.tensor().unsqueeze(0).to(dtype), semantics);
  return ImagePlane(out.squeeze(0));
}

void save_ppu(PpuNet& net, const std::filesystem::path& path) {
  nn::save_checkpoint(net.ptr(), path, net->cfg.to_json());
}

PpuNet load_ppu(const std::filesystem::path& path) {
  auto cfg = PpuConfig::from_json(nn::read_sidecar(path));
  PpuNet net(cfg);
  nn::load_parameters(net.ptr(), path);
  return net;
}

}  // namespace semod::ppu
