#include "semod/dtu.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "semod/errors.hpp"

namespace semod::dtu {

namespace fs = std::filesystem;

namespace {

int64_t grid_cells(int64_t height, int64_t width, int64_t stride) { return (height / stride) * (width / stride); }

void check_canvas(int64_t height, int64_t width) {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw DimensionError(fmt::format("detector canvas {}x{} must be positive and divisible by 32", height, width));
  }
}

torch::Tensor bce(const torch::Tensor& p, const torch::Tensor& target) {
  auto q = p.clamp(kBceClamp, 1.0 - kBceClamp);
  return -(target * q.log() + (1.0 - target) * (1.0 - q).log());
}

}  // namespace

int64_t capacity_for(int64_t height, int64_t width) {
  int64_t k = 0;
  for (auto s : kDetectionStrides) k += grid_cells(height, width, s);
  return k;
}

int64_t column_of(int64_t height, int64_t width, const GridCell& cell) {
  int64_t offset = 0;
  for (auto s : kDetectionStrides) {
    const int64_t gw = width / s;
    if (s == cell.stride) {
      if (cell.row < 0 || cell.row >= height / s || cell.col < 0 || cell.col >= gw) {
        throw ValidationError(fmt::format("cell ({}, {}) outside the stride-{} grid", cell.row, cell.col, s));
      }
      return offset + cell.row * gw + cell.col;
    }
    offset += grid_cells(height, width, s);
  }
  throw ValidationError(fmt::format("{} is not a detection stride", cell.stride));
}

GridCell cell_of(int64_t height, int64_t width, int64_t column) {
  if (column < 0) throw ValidationError("negative column index");
  int64_t offset = 0;
  for (auto s : kDetectionStrides) {
    const int64_t n = grid_cells(height, width, s);
    if (column < offset + n) {
      const int64_t local = column - offset;
      const int64_t gw = width / s;
      return {s, local / gw, local % gw};
    }
    offset += n;
  }
  throw ValidationError(fmt::format("column {} beyond capacity {}", column, offset));
}

void PredictionTensor::validate() const {
  if (!values.defined() || values.dim() != 3 || values.size(1) < 5) {
    throw DimensionError("prediction tensor must be [B, 4+C, K] with C >= 1");
  }
  check_canvas(image_height, image_width);
  if (values.size(2) != capacity_for(image_height, image_width)) {
    throw DimensionError(fmt::format("prediction has {} columns, the {}x{} canvas gives {}", values.size(2),
                                     image_height, image_width, capacity_for(image_height, image_width)));
  }
  if (class_logits.defined() &&
      (class_logits.dim() != 3 || class_logits.size(0) != values.size(0) ||
       class_logits.size(1) != values.size(1) - 4 || class_logits.size(2) != values.size(2))) {
    throw DimensionError("class logits must be [B, C, K]");
  }
}

void NmsOptions::validate() const {
  if (!(score_thresh >= 0.0 && score_thresh <= 1.0)) throw ValidationError("score threshold must be in [0, 1]");
  if (!(iou_thresh >= 0.0 && iou_thresh <= 1.0)) throw ValidationError("IoU threshold must be in [0, 1]");
  if (max_detections <= 0) throw ValidationError("max_detections must be positive");
}

std::vector<DetectionBox> suppress(const std::vector<DetectionBox>& candidates, double iou_thresh) {
  std::vector<size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return candidates[a].score > candidates[b].score; });
  std::vector<DetectionBox> kept;
  for (auto i : order) {
    const auto& c = candidates[i];
    bool drop = false;
    for (const auto& k : kept) {
      if (k.class_id == c.class_id && metrics::iou(k.box, c.box) > iou_thresh) {
        drop = true;
        break;
      }
    }
    if (!drop) kept.push_back(c);
  }
  return kept;
}

std::vector<DetectionBox> nms(const PredictionTensor& pred, int64_t batch_index, const NmsOptions& opts) {
  pred.validate();
  opts.validate();
  if (batch_index < 0 || batch_index >= pred.batch()) throw ValidationError("batch index out of range");
  auto v = pred.values[batch_index].detach().to(torch::kCPU, torch::kFloat64).contiguous();
  auto [best, cls] = v.slice(0, 4).max(0);
  auto va = v.accessor<double, 2>();
  auto ba = best.accessor<double, 1>();
  auto ca = cls.accessor<int64_t, 1>();
  const double H = static_cast<double>(pred.image_height);
  const double W = static_cast<double>(pred.image_width);
  std::vector<DetectionBox> candidates;
  for (int64_t k = 0; k < v.size(1); ++k) {
    if (ba[k] < opts.score_thresh) continue;
    Box b{va[0][k], va[1][k], va[2][k], va[3][k]};
    if (!(b.w > 0.0 && b.h > 0.0)) continue;
    if (!(b.x1() < W && b.x2() > 0.0 && b.y1() < H && b.y2() > 0.0)) continue;
    candidates.push_back({b, static_cast<int>(ca[k]), ba[k]});
  }
  auto kept = suppress(candidates, opts.iou_thresh);
  if (static_cast<int64_t>(kept.size()) > opts.max_detections) kept.resize(static_cast<size_t>(opts.max_detections));
  return kept;
}

std::vector<Assignment> assign_targets(const data::GroundTruthSet& gt, int64_t height, int64_t width) {
  check_canvas(height, width);
  gt.validate();
  std::vector<Assignment> out;
  std::vector<int64_t> taken;
  for (size_t i = 0; i < gt.boxes.size(); ++i) {
    const auto& b = gt.boxes[i].box;
    if (b.x < 0.0 || b.y < 0.0 || b.x > static_cast<double>(width) || b.y > static_cast<double>(height)) {
      throw ValidationError(fmt::format("box {} has its center ({}, {}) outside the {}x{} canvas", i, b.x, b.y,
                                        height, width));
    }
    const double size = std::log(std::sqrt(b.w * b.h));
    std::vector<int64_t> strides(kDetectionStrides.begin(), kDetectionStrides.end());
    std::stable_sort(strides.begin(), strides.end(), [&](int64_t a, int64_t c) {
      return std::abs(size - std::log(static_cast<double>(a))) < std::abs(size - std::log(static_cast<double>(c)));
    });
    for (auto s : strides) {
      GridCell cell{s, std::min(static_cast<int64_t>(b.y / static_cast<double>(s)), height / s - 1),
                    std::min(static_cast<int64_t>(b.x / static_cast<double>(s)), width / s - 1)};
      const int64_t col = column_of(height, width, cell);
      if (std::find(taken.begin(), taken.end(), col) != taken.end()) continue;
      taken.push_back(col);
      out.push_back({i, col, cell});
      break;
    }
  }
  return out;
}

LossComponents detection_loss(const PredictionTensor& pred, const std::vector<data::GroundTruthSet>& gts,
                              const LossWeights& weights) {
  pred.validate();
  if (static_cast<int64_t>(gts.size()) != pred.batch()) {
    throw DimensionError(fmt::format("{} ground-truth sets for a batch of {}", gts.size(), pred.batch()));
  }
  if (weights.box < 0 || weights.cls < 0 || weights.score < 0) throw ValidationError("loss weights must be >= 0");
  const int C = pred.num_classes();
  const auto& v = pred.values;
  const auto opts = v.options();
  const bool logits = pred.class_logits.defined();

  std::vector<int64_t> pos_batch, pos_col;
  std::vector<double> gt_boxes;
  std::vector<int64_t> gt_class;
  auto indicator = torch::zeros({pred.batch(), pred.capacity()}, opts);
  for (size_t b = 0; b < gts.size(); ++b) {
    for (const auto& lb : gts[b].boxes) {
      if (lb.class_id < 0 || lb.class_id >= C) {
        throw ValidationError(fmt::format("class id {} outside [0, {})", lb.class_id, C));
      }
    }
    for (const auto& a : assign_targets(gts[b], pred.image_height, pred.image_width)) {
      const auto& lb = gts[b].boxes[a.gt_index];
      pos_batch.push_back(static_cast<int64_t>(b));
      pos_col.push_back(a.column);
      gt_boxes.insert(gt_boxes.end(), {lb.box.x, lb.box.y, lb.box.w, lb.box.h});
      gt_class.push_back(lb.class_id);
    }
  }
  const auto P = static_cast<int64_t>(pos_col.size());
  auto zero = v.sum() * 0.0;
  LossComponents out{zero, zero, zero, zero};

  if (P > 0) {
    auto bi = torch::tensor(pos_batch, torch::kInt64).to(v.device());
    auto ci = torch::tensor(pos_col, torch::kInt64).to(v.device());
    indicator.index_put_({bi, ci}, 1.0);
    auto p = v.index({bi, torch::indexing::Slice(), ci});  // [P, 4+C]
    auto g = torch::tensor(gt_boxes, torch::kFloat64).view({P, 4}).to(opts);
    auto corners = [](const torch::Tensor& t) {
      auto x = t.select(1, 0), y = t.select(1, 1), w = t.select(1, 2), h = t.select(1, 3);
      return std::array<torch::Tensor, 4>{x - w / 2, y - h / 2, x + w / 2, y + h / 2};
    };
    auto pc = corners(p);
    auto gc = corners(g);
    auto iw = (torch::min(pc[2], gc[2]) - torch::max(pc[0], gc[0])).clamp_min(0.0);
    auto ih = (torch::min(pc[3], gc[3]) - torch::max(pc[1], gc[1])).clamp_min(0.0);
    auto inter = iw * ih;
    auto pa = (pc[2] - pc[0]).clamp_min(0.0) * (pc[3] - pc[1]).clamp_min(0.0);
    auto ga = g.select(1, 2) * g.select(1, 3);
    auto iou = inter / (pa + ga - inter);
    out.box = (1.0 - iou).mean();

    auto onehot = torch::one_hot(torch::tensor(gt_class, torch::kInt64), C).to(opts);
    if (logits) {
      auto l = pred.class_logits.index({bi, torch::indexing::Slice(), ci});
      out.cls = torch::binary_cross_entropy_with_logits(l, onehot);
    } else {
      out.cls = bce(p.slice(1, 4), onehot).mean();
    }
  }
  if (logits) {
    out.score = torch::binary_cross_entropy_with_logits(std::get<0>(pred.class_logits.max(1)), indicator);
  } else {
    out.score = bce(std::get<0>(v.slice(1, 4).max(1)), indicator).mean();
  }
  out.total = weights.box * out.box + weights.cls * out.cls + weights.score * out.score;
  return out;
}

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kNone: return "none";
    case FusionMode::kRaw: return "raw";
    case FusionMode::kAdapted: return "adapted";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view name) {
  for (auto m : {FusionMode::kNone, FusionMode::kRaw, FusionMode::kAdapted}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigurationError(fmt::format("unknown fusion mode '{}' (none, raw, adapted)", name));
}

DabImpl::DabImpl(int64_t in, int64_t out) : in_channels(in) {
  block1 = register_module("block1", nn::ConvBnAct(in, out, 3, 1, nn::Act::kSilu));
  block2 = register_module("block2", nn::ConvBnAct(out, out, 3, 1, nn::Act::kSilu));
}

torch::Tensor DabImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != in_channels) {
    throw DimensionError(fmt::format("DAB expects [B,{},H,W], got {}", in_channels, nn::shape_string(x)));
  }
  return block2->forward(block1->forward(x));
}

FusionImpl::FusionImpl(int64_t backbone, int64_t semantic, int64_t out)
    : backbone_channels(backbone), semantic_channels(semantic), out_channels(out) {
  block = register_module("block", nn::CspBlock(backbone + semantic, out, 1, true, nn::Act::kSilu));
}

torch::Tensor FusionImpl::forward(const torch::Tensor& backbone, const torch::Tensor& semantic) {
  if (backbone.dim() != 4 || semantic.dim() != 4 || backbone.size(1) != backbone_channels ||
      semantic.size(1) != semantic_channels || backbone.size(0) != semantic.size(0) ||
      backbone.size(2) != semantic.size(2) || backbone.size(3) != semantic.size(3)) {
    throw DimensionError(fmt::format("fusion inputs {} and {} do not match [B,{}|{},H,W]", nn::shape_string(backbone),
                                     nn::shape_string(semantic), backbone_channels, semantic_channels));
  }
  return block->forward(torch::cat({backbone, semantic}, 1));
}

void FusionImpl::zero_semantic_weights() {
  torch::NoGradGuard no_grad;
  block->cv1->conv->weight.slice(1, backbone_channels).zero_();
}

void FusionImpl::rig_passthrough() {
  if (2 * block->hidden < backbone_channels || out_channels < backbone_channels) {
    throw ConfigurationError("pass-through needs a fused width of at least the backbone width");
  }
  torch::NoGradGuard no_grad;
  auto identity = [](nn::ConvBnAct& c, int64_t n) {
    auto& w = c->conv->weight;
    w.zero_();
    for (int64_t i = 0; i < n; ++i) w[i][i][0][0] = 1.0;
    c->bn->weight.fill_(1.0);
    c->bn->bias.zero_();
    c->bn->running_mean.zero_();
    c->bn->running_var.fill_(1.0);
  };
  identity(block->cv1, backbone_channels);
  identity(block->cv2, backbone_channels);
  for (const auto& m : *block->blocks) {
    auto bottleneck = m->as<nn::Bottleneck>();
    bottleneck->cv2->bn->weight.zero_();
    bottleneck->cv2->bn->bias.zero_();
  }
}

void DtuConfig::validate() const {
  if (widths.size() != 5) throw ConfigurationError("detector needs five backbone widths (strides 2..32)");
  for (auto w : widths) {
    if (w <= 0) throw ConfigurationError("detector widths must be positive");
  }
  if (num_classes < 1) throw ConfigurationError("detector needs at least one class");
  if (fusion != FusionMode::kNone && semantic_channels <= 0) {
    throw ConfigurationError("semantic fusion needs a positive semantic channel count");
  }
  try {
    check_canvas(input_height, input_width);
  } catch (const DimensionError& e) {
    throw ConfigurationError(e.what());
  }
}

int64_t DtuConfig::fused_width(size_t level) const {
  const int64_t w = widths.at(level + 2);
  return fusion == FusionMode::kNone ? w : 2 * w;
}

nlohmann::json DtuConfig::to_json() const {
  return {{"C", num_classes},
          {"strides", std::vector<int64_t>(kDetectionStrides.begin(), kDetectionStrides.end())},
          {"widths", widths},
          {"semantic_channels", semantic_channels},
          {"fusion", std::string(to_string(fusion))},
          {"input_height", input_height},
          {"input_width", input_width},
          {"version", kCheckpointVersion}};
}

DtuConfig DtuConfig::from_json(const nlohmann::json& j) {
  DtuConfig c;
  try {
    c.num_classes = j.at("C").get<int>();
    c.widths = nn::widths_from_json(j.at("widths"), 5, "widths");
    if (j.contains("strides") &&
        j.at("strides").get<std::vector<int64_t>>() !=
            std::vector<int64_t>(kDetectionStrides.begin(), kDetectionStrides.end())) {
      throw ConfigurationError("detector checkpoint uses unsupported strides");
    }
    if (j.value("version", kCheckpointVersion) != kCheckpointVersion) {
      throw ConfigurationError("unsupported detector checkpoint version");
    }
    c.semantic_channels = j.value("semantic_channels", c.semantic_channels);
    c.fusion = parse_fusion_mode(j.value("fusion", std::string("adapted")));
    c.input_height = j.value("input_height", c.input_height);
    c.input_width = j.value("input_width", c.input_width);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(fmt::format("bad detector sidecar: {}", e.what()));
  }
  c.validate();
  return c;
}

DtuNetImpl::DtuNetImpl(DtuConfig cfg_) : cfg(std::move(cfg_)) {
  cfg.validate();
  const auto& w = cfg.widths;
  stem = register_module("stem", nn::ConvBnAct(3, w[0], 3, 2));
  for (size_t i = 1; i < w.size(); ++i) {
    stages->push_back(torch::nn::Sequential(nn::ConvBnAct(w[i - 1], w[i], 3, 2), nn::CspBlock(w[i], w[i], 1)));
  }
  register_module("stages", stages);
  for (size_t l = 0; l < kDetectionStrides.size(); ++l) {
    const int64_t c = w[l + 2];
    if (cfg.fusion == FusionMode::kAdapted) {
      dabs->push_back(Dab(cfg.semantic_channels, c));
      fusions->push_back(Fusion(c, c, cfg.fused_width(l)));
    } else if (cfg.fusion == FusionMode::kRaw) {
      fusions->push_back(Fusion(c, cfg.semantic_channels, cfg.fused_width(l)));
    }
  }
  register_module("dabs", dabs);
  register_module("fusions", fusions);
  // The fusion weights that read the semantic half start at zero, so a fused
  // detector begins as the backbone-only one and learns how much to use.
  for (const auto& m : *fusions) m->as<Fusion>()->zero_semantic_weights();
  const int64_t f8 = cfg.fused_width(0), f16 = cfg.fused_width(1), f32 = cfg.fused_width(2);
  lateral = register_module("lateral", nn::ConvBnAct(f32, w[3], 1));
  merge16 = register_module("merge16", nn::CspBlock(w[3] + f16, w[3], 1, false));
  merge8 = register_module("merge8", nn::CspBlock(w[3] + f8, w[2], 1, false));
  for (int64_t c : {w[2], w[3], w[3]}) {
    auto out = torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 4 + cfg.num_classes, 1));
    {
      torch::NoGradGuard no_grad;
      out->bias.zero_();
      out->bias.slice(0, 4).fill_(-4.6);  // initial class scores near 0.01
    }
    heads->push_back(torch::nn::Sequential(nn::ConvBnAct(c, c, 3), out));
  }
  register_module("heads", heads);
}

std::vector<torch::Tensor> DtuNetImpl::backbone(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = stem->forward(x);
  for (size_t i = 0; i < stages->size(); ++i) {
    h = stages[i]->as<torch::nn::Sequential>()->forward(h);
    if (i >= 1) out.push_back(h);
  }
  return out;
}

PredictionTensor DtuNetImpl::forward(const torch::Tensor& x, const semprior::SemanticPyramid* semantics) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != cfg.input_height || x.size(3) != cfg.input_width) {
    throw DimensionError(fmt::format("detector expects [B,3,{},{}], got {}", cfg.input_height, cfg.input_width,
                                     nn::shape_string(x)));
  }
  const int64_t H = x.size(2), W = x.size(3);
  auto feats = backbone(x);
  if (cfg.fusion != FusionMode::kNone) {
    if (semantics == nullptr) throw ValidationError("this detector fuses semantics; none were given");
    semantics->validate(H, W);
    if (semantics->channels() != cfg.semantic_channels) {
      throw DimensionError(fmt::format("semantic maps have {} channels, detector expects {}", semantics->channels(),
                                       cfg.semantic_channels));
    }
    for (size_t l = 0; l < feats.size(); ++l) {
      auto theta = semantics->at(kDetectionStrides[l]).to(feats[l].dtype());
      if (cfg.fusion == FusionMode::kAdapted) theta = dabs[l]->as<Dab>()->forward(theta);
      feats[l] = fusions[l]->as<Fusion>()->forward(feats[l], theta);
    }
  }
  auto up = [](const torch::Tensor& t) {
    return torch::nn::functional::interpolate(
        t, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(
               torch::kNearest));
  };
  auto p32 = lateral->forward(feats[2]);
  auto p16 = merge16->forward(torch::cat({up(p32), feats[1]}, 1));
  auto p8 = merge8->forward(torch::cat({up(p16), feats[0]}, 1));
  std::array<torch::Tensor, 3> levels = {p8, p16, p32};

  std::vector<torch::Tensor> boxes, logits;
  for (size_t l = 0; l < levels.size(); ++l) {
    const double s = static_cast<double>(kDetectionStrides[l]);
    auto raw = heads[l]->as<torch::nn::Sequential>()->forward(levels[l]);
    const int64_t gh = raw.size(2), gw = raw.size(3);
    auto flat = raw.flatten(2);  // [B, 4+C, gh*gw]
    auto opts = flat.options();
    auto gy = torch::arange(gh, opts).repeat_interleave(gw);
    auto gx = torch::arange(gw, opts).repeat({gh});
    // Centers stay inside their cell, where assignment puts the target center.
    // Sizes use a smooth bound (s e^-4 .. s e^4) so the IoU loss never loses
    // its gradient to a clamp.
    auto cx = (gx + torch::sigmoid(flat.select(1, 0))) * s;
    auto cy = (gy + torch::sigmoid(flat.select(1, 1))) * s;
    auto bw = s * torch::exp(4.0 * torch::tanh(flat.select(1, 2) / 4.0));
    auto bh = s * torch::exp(4.0 * torch::tanh(flat.select(1, 3) / 4.0));
    boxes.push_back(torch::stack({cx, cy, bw, bh}, 1));
    logits.push_back(flat.slice(1, 4));
  }
  PredictionTensor pred;
  pred.class_logits = torch::cat(logits, 2);
  pred.values = torch::cat({torch::cat(boxes, 2), torch::sigmoid(pred.class_logits)}, 1);
  pred.image_height = H;
  pred.image_width = W;
  return pred;
}

PredictionTensor dtu_forward(DtuNet& net, const ImagePlane& image, const semprior::SemanticPyramid* semantics) {
  torch::NoGradGuard no_grad;
  const auto dtype = net->stem->conv->weight.dtype();
  return net->forward(image.tensor().unsqueeze(0).to(dtype), semantics);
}

void save_dtu(DtuNet& net, const fs::path& path) { nn::save_checkpoint(net.ptr(), path, net->cfg.to_json()); }

DtuNet load_dtu(const fs::path& path) {
  DtuNet net(DtuConfig::from_json(nn::read_sidecar(path)));
  nn::load_parameters(net.ptr(), path);
  return net;
}

void write_detections(const fs::path& path,
                      const std::vector<std::pair<int64_t, std::vector<DetectionBox>>>& per_image) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure(fmt::format("cannot write '{}'", path.string()));
  for (const auto& [id, boxes] : per_image) {
    for (const auto& d : boxes) {
      nlohmann::json j = {{"image_id", id}, {"class_id", d.class_id}, {"x", d.box.x},   {"y", d.box.y},
                          {"w", d.box.w},   {"h", d.box.h},         {"score", d.score}};
      out << j.dump() << '\n';
    }
  }
  if (!out) throw RuntimeFailure(fmt::format("write to '{}' failed", path.string()));
}

std::vector<std::pair<int64_t, std::vector<DetectionBox>>> read_detections(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError(fmt::format("detections file '{}' not found", path.string()));
  std::vector<std::pair<int64_t, std::vector<DetectionBox>>> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      const auto id = j.at("image_id").get<int64_t>();
      DetectionBox d{{j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(),
                      j.at("h").get<double>()},
                     j.at("class_id").get<int>(),
                     j.at("score").get<double>()};
      if (out.empty() || out.back().first != id) out.emplace_back(id, std::vector<DetectionBox>{});
      out.back().second.push_back(d);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}: line {}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

std::vector<metrics::ScoredDetection> to_scored(int64_t image_id, const std::vector<DetectionBox>& boxes) {
  std::vector<metrics::ScoredDetection> out;
  out.reserve(boxes.size());
  for (const auto& d : boxes) out.push_back({image_id, d.class_id, d.box, d.score});
  return out;
}

}  // namespace semod::dtu
