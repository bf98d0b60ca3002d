#include "semod/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <numeric>

#include "semod/errors.hpp"
#include "semod/log.hpp"
#include "semod/metrics.hpp"
#include "semod/nn.hpp"
#include "semod/rng.hpp"

namespace semod::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

double scheduled_lr(const TrainConfig& cfg, int64_t step, int64_t steps) {
  if (cfg.lr_schedule == "constant" || steps <= 1) return cfg.lr;
  constexpr double kFinal = 0.01;
  const double t = static_cast<double>(std::clamp<int64_t>(step, 0, steps - 1)) / static_cast<double>(steps - 1);
  return cfg.lr * (kFinal + (1.0 - kFinal) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

namespace {

using Clock = std::chrono::steady_clock;

semprior::SemanticPyramid cat_pyramids(const std::vector<const semprior::SemanticPyramid*>& parts) {
  semprior::SemanticPyramid out;
  for (const auto& [stride, _] : parts.front()->maps) {
    std::vector<torch::Tensor> maps;
    for (const auto* p : parts) maps.push_back(p->maps.at(stride));
    out.maps[stride] = torch::cat(maps, 0);
  }
  return out;
}

// Per-epoch shuffled batches of indices.
class Batcher {
 public:
  Batcher(size_t n, int64_t batch, uint64_t seed) : n_(n), batch_(static_cast<size_t>(batch)), seed_(seed) {}

  size_t batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

  std::vector<size_t> batch(int64_t epoch, size_t index) const {
    if (epoch != cached_epoch_) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), size_t{0});
      Rng rng(seed_ * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(epoch) + 1);
      rng.shuffle(order_);
      cached_epoch_ = epoch;
    }
    const size_t begin = index * batch_;
    const size_t end = std::min(n_, begin + batch_);
    return {order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(end)};
  }

 private:
  size_t n_, batch_;
  uint64_t seed_;
  mutable int64_t cached_epoch_ = -1;
  mutable std::vector<size_t> order_;
};

std::vector<torch::Tensor> trainable(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

// Parameters and buffers, cloned.
std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : m.buffers()) out.push_back(b.detach().clone());
  return out;
}

void restore(torch::nn::Module& m, const std::vector<torch::Tensor>& state) {
  torch::NoGradGuard no_grad;
  size_t i = 0;
  for (auto& p : m.parameters()) p.copy_(state[i++]);
  for (auto& b : m.buffers()) b.copy_(state[i++]);
}

[[noreturn]] void abort_non_finite(const std::string& stage, int64_t step, const std::vector<int64_t>& ids,
                                   const std::vector<torch::Tensor>& batch, const fs::path& dir) {
  const fs::path where = (dir.empty() ? fs::temp_directory_path() : dir) / fmt::format("nan_{}_step{}.pt", stage, step);
  try {
    fs::create_directories(where.parent_path());
    torch::save(batch, where.string());
    std::ofstream(fs::path(where.string() + ".json")) << json{{"stage", stage}, {"step", step}, {"image_ids", ids}}.dump(2);
  } catch (const std::exception& e) {
    log::error("could not dump the offending batch: {}", e.what());
  }
  throw RuntimeFailure(fmt::format("{} loss became non-finite at step {} (image ids {}); batch dumped to {}", stage,
                                   step, json(ids).dump(), where.string()));
}

int64_t total_steps(const TrainConfig& cfg, size_t batches_per_epoch) {
  const int64_t all = cfg.epochs * static_cast<int64_t>(batches_per_epoch);
  return cfg.max_steps > 0 ? std::min(all, cfg.max_steps) : all;
}

struct DetectionBatchItem {
  Pipeline::Prepared prepared;
  data::GroundTruthSet boxes;  // detector canvas coordinates
};

std::vector<DetectionBatchItem> prepare_all(const Pipeline& p, const std::vector<DetectionExample>& examples) {
  std::vector<DetectionBatchItem> out;
  out.reserve(examples.size());
  const auto& dc = p.dtu->cfg;
  for (const auto& ex : examples) {
    DetectionBatchItem item;
    item.prepared = p.prepare(ex.image);
    item.boxes = data::scale_boxes(ex.boxes, static_cast<double>(dc.input_width) / ex.image.width(),
                                   static_cast<double>(dc.input_height) / ex.image.height());
    item.boxes.class_count = dc.num_classes;
    out.push_back(std::move(item));
  }
  return out;
}

metrics::EvalReport evaluate_items(const Pipeline& p, const std::vector<DetectionExample>& examples,
                                   const std::vector<DetectionBatchItem>& items, const dtu::NmsOptions& opts,
                                   bool pooled) {
  std::vector<metrics::ImageDetections> outputs;
  std::vector<metrics::ImageGroundTruth> gts;
  std::vector<metrics::ImagePair> pairs;
  for (size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    auto dets = p.detect_prepared(items[i].prepared, ex.image.height(), ex.image.width(), opts);
    outputs.push_back({ex.id, dtu::to_scored(ex.id, dets)});
    gts.push_back({ex.id, pooled ? std::string("all") : std::string(data::to_string(ex.weather)),
                   ex.boxes.to_metrics(ex.id)});
    if (!items[i].prepared.enhanced.empty() && ex.clean) {
      const auto& enh = items[i].prepared.enhanced;
      pairs.push_back({ex.id, enh, resize_bilinear(*ex.clean, enh.height(), enh.width())});
    }
  }
  metrics::ApConfig ap;
  ap.class_count = p.dtu->cfg.num_classes;
  std::vector<std::string> names;
  if (ap.class_count == data::kClassCount) names = data::class_vocabulary();
  return metrics::evaluate(outputs, gts, pairs, ap, names);
}

double pooled_map50(const Pipeline& p, const std::vector<DetectionExample>& examples,
                    const std::vector<DetectionBatchItem>& items, const dtu::NmsOptions& opts) {
  auto r = evaluate_items(p, examples, items, opts, true);
  return r.per_weather.count("all") ? r.per_weather.at("all").map_50 : 0.0;
}

double mean_psnr(ppu::PpuNet& net, const std::vector<PairExample>& pairs,
                 const std::vector<std::optional<semprior::SemanticPyramid>>& sems, torch::Device device) {
  torch::NoGradGuard no_grad;
  net->eval();
  double total = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto* sem = sems[i] ? &*sems[i] : nullptr;
    auto out = net->forward(pairs[i].degraded.batched().to(device), sem).squeeze(0).to(torch::kCPU);
    total += std::min(metrics::psnr(ImagePlane(out), pairs[i].clean.to(torch::kFloat32)), 100.0);
  }
  net->train();
  return pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size());
}

}  // namespace

// ---------------------------------------------------------------- RunLog

RunLog::RunLog(const fs::path& path) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  out_ = std::make_shared<std::ofstream>(path, std::ios::trunc);
  if (!*out_) throw RuntimeFailure(fmt::format("cannot write run log '{}'", path.string()));
}

void RunLog::record_step(const StepRecord& r) {
  if (!steps_.empty() && r.step <= steps_.back().step) {
    throw RuntimeFailure(fmt::format("run log step {} after step {}", r.step, steps_.back().step));
  }
  if (!std::isfinite(r.total)) throw RuntimeFailure(fmt::format("non-finite loss at step {}", r.step));
  for (const auto& [k, v] : r.components) {
    if (!std::isfinite(v)) throw RuntimeFailure(fmt::format("non-finite {} at step {}", k, r.step));
  }
  steps_.push_back(r);
  if (out_) {
    *out_ << json{{"type", "step"},         {"step", r.step},     {"epoch", r.epoch},
                  {"loss", r.total},        {"components", r.components}, {"seconds", r.seconds}}
                 .dump()
          << '\n';
    out_->flush();
  }
}

void RunLog::record_eval(const EvalRecord& r) {
  evals_.push_back(r);
  if (out_) {
    *out_ << json{{"type", "eval"}, {"step", r.step}, {"epoch", r.epoch}, {"metrics", r.metrics}}.dump() << '\n';
    out_->flush();
  }
}

std::vector<double> RunLog::losses() const {
  std::vector<double> out;
  for (const auto& s : steps_) out.push_back(s.total);
  return out;
}

RunLog RunLog::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("run log '{}' not found", path.string()));
  RunLog log;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "step") {
        log.record_step({j.at("step").get<int64_t>(), j.at("epoch").get<int64_t>(), j.at("loss").get<double>(),
                         j.at("components").get<std::map<std::string, double>>(), j.value("seconds", 0.0)});
      } else if (type == "eval") {
        log.record_eval(
            {j.at("step").get<int64_t>(), j.at("epoch").get<int64_t>(), j.at("metrics").get<std::map<std::string, double>>()});
      } else {
        throw ParseError(fmt::format("{}: line {}: unknown record type '{}'", path.string(), lineno, type));
      }
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}: line {}: {}", path.string(), lineno, e.what()));
    }
  }
  return log;
}

// ---------------------------------------------------------------- data

std::vector<PairExample> load_pairs(const std::vector<data::Sample>& samples, int64_t size) {
  std::vector<PairExample> out;
  for (const auto& s : samples) {
    if (!s.clean_path) throw ValidationError(fmt::format("sample {} has no clean reference", s.id));
    PairExample p;
    p.id = s.id;
    p.weather = s.weather;
    p.degraded = resize_bilinear(data::load_image(s), size, size).to(torch::kFloat32);
    p.clean = resize_bilinear(read_png(*s.clean_path), size, size).to(torch::kFloat32);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<DetectionExample> load_detection_examples(const std::vector<data::Sample>& samples) {
  std::vector<DetectionExample> out;
  for (const auto& s : samples) {
    DetectionExample e;
    e.id = s.id;
    e.weather = s.weather;
    e.image = data::load_image(s).to(torch::kFloat32);
    e.boxes = s.boxes;
    if (s.clean_path) e.clean = read_png(*s.clean_path).to(torch::kFloat32);
    out.push_back(std::move(e));
  }
  return out;
}

DatasetSplit load_split(const fs::path& root, uint64_t seed) {
  auto samples = data::load_annotations(root / "annotations.json");
  auto manifest = data::split(samples, seed);
  std::map<int64_t, const data::Sample*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  DatasetSplit out;
  for (auto id : manifest.train) out.train.push_back(*by_id.at(id));
  for (auto id : manifest.val) out.val.push_back(*by_id.at(id));
  return out;
}

// ---------------------------------------------------------------- stage 1

PpuResult train_ppu(const std::vector<PairExample>& train, const std::vector<PairExample>& val,
                    semprior::SemanticProvider* provider, const TrainConfig& cfg_in, const OutputPaths& out) {
  const TrainConfig cfg = cfg_in.resolved();
  cfg.validate(true);
  if (train.empty()) throw ValidationError("restoration training needs at least one pair");
  for (const auto* set : {&train, &val}) {
    for (const auto& p : *set) {
      if (p.degraded.height() != cfg.ppu_size || p.degraded.width() != cfg.ppu_size || !p.degraded.same_shape(p.clean)) {
        throw DimensionError(fmt::format("pair {} must be {}x{} with matching clean image", p.id, cfg.ppu_size,
                                         cfg.ppu_size));
      }
    }
  }
  const bool use_sem = cfg.ppu.semantic_channels > 0;
  if (use_sem && provider == nullptr) throw ConfigurationError("semantic guidance needs a semantic provider");
  if (use_sem && provider->spec().channel_count != cfg.sem.channel_count) {
    throw ConfigurationError("provider channel count differs from sem.channels");
  }
  const auto device = cfg.torch_device();
  const uint64_t provider_hash = provider && provider->module() ? nn::parameter_hash(*provider->module()) : 0;

  auto semantics_of = [&](const std::vector<PairExample>& set) {
    std::vector<std::optional<semprior::SemanticPyramid>> out_sem;
    for (const auto& p : set) {
      if (!use_sem) {
        out_sem.emplace_back();
        continue;
      }
      auto pyr = provider->extract(p.degraded.batched());
      for (auto& [s, m] : pyr.maps) m = m.to(device);
      out_sem.emplace_back(std::move(pyr));
    }
    return out_sem;
  };
  const auto train_sem = semantics_of(train);
  const auto val_sem = semantics_of(val);

  torch::manual_seed(cfg.seed);
  PpuResult result;
  result.net = ppu::PpuNet(cfg.ppu);
  auto& net = result.net;
  net->to(device);
  net->train();
  if (!out.dir.empty()) fs::create_directories(out.dir);
  result.log = out.dir.empty() ? RunLog() : RunLog(out.dir / "runlog_ppu.jsonl");

  auto params = trainable(*net);
  torch::optim::SGD opt(params,
                        torch::optim::SGDOptions(cfg.lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
  Batcher batcher(train.size(), cfg.train_batch, cfg.seed);
  const int64_t steps = total_steps(cfg, batcher.batches_per_epoch());
  const auto& eval_set = val.empty() ? train : val;
  const auto& eval_sem = val.empty() ? train_sem : val_sem;
  result.best_val_psnr = -std::numeric_limits<double>::infinity();
  std::vector<torch::Tensor> best_state;

  int64_t step = 0;
  for (int64_t epoch = 0; step < steps; ++epoch) {
    for (size_t b = 0; b < batcher.batches_per_epoch() && step < steps; ++b) {
      const auto t0 = Clock::now();
      const auto idx = batcher.batch(epoch, b);
      std::vector<torch::Tensor> xs, ys;
      std::vector<const semprior::SemanticPyramid*> sems;
      std::vector<int64_t> ids;
      for (auto i : idx) {
        xs.push_back(train[i].degraded.batched());
        ys.push_back(train[i].clean.batched());
        if (use_sem) sems.push_back(&*train_sem[i]);
        ids.push_back(train[i].id);
      }
      auto x = torch::cat(xs, 0).to(device);
      auto y = torch::cat(ys, 0).to(device);
      std::optional<semprior::SemanticPyramid> sem;
      if (use_sem) sem = cat_pyramids(sems);
      auto loss = ppu::charbonnier_loss(net->forward(x, sem ? &*sem : nullptr), y, cfg.ppu.charbonnier);
      const double value = loss.item<double>();
      ++step;
      if (!std::isfinite(value)) abort_non_finite("ppu", step, ids, {x.cpu(), y.cpu()}, out.dir);
      opt.zero_grad();
      loss.backward();
      if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(params, cfg.grad_clip);
      static_cast<torch::optim::SGDOptions&>(opt.param_groups()[0].options()).lr(scheduled_lr(cfg, step - 1, steps));
      opt.step();
      result.log.record_step({step, epoch, value, {{"charbonnier", value}},
                              std::chrono::duration<double>(Clock::now() - t0).count()});
    }
    const double psnr = mean_psnr(net, eval_set, eval_sem, device);
    result.log.record_eval({step, epoch, {{"psnr", psnr}}});
    if (!out.dir.empty()) ppu::save_ppu(net, out.dir / "ppu_last.pt");
    if (psnr > result.best_val_psnr) {
      result.best_val_psnr = psnr;
      best_state = snapshot(*net);
      if (!out.dir.empty()) ppu::save_ppu(net, out.dir / "ppu.pt");
    }
  }
  if (!best_state.empty()) restore(*net, best_state);
  net->eval();
  if (provider && provider->module() && nn::parameter_hash(*provider->module()) != provider_hash) {
    throw RuntimeFailure("semantic provider parameters changed during restoration training");
  }
  return result;
}

// ---------------------------------------------------------------- pipeline

Pipeline::Prepared Pipeline::prepare(const ImagePlane& raw) const {
  if (!dtu) throw ConfigurationError("pipeline has no detector");
  torch::NoGradGuard no_grad;
  const auto& dc = dtu->cfg;
  const auto device = dtu->stem->conv->weight.device();
  Prepared out;
  ImagePlane x = raw.to(torch::kFloat32);
  if (ppu) {
    auto small = resize_bilinear(x, ppu_size, ppu_size);
    std::optional<semprior::SemanticPyramid> sem;
    if (ppu_semantics && ppu->cfg.semantic_channels > 0) {
      if (!provider) throw ConfigurationError("restoration unit expects semantics; pipeline has no provider");
      sem = provider->extract(small.batched());
      for (auto& [s, m] : sem->maps) m = m.to(device);
    }
    auto net = ppu;
    net->eval();
    auto enhanced = net->forward(small.batched().to(device), sem ? &*sem : nullptr);
    out.enhanced = ImagePlane(enhanced.squeeze(0).to(torch::kCPU));
    x = out.enhanced;
  }
  out.input = resize_bilinear(x, dc.input_height, dc.input_width).batched().to(device);
  if (dc.fusion != dtu::FusionMode::kNone) {
    if (!provider) throw ConfigurationError("detector fuses semantics; pipeline has no provider");
    out.semantics = provider->extract(out.input.cpu());
    for (auto& [s, m] : out.semantics->maps) m = m.to(device);
  }
  return out;
}

std::vector<dtu::DetectionBox> Pipeline::detect_prepared(const Prepared& p, int64_t raw_height, int64_t raw_width,
                                                         const dtu::NmsOptions& opts) const {
  torch::NoGradGuard no_grad;
  auto net = dtu;
  const bool was_training = net->is_training();
  net->eval();
  auto pred = net->forward(p.input, p.semantics ? &*p.semantics : nullptr);
  if (was_training) net->train();
  auto boxes = dtu::nms(pred, 0, opts);
  const double sx = static_cast<double>(raw_width) / static_cast<double>(pred.image_width);
  const double sy = static_cast<double>(raw_height) / static_cast<double>(pred.image_height);
  for (auto& d : boxes) d.box = {d.box.x * sx, d.box.y * sy, d.box.w * sx, d.box.h * sy};
  return boxes;
}

std::vector<dtu::DetectionBox> Pipeline::detect(const ImagePlane& raw, const dtu::NmsOptions& opts) const {
  return detect_prepared(prepare(raw), raw.height(), raw.width(), opts);
}

metrics::EvalReport evaluate_pipeline(const Pipeline& pipeline, const std::vector<DetectionExample>& examples,
                                      const dtu::NmsOptions& opts) {
  return evaluate_items(pipeline, examples, prepare_all(pipeline, examples), opts, false);
}

// ---------------------------------------------------------------- stage 2

DtuResult train_dtu(const std::vector<DetectionExample>& train, const std::vector<DetectionExample>& val,
                    Pipeline& pipeline, const TrainConfig& cfg_in, const OutputPaths& out) {
  const TrainConfig cfg = cfg_in.resolved();
  cfg.validate(true);
  if (train.empty()) throw ValidationError("detector training needs at least one image");
  if (cfg.use_ppu && !pipeline.ppu) throw ConfigurationError("detector training on restored images needs a PPU");
  if (!cfg.use_ppu) pipeline.ppu = nullptr;
  pipeline.ppu_size = cfg.ppu_size;
  pipeline.ppu_semantics = cfg.ppu_semantics;
  if (pipeline.ppu) nn::freeze(*pipeline.ppu);
  const auto device = cfg.torch_device();
  const uint64_t ppu_hash = pipeline.ppu ? nn::parameter_hash(*pipeline.ppu) : 0;
  const uint64_t provider_hash =
      pipeline.provider && pipeline.provider->module() ? nn::parameter_hash(*pipeline.provider->module()) : 0;

  torch::manual_seed(cfg.seed);
  DtuResult result;
  result.net = dtu::DtuNet(cfg.dtu);
  auto& net = result.net;
  net->to(device);
  pipeline.dtu = net;
  if (pipeline.ppu) pipeline.ppu->to(device);

  const auto train_items = prepare_all(pipeline, train);
  const auto val_items = prepare_all(pipeline, val);
  const auto& eval_examples = val.empty() ? train : val;
  const auto& eval_items = val.empty() ? train_items : val_items;

  if (!out.dir.empty()) fs::create_directories(out.dir);
  result.log = out.dir.empty() ? RunLog() : RunLog(out.dir / "runlog_dtu.jsonl");
  net->train();
  auto params = trainable(*net);
  torch::optim::SGD opt(params,
                        torch::optim::SGDOptions(cfg.lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
  Batcher batcher(train.size(), cfg.train_batch, cfg.seed);
  const int64_t steps = total_steps(cfg, batcher.batches_per_epoch());
  const bool fuse = cfg.dtu.fusion != dtu::FusionMode::kNone;
  Rng flips(cfg.seed ^ 0x5eedf11bULL);

  int64_t step = 0;
  for (int64_t epoch = 0; step < steps; ++epoch) {
    for (size_t b = 0; b < batcher.batches_per_epoch() && step < steps; ++b) {
      const auto t0 = Clock::now();
      const auto idx = batcher.batch(epoch, b);
      std::vector<torch::Tensor> xs;
      std::vector<const semprior::SemanticPyramid*> sems;
      std::vector<data::GroundTruthSet> gts;
      std::vector<int64_t> ids;
      std::vector<semprior::SemanticPyramid> flipped_sems;
      flipped_sems.reserve(idx.size());
      for (auto i : idx) {
        const auto& item = train_items[i];
        // Image, semantic maps and boxes are mirrored together.
        if (cfg.hflip && flips.uniform() < 0.5) {
          xs.push_back(item.prepared.input.flip({3}));
          if (fuse) {
            auto& f = flipped_sems.emplace_back();
            for (const auto& [s, m] : item.prepared.semantics->maps) f.maps[s] = m.flip({3});
            sems.push_back(&f);
          }
          auto g = item.boxes;
          const double width = static_cast<double>(cfg.dtu.input_width);
          for (auto& b : g.boxes) b.box.x = width - b.box.x;
          gts.push_back(std::move(g));
        } else {
          xs.push_back(item.prepared.input);
          if (fuse) sems.push_back(&*item.prepared.semantics);
          gts.push_back(item.boxes);
        }
        ids.push_back(train[i].id);
      }
      auto x = torch::cat(xs, 0);
      std::optional<semprior::SemanticPyramid> sem;
      if (fuse) sem = cat_pyramids(sems);
      auto pred = net->forward(x, sem ? &*sem : nullptr);
      auto loss = dtu::detection_loss(pred, gts, cfg.lambdas);
      const double value = loss.total.item<double>();
      ++step;
      if (!std::isfinite(value)) abort_non_finite("dtu", step, ids, {x.cpu()}, out.dir);
      opt.zero_grad();
      loss.total.backward();
      if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(params, cfg.grad_clip);
      static_cast<torch::optim::SGDOptions&>(opt.param_groups()[0].options()).lr(scheduled_lr(cfg, step - 1, steps));
      opt.step();
      result.log.record_step({step,
                              epoch,
                              value,
                              {{"box", cfg.lambdas.box * loss.box.item<double>()},
                               {"class", cfg.lambdas.cls * loss.cls.item<double>()},
                               {"score", cfg.lambdas.score * loss.score.item<double>()}},
                              std::chrono::duration<double>(Clock::now() - t0).count()});
    }
    const bool last = step >= steps;
    // Evaluation costs a forward pass per image; do it every epoch only for
    // small sets.
    if (last || eval_examples.size() <= 64) {
      result.final_val_map50 = pooled_map50(pipeline, eval_examples, eval_items, cfg.nms);
      result.log.record_eval({step, epoch, {{"map50", result.final_val_map50}}});
    }
    if (!out.dir.empty()) dtu::save_dtu(net, out.dir / "dtu.pt");
  }
  net->eval();
  if (pipeline.ppu && nn::parameter_hash(*pipeline.ppu) != ppu_hash) {
    throw RuntimeFailure("restoration unit parameters changed during detector training");
  }
  if (pipeline.provider && pipeline.provider->module() &&
      nn::parameter_hash(*pipeline.provider->module()) != provider_hash) {
    throw RuntimeFailure("semantic provider parameters changed during detector training");
  }
  return result;
}

// ---------------------------------------------------------------- providers and runs

std::optional<fs::path> provider_cache_path(const semprior::SemanticProviderSpec& spec) {
  const char* env = std::getenv("SEMOD_CACHE");
  if (env == nullptr || *env == '\0') return std::nullopt;
  return fs::path(env) / fmt::format("semprior-{}-c{}-k{}.pt", spec.provider_id, spec.num_classes, spec.channel_count);
}

std::shared_ptr<semprior::SemanticProvider> resolve_provider(const TrainConfig& cfg,
                                                             const std::vector<data::Sample>& train,
                                                             const fs::path& save_to) {
  auto spec = cfg.sem;
  std::shared_ptr<semprior::SemanticProvider> provider;
  if (!spec.checkpoint_path && spec.provider_id == "toy") {
    if (auto cached = provider_cache_path(spec); cached && fs::exists(*cached)) spec.checkpoint_path = *cached;
  }
  if (spec.checkpoint_path || spec.provider_id != "toy") {
    provider = semprior::make_provider(spec);
  } else {
    std::vector<semprior::SegmentationExample> examples;
    for (const auto& s : train) {
      if (!s.mask_path) continue;
      examples.push_back({resize_bilinear(data::load_image(s), cfg.ppu_size, cfg.ppu_size).to(torch::kFloat32),
                          data::resize_mask(data::load_mask(s), cfg.ppu_size, cfg.ppu_size)});
    }
    if (examples.empty()) {
      throw ConfigurationError(
          "no semantic provider checkpoint (sem.checkpoint or SEMOD_CACHE) and no masks to train one");
    }
    log::info("training the toy segmenter on {} masks", examples.size());
    torch::manual_seed(cfg.seed);
    auto toy = std::make_shared<semprior::ToyProvider>(spec);
    auto tc = cfg.sem_train;
    tc.seed = cfg.seed;
    semprior::train_toy_segmenter(*toy, examples, tc);
    if (auto cached = provider_cache_path(spec)) {
      fs::create_directories(cached->parent_path());
      semprior::save_provider(*toy, *cached);
    }
    provider = toy;
  }
  provider->freeze();
  if (!save_to.empty()) {
    fs::create_directories(save_to.parent_path());
    semprior::save_provider(*provider, save_to);
  }
  return provider;
}

namespace {

void write_run_config(const fs::path& out, const TrainConfig& cfg) {
  std::ofstream(out / "semod.json") << cfg.to_json().dump(2) << '\n';
}

void copy_if_needed(const fs::path& from, const fs::path& to) {
  if (!fs::exists(from)) return;
  if (fs::exists(to) && fs::equivalent(from, to)) return;
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

semprior::SemanticProviderSpec checkpoint_spec(const fs::path& ckpt_dir, const TrainConfig& cfg) {
  auto spec = cfg.sem;
  const auto path = ckpt_dir / "semprior.pt";
  if (fs::exists(path)) {
    auto side = nn::read_sidecar(path);
    spec.provider_id = side.value("provider_id", spec.provider_id);
    spec.num_classes = side.value("num_classes", spec.num_classes);
    spec.channel_count = side.value("k_s", spec.channel_count);
    spec.checkpoint_path = path;
  }
  return spec;
}

}  // namespace

PpuResult run_train_ppu(const fs::path& data_root, const TrainConfig& cfg, const fs::path& out) {
  cfg.validate();
  fs::create_directories(out);
  auto split = load_split(data_root, cfg.seed);
  auto provider = resolve_provider(cfg, split.train, out / "semprior.pt");
  auto train = load_pairs(split.train, cfg.ppu_size);
  auto val = load_pairs(split.val, cfg.ppu_size);
  auto result = train_ppu(train, val, provider.get(), cfg, {out});
  auto written = cfg;
  written.stage = Stage::kPpu;
  write_run_config(out, written);
  log::info("restoration unit trained: best validation PSNR {:.3f} dB", result.best_val_psnr);
  return result;
}

Pipeline load_pipeline(const fs::path& ckpt_dir, const TrainConfig& cfg) {
  Pipeline p;
  p.ppu_size = cfg.ppu_size;
  p.ppu_semantics = cfg.ppu_semantics;
  const auto spec = checkpoint_spec(ckpt_dir, cfg);
  if (spec.checkpoint_path || spec.provider_id != "toy") {
    p.provider = semprior::make_provider(spec);
    p.provider->freeze();
  }
  const auto ppu_path = ckpt_dir / "ppu.pt";
  if (cfg.use_ppu) {
    if (!fs::exists(ppu_path)) {
      throw ConfigurationError(fmt::format("restoration checkpoint '{}' not found", ppu_path.string()));
    }
    p.ppu = ppu::load_ppu(ppu_path);
    nn::freeze(*p.ppu);
  }
  if (fs::exists(ckpt_dir / "dtu.pt")) {
    p.dtu = dtu::load_dtu(ckpt_dir / "dtu.pt");
    p.dtu->eval();
  }
  const bool needs_provider = (p.ppu && p.ppu_semantics && p.ppu->cfg.semantic_channels > 0) ||
                              (p.dtu && p.dtu->cfg.fusion != dtu::FusionMode::kNone);
  if (needs_provider && !p.provider) {
    throw ConfigurationError(fmt::format("semantic provider checkpoint '{}' not found",
                                         (ckpt_dir / "semprior.pt").string()));
  }
  return p;
}

DtuResult run_train_dtu(const fs::path& data_root, const fs::path& ckpt_dir, const TrainConfig& cfg,
                        const fs::path& out) {
  cfg.validate();
  auto pipeline = load_pipeline(ckpt_dir, cfg);
  if (!pipeline.provider) {
    auto r = cfg.resolved();
    if (r.dtu.fusion != dtu::FusionMode::kNone) {
      throw ConfigurationError("semantic fusion needs the provider checkpoint semprior.pt in the checkpoint directory");
    }
  }
  fs::create_directories(out);
  auto split = load_split(data_root, cfg.seed);
  auto train = load_detection_examples(split.train);
  auto val = load_detection_examples(split.val);
  auto result = train_dtu(train, val, pipeline, cfg, {out});
  copy_if_needed(ckpt_dir / "ppu.pt", out / "ppu.pt");
  copy_if_needed(ckpt_dir / "ppu.pt.json", out / "ppu.pt.json");
  copy_if_needed(ckpt_dir / "semprior.pt", out / "semprior.pt");
  copy_if_needed(ckpt_dir / "semprior.pt.json", out / "semprior.pt.json");
  auto written = cfg;
  written.stage = Stage::kDtu;
  write_run_config(out, written);
  log::info("detector trained: validation mAP_50 {:.4f}", result.final_val_map50);
  return result;
}

// ---------------------------------------------------------------- ablation

AblationResult run_ablation(const std::vector<DetectionExample>& train, const std::vector<DetectionExample>& val,
                            const Pipeline& stage1, const TrainConfig& cfg, const std::vector<uint64_t>& seeds,
                            const fs::path& out) {
  if (seeds.empty()) throw ValidationError("ablation needs at least one seed");
  struct Variant {
    const char* label;
    bool use_ppu;
    dtu::FusionMode fusion;
  };
  const std::array<Variant, 4> variants = {{{kAblationRows[0], false, dtu::FusionMode::kNone},
                                            {kAblationRows[1], true, dtu::FusionMode::kNone},
                                            {kAblationRows[2], true, dtu::FusionMode::kRaw},
                                            {kAblationRows[3], true, dtu::FusionMode::kAdapted}}};
  AblationResult result;
  result.seeds = seeds;
  for (size_t si = 0; si < seeds.size(); ++si) {
    for (const auto& v : variants) {
      auto c = cfg;
      c.seed = seeds[si];
      c.use_ppu = v.use_ppu;
      c.dtu.fusion = v.fusion;
      Pipeline p = stage1;
      OutputPaths o;
      if (!out.empty()) o.dir = out / fmt::format("seed{}", seeds[si]) / v.label;
      auto trained = train_dtu(train, val, p, c, o);
      result.map50[v.label].push_back(trained.final_val_map50);
      log::info("ablation seed {} {}: mAP_50 {:.4f}", seeds[si], v.label, trained.final_val_map50);
      if (si == 0) result.reports.emplace_back(v.label, evaluate_pipeline(p, val.empty() ? train : val, c.nms));
    }
  }
  for (auto& [label, values] : result.map50) {
    auto sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    result.median[label] = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return result;
}

nlohmann::json AblationResult::to_json() const {
  json rows = json::array();
  for (const char* label : kAblationRows) {
    if (!map50.count(label)) continue;
    rows.push_back({{"label", label}, {"map50", map50.at(label)}, {"median", median.at(label)}});
  }
  json rep = json::object();
  for (const auto& [label, r] : reports) rep[label] = r.to_json();
  return {{"rows", rows}, {"seeds", seeds}, {"reports", rep}};
}

AblationResult AblationResult::from_json(const nlohmann::json& j) {
  try {
    AblationResult r;
    for (const auto& row : j.at("rows")) {
      const auto label = row.at("label").get<std::string>();
      r.map50[label] = row.at("map50").get<std::vector<double>>();
      r.median[label] = row.at("median").get<double>();
    }
    r.seeds = j.value("seeds", std::vector<uint64_t>{});
    if (j.contains("reports")) {
      for (const char* label : kAblationRows) {
        if (j.at("reports").contains(label)) {
          r.reports.emplace_back(label, metrics::EvalReport::from_json(j.at("reports").at(label)));
        }
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("ablation result: {}", e.what()));
  }
}

std::string render_ablation_table(const AblationResult& result) {
  size_t seeds = 0;
  for (const auto& [_, v] : result.map50) seeds = std::max(seeds, v.size());
  std::string out = fmt::format("{:<14}  {:>13}", "Configuration", "mAP_50 median");
  for (size_t i = 0; i < seeds; ++i) {
    out += fmt::format("  {:>8}", i < result.seeds.size() ? fmt::format("seed {}", result.seeds[i])
                                                          : fmt::format("run {}", i + 1));
  }
  out += '\n';
  for (const char* label : kAblationRows) {
    if (!result.map50.count(label)) continue;
    out += fmt::format("{:<14}  {:>13.2f}", label, 100.0 * result.median.at(label));
    for (double v : result.map50.at(label)) out += fmt::format("  {:>8.2f}", 100.0 * v);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------- bench

nlohmann::json BenchReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"name", r.name}, {"median_ms", r.median_ms}, {"p90_ms", r.p90_ms}, {"samples_ms", r.samples_ms}});
  }
  return {{"rows", rows_j}, {"dab_cost_ms", dab_cost_ms}};
}

std::string BenchReport::render() const {
  size_t width = 9;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::string out = fmt::format("{:<{}}  {:>10}  {:>10}  {:>7}\n", "Component", width, "median ms", "p90 ms", "frames");
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}  {:>10.2f}  {:>10.2f}  {:>7}\n", r.name, width, r.median_ms, r.p90_ms,
                       r.samples_ms.size());
  }
  out += fmt::format("DAB incremental cost: {:.2f} ms\n", dab_cost_ms);
  return out;
}

BenchReport bench(const TrainConfig& cfg_in, const std::vector<ImagePlane>& images, int64_t repeats,
                  int64_t warmup) {
  const auto cfg = cfg_in.resolved();
  cfg.validate();
  if (images.empty()) throw ValidationError("bench needs at least one image");
  if (repeats < 1) throw ValidationError("bench repeats must be at least 1");
  if (warmup < 3) throw ValidationError("bench needs at least 3 warm-up iterations");
  torch::manual_seed(cfg.seed);
  torch::NoGradGuard no_grad;
  std::shared_ptr<semprior::SemanticProvider> provider = semprior::make_provider(cfg.sem);
  provider->freeze();
  ppu::PpuNet ppu_net(cfg.ppu);
  ppu_net->eval();
  auto make_dtu = [&](dtu::FusionMode mode) {
    auto c = cfg.dtu;
    c.fusion = mode;
    dtu::DtuNet n(c);
    n->eval();
    return n;
  };
  auto plain = make_dtu(dtu::FusionMode::kNone);
  auto raw = make_dtu(dtu::FusionMode::kRaw);
  auto full = make_dtu(dtu::FusionMode::kAdapted);
  const auto& dc = cfg.dtu;
  const int64_t S = cfg.ppu_size;

  auto detect = [&](dtu::DtuNet& net, const ImagePlane& img, bool sem) {
    auto x = resize_bilinear(img, dc.input_height, dc.input_width).batched();
    std::optional<semprior::SemanticPyramid> pyr;
    if (sem) pyr = provider->extract(x);
    return dtu::nms(net->forward(x, pyr ? &*pyr : nullptr), 0, cfg.nms).size();
  };
  auto restore_img = [&](const ImagePlane& img, bool sem) {
    auto x = resize_bilinear(img, S, S).batched();
    std::optional<semprior::SemanticPyramid> pyr;
    if (sem) pyr = provider->extract(x);
    return ImagePlane(ppu_net->forward(x, pyr ? &*pyr : nullptr).squeeze(0));
  };
  std::vector<std::function<size_t(const ImagePlane&)>> components = {
      [&](const ImagePlane& img) { return detect(plain, img, false); },
      [&](const ImagePlane& img) { return detect(plain, restore_img(img, false), false); },
      [&](const ImagePlane& img) { return detect(raw, restore_img(img, true), true); },
      [&](const ImagePlane& img) { return detect(full, restore_img(img, true), true); },
  };

  for (int64_t w = 0; w < warmup; ++w) {
    for (auto& c : components) c(images[static_cast<size_t>(w) % images.size()]);
  }
  BenchReport report;
  for (size_t i = 0; i < components.size(); ++i) report.rows.push_back({kBenchRows[i], 0, 0, {}});
  for (int64_t r = 0; r < repeats; ++r) {
    for (const auto& img : images) {
      for (size_t i = 0; i < components.size(); ++i) {
        const auto t0 = Clock::now();
        components[i](img);
        report.rows[i].samples_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
      }
    }
  }
  for (auto& row : report.rows) {
    auto s = row.samples_ms;
    std::sort(s.begin(), s.end());
    const size_t n = s.size();
    row.median_ms = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
    const size_t rank = static_cast<size_t>(std::ceil(0.9 * static_cast<double>(n)));
    row.p90_ms = s[std::max<size_t>(rank, 1) - 1];
  }
  report.dab_cost_ms = report.rows[3].median_ms - report.rows[2].median_ms;
  return report;
}

}  // namespace semod::trainer
