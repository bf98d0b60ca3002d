#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <functional>

#include "semod/errors.hpp"
#include "semod/trainer.hpp"

namespace semod::trainer {

namespace {

using nlohmann::json;

struct Entry {
  ConfigKey meta;
  std::function<json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const json&)> set;
};

template <typename T>
Entry field(std::string key, ValueType type, std::string help, T TrainConfig::*member) {
  return {{std::move(key), type, std::move(help)},
          [member](const TrainConfig& c) { return json(c.*member); },
          [member](TrainConfig& c, const json& v) { c.*member = v.get<T>(); }};
}

template <typename Get, typename Set>
Entry custom(std::string key, ValueType type, std::string help, Get get, Set set) {
  return {{std::move(key), type, std::move(help)}, get, set};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      custom(
          "stage", ValueType::kString, "training stage: ppu or dtu",
          [](const TrainConfig& c) { return json(std::string(to_string(c.stage))); },
          [](TrainConfig& c, const json& v) {
            const auto s = v.get<std::string>();
            if (s == "ppu") {
              c.stage = Stage::kPpu;
            } else if (s == "dtu") {
              c.stage = Stage::kDtu;
            } else {
              throw ConfigurationError(fmt::format("stage must be ppu or dtu, got '{}'", s));
            }
          }),
      field("seed", ValueType::kInt, "seed for weights, shuffling and splits", &TrainConfig::seed),
      field("device", ValueType::kString, "cpu or cuda", &TrainConfig::device),
      field("lr", ValueType::kFloat, "SGD learning rate", &TrainConfig::lr),
      field("momentum", ValueType::kFloat, "SGD momentum", &TrainConfig::momentum),
      field("weight_decay", ValueType::kFloat, "SGD weight decay", &TrainConfig::weight_decay),
      field("train_batch", ValueType::kInt, "training batch size", &TrainConfig::train_batch),
      field("eval_batch", ValueType::kInt, "evaluation batch size", &TrainConfig::eval_batch),
      field("epochs", ValueType::kInt, "passes over the training split", &TrainConfig::epochs),
      field("max_steps", ValueType::kInt, "optimizer step cap, 0 for none", &TrainConfig::max_steps),
      field("lr_schedule", ValueType::kString, "cosine (decay to 1% of lr) or constant", &TrainConfig::lr_schedule),
      field("grad_clip", ValueType::kFloat, "gradient-norm clip, 0 disables", &TrainConfig::grad_clip),
      field("ppu.size", ValueType::kInt, "square restoration input side", &TrainConfig::ppu_size),
      custom(
          "ppu.widths", ValueType::kIntList, "encoder widths at strides 1,2,4,8,16",
          [](const TrainConfig& c) { return json(c.ppu.widths); },
          [](TrainConfig& c, const json& v) { c.ppu.widths = v.get<std::vector<int64_t>>(); }),
      custom(
          "ppu.epsilon", ValueType::kFloat, "Charbonnier epsilon",
          [](const TrainConfig& c) { return json(c.ppu.charbonnier.epsilon); },
          [](TrainConfig& c, const json& v) { c.ppu.charbonnier.epsilon = v.get<double>(); }),
      custom(
          "ppu.reduction", ValueType::kInt, "channel-attention reduction ratio",
          [](const TrainConfig& c) { return json(c.ppu.reduction); },
          [](TrainConfig& c, const json& v) { c.ppu.reduction = v.get<int64_t>(); }),
      field("ppu.semantics", ValueType::kBool, "feed semantic maps to the restoration decoders",
            &TrainConfig::ppu_semantics),
      custom(
          "dtu.height", ValueType::kInt, "detector input height",
          [](const TrainConfig& c) { return json(c.dtu.input_height); },
          [](TrainConfig& c, const json& v) { c.dtu.input_height = v.get<int64_t>(); }),
      custom(
          "dtu.width", ValueType::kInt, "detector input width",
          [](const TrainConfig& c) { return json(c.dtu.input_width); },
          [](TrainConfig& c, const json& v) { c.dtu.input_width = v.get<int64_t>(); }),
      custom(
          "dtu.widths", ValueType::kIntList, "backbone widths at strides 2,4,8,16,32",
          [](const TrainConfig& c) { return json(c.dtu.widths); },
          [](TrainConfig& c, const json& v) { c.dtu.widths = v.get<std::vector<int64_t>>(); }),
      custom(
          "dtu.classes", ValueType::kInt, "detection classes",
          [](const TrainConfig& c) { return json(c.dtu.num_classes); },
          [](TrainConfig& c, const json& v) { c.dtu.num_classes = v.get<int>(); }),
      custom(
          "dtu.fusion", ValueType::kString, "semantic fusion: none, raw or adapted",
          [](const TrainConfig& c) { return json(std::string(dtu::to_string(c.dtu.fusion))); },
          [](TrainConfig& c, const json& v) { c.dtu.fusion = dtu::parse_fusion_mode(v.get<std::string>()); }),
      field("dtu.use_ppu", ValueType::kBool, "detect on restored rather than raw images", &TrainConfig::use_ppu),
      field("dtu.hflip", ValueType::kBool, "random horizontal flips during detector training", &TrainConfig::hflip),
      custom(
          "dtu.lambda_box", ValueType::kFloat, "box loss weight",
          [](const TrainConfig& c) { return json(c.lambdas.box); },
          [](TrainConfig& c, const json& v) { c.lambdas.box = v.get<double>(); }),
      custom(
          "dtu.lambda_class", ValueType::kFloat, "class loss weight",
          [](const TrainConfig& c) { return json(c.lambdas.cls); },
          [](TrainConfig& c, const json& v) { c.lambdas.cls = v.get<double>(); }),
      custom(
          "dtu.lambda_score", ValueType::kFloat, "score loss weight",
          [](const TrainConfig& c) { return json(c.lambdas.score); },
          [](TrainConfig& c, const json& v) { c.lambdas.score = v.get<double>(); }),
      custom(
          "dtu.score_thresh", ValueType::kFloat, "NMS score threshold",
          [](const TrainConfig& c) { return json(c.nms.score_thresh); },
          [](TrainConfig& c, const json& v) { c.nms.score_thresh = v.get<double>(); }),
      custom(
          "dtu.iou_thresh", ValueType::kFloat, "NMS IoU threshold",
          [](const TrainConfig& c) { return json(c.nms.iou_thresh); },
          [](TrainConfig& c, const json& v) { c.nms.iou_thresh = v.get<double>(); }),
      custom(
          "dtu.max_detections", ValueType::kInt, "detections kept per image",
          [](const TrainConfig& c) { return json(c.nms.max_detections); },
          [](TrainConfig& c, const json& v) { c.nms.max_detections = v.get<int64_t>(); }),
      custom(
          "sem.provider", ValueType::kString, "semantic provider id",
          [](const TrainConfig& c) { return json(c.sem.provider_id); },
          [](TrainConfig& c, const json& v) { c.sem.provider_id = v.get<std::string>(); }),
      custom(
          "sem.classes", ValueType::kInt, "segmentation classes of the provider",
          [](const TrainConfig& c) { return json(c.sem.num_classes); },
          [](TrainConfig& c, const json& v) { c.sem.num_classes = v.get<int>(); }),
      custom(
          "sem.channels", ValueType::kInt, "semantic map channels k_s",
          [](const TrainConfig& c) { return json(c.sem.channel_count); },
          [](TrainConfig& c, const json& v) { c.sem.channel_count = v.get<int>(); }),
      custom(
          "sem.checkpoint", ValueType::kString, "provider checkpoint, empty to resolve automatically",
          [](const TrainConfig& c) { return json(c.sem.checkpoint_path ? c.sem.checkpoint_path->string() : ""); },
          [](TrainConfig& c, const json& v) {
            const auto s = v.get<std::string>();
            if (s.empty()) {
              c.sem.checkpoint_path.reset();
            } else {
              c.sem.checkpoint_path = s;
            }
          }),
      custom(
          "sem.steps", ValueType::kInt, "toy segmenter training steps",
          [](const TrainConfig& c) { return json(c.sem_train.steps); },
          [](TrainConfig& c, const json& v) { c.sem_train.steps = v.get<int64_t>(); }),
      custom(
          "sem.lr", ValueType::kFloat, "toy segmenter Adam learning rate",
          [](const TrainConfig& c) { return json(c.sem_train.lr); },
          [](TrainConfig& c, const json& v) { c.sem_train.lr = v.get<double>(); }),
      custom(
          "sem.batch", ValueType::kInt, "toy segmenter batch size",
          [](const TrainConfig& c) { return json(c.sem_train.batch); },
          [](TrainConfig& c, const json& v) { c.sem_train.batch = v.get<int64_t>(); }),
  };
  return table;
}

const Entry& find_entry(std::string_view key) {
  for (const auto& e : entries()) {
    if (e.meta.key == key) return e;
  }
  throw ConfigurationError(fmt::format("unknown config key '{}'", key));
}

bool matches(ValueType type, const json& v) {
  switch (type) {
    case ValueType::kInt: return v.is_number_integer();
    case ValueType::kFloat: return v.is_number();
    case ValueType::kString: return v.is_string();
    case ValueType::kBool: return v.is_boolean();
    case ValueType::kIntList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number_integer(); });
  }
  return false;
}

std::string_view type_name(ValueType type) {
  switch (type) {
    case ValueType::kInt: return "integer";
    case ValueType::kFloat: return "number";
    case ValueType::kString: return "string";
    case ValueType::kBool: return "boolean";
    case ValueType::kIntList: return "list of integers";
  }
  return "?";
}

void assign(TrainConfig& c, const Entry& e, const json& v) {
  if (!matches(e.meta.type, v)) {
    throw ConfigurationError(fmt::format("'{}' must be a {}, got {}", e.meta.key, type_name(e.meta.type), v.dump()));
  }
  if (e.meta.key == "seed" && v.get<int64_t>() < 0) throw ConfigurationError("seed must be non-negative");
  e.set(c, v);
}

int64_t parse_int(std::string_view key, std::string_view text) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigurationError(fmt::format("'{}' expects an integer, got '{}'", key, text));
  }
  return out;
}

json parse_value(const Entry& e, std::string_view text) {
  const auto& key = e.meta.key;
  switch (e.meta.type) {
    case ValueType::kInt: return parse_int(key, text);
    case ValueType::kFloat: {
      double out = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
      if (ec != std::errc() || p != text.data() + text.size()) {
        throw ConfigurationError(fmt::format("'{}' expects a number, got '{}'", key, text));
      }
      return out;
    }
    case ValueType::kString: return std::string(text);
    case ValueType::kBool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigurationError(fmt::format("'{}' expects true or false, got '{}'", key, text));
    case ValueType::kIntList: {
      if (text.size() >= 2 && text.front() == '[' && text.back() == ']') text = text.substr(1, text.size() - 2);
      std::vector<int64_t> out;
      while (!text.empty()) {
        const auto comma = text.find(',');
        out.push_back(parse_int(key, text.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
      }
      return out;
    }
  }
  return nullptr;
}

}  // namespace

std::string_view to_string(Stage stage) { return stage == Stage::kPpu ? "ppu" : "dtu"; }

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.meta);
    return out;
  }();
  return keys;
}

void TrainConfig::validate(bool allow_zero_lr) const {
  if (!(lr > 0.0 || (allow_zero_lr && lr == 0.0))) throw ConfigurationError("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigurationError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigurationError("weight_decay must be non-negative");
  if (train_batch < 1 || eval_batch < 1) throw ConfigurationError("batch sizes must be at least 1");
  if (epochs < 1) throw ConfigurationError("epochs must be at least 1");
  if (max_steps < 0) throw ConfigurationError("max_steps must be non-negative");
  if (grad_clip < 0.0) throw ConfigurationError("grad_clip must be non-negative");
  if (lr_schedule != "cosine" && lr_schedule != "constant") {
    throw ConfigurationError(fmt::format("lr_schedule must be cosine or constant, got '{}'", lr_schedule));
  }
  if (ppu_size <= 0 || ppu_size % 32 != 0) throw ConfigurationError("ppu.size must be a positive multiple of 32");
  if (device != "cpu" && device != "cuda") throw ConfigurationError(fmt::format("unknown device '{}'", device));
  if (lambdas.box < 0 || lambdas.cls < 0 || lambdas.score < 0) {
    throw ConfigurationError("loss weights must be non-negative");
  }
  if (sem_train.steps < 1 || sem_train.batch < 1 || !(sem_train.lr > 0)) {
    throw ConfigurationError("sem.steps, sem.batch and sem.lr must be positive");
  }
  try {
    nms.validate();
  } catch (const ValidationError& e) {
    throw ConfigurationError(e.what());
  }
  auto r = resolved();
  r.ppu.validate();
  r.dtu.validate();
  r.sem.validate();
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig r = *this;
  r.ppu.semantic_channels = ppu_semantics ? sem.channel_count : 0;
  r.dtu.semantic_channels = sem.channel_count;
  return r;
}

nlohmann::json TrainConfig::to_json() const {
  json j = json::object();
  for (const auto& e : entries()) j[e.meta.key] = e.get(*this);
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigurationError("config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) assign(c, find_entry(key), value);
  c.validate();
  return c;
}

void TrainConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigurationError(fmt::format("override '{}' must look like key=value", assignment));
  }
  const auto& e = find_entry(assignment.substr(0, eq));
  TrainConfig next = *this;
  assign(next, e, parse_value(e, assignment.substr(eq + 1)));
  next.validate();
  *this = next;
}

torch::Device TrainConfig::torch_device() const {
  if (device == "cuda") {
    if (!torch::cuda::is_available()) throw ConfigurationError("device cuda requested but CUDA is unavailable");
    return torch::Device(torch::kCUDA);
  }
  return torch::Device(torch::kCPU);
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError(fmt::format("config '{}' not found", path.string()));
  try {
    return TrainConfig::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: byte {}: {}", path.string(), e.byte, e.what()));
  }
}

}  // namespace semod::trainer
