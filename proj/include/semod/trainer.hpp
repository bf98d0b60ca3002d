#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "semod/data.hpp"
#include "semod/dtu.hpp"
#include "semod/metrics.hpp"
#include "semod/ppu.hpp"
#include "semod/semprior.hpp"

namespace semod::trainer {

enum class Stage { kPpu, kDtu };
std::string_view to_string(Stage stage);

// Every knob of a run. Serialized as a flat JSON object whose keys are listed
// by `config_schema()`; unknown keys are rejected.
struct TrainConfig {
  Stage stage = Stage::kPpu;
  uint64_t seed = 0;
  std::string device = "cpu";
  double lr = 5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int64_t train_batch = 12;
  int64_t eval_batch = 16;
  int64_t epochs = 50;
  int64_t max_steps = 0;  // 0: no cap
  double grad_clip = 10.0;
  std::string lr_schedule = "constant";  // constant or cosine

  int64_t ppu_size = data::kPpuSize;
  ppu::PpuConfig ppu;
  bool ppu_semantics = true;

  dtu::DtuConfig dtu;
  bool use_ppu = true;
  bool hflip = true;  // mirror detector training batches at random
  dtu::LossWeights lambdas;
  dtu::NmsOptions nms;

  semprior::SemanticProviderSpec sem;
  semprior::ToyTrainConfig sem_train;

  // lr = 0 is accepted only when asked for (a diagnostic run through the
  // library API); configs from files and overrides need lr > 0.
  void validate(bool allow_zero_lr = false) const;
  // Copies the shared semantic width into the PPU and detector configs.
  TrainConfig resolved() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  // "key=value", parsed and type-checked against the schema.
  void apply_override(std::string_view assignment);
  torch::Device torch_device() const;
};

enum class ValueType { kInt, kFloat, kString, kBool, kIntList };

struct ConfigKey {
  std::string key;
  ValueType type;
  std::string help;
};
const std::vector<ConfigKey>& config_schema();

TrainConfig load_config(const std::filesystem::path& path);

// Learning rate for a zero-based step out of `steps`; cosine runs from lr down to lr/100.
double scheduled_lr(const TrainConfig& cfg, int64_t step, int64_t steps);

struct StepRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  double total = 0.0;
  std::map<std::string, double> components;
  double seconds = 0.0;
};

struct EvalRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  std::map<std::string, double> metrics;
};

// JSON-lines training log: {"type":"step",...} and {"type":"eval",...}.
class RunLog {
 public:
  RunLog() = default;
  // Also streams every record to `path` (truncated first).
  explicit RunLog(const std::filesystem::path& path);

  // Throws RuntimeFailure on a non-monotone step or a non-finite value.
  void record_step(const StepRecord& r);
  void record_eval(const EvalRecord& r);

  const std::vector<StepRecord>& steps() const { return steps_; }
  const std::vector<EvalRecord>& evals() const { return evals_; }
  std::vector<double> losses() const;

  static RunLog read(const std::filesystem::path& path);

 private:
  std::vector<StepRecord> steps_;
  std::vector<EvalRecord> evals_;
  std::shared_ptr<std::ofstream> out_;
};

struct PairExample {
  int64_t id = 0;
  data::Weather weather = data::Weather::kFoggy;
  ImagePlane degraded;
  ImagePlane clean;
};

struct DetectionExample {
  int64_t id = 0;
  data::Weather weather = data::Weather::kFoggy;
  ImagePlane image;             // as stored
  data::GroundTruthSet boxes;   // in image pixels
  std::optional<ImagePlane> clean;
};

// Degraded/clean pairs resized to size x size.
std::vector<PairExample> load_pairs(const std::vector<data::Sample>& samples, int64_t size);
std::vector<DetectionExample> load_detection_examples(const std::vector<data::Sample>& samples);

// Where PPU/detector training writes. Empty paths skip writing.
struct OutputPaths {
  std::filesystem::path dir;
};

struct PpuResult {
  ppu::PpuNet net{nullptr};
  RunLog log;
  double best_val_psnr = 0.0;
};

// Stage 1: Charbonnier training of the restoration unit on degraded/clean
// pairs (already at cfg.ppu_size). Semantics come from the frozen provider.
// Saves <dir>/ppu.pt (best by validation PSNR, or last without a validation
// set) and <dir>/ppu_last.pt after every epoch.
PpuResult train_ppu(const std::vector<PairExample>& train, const std::vector<PairExample>& val,
                    semprior::SemanticProvider* provider, const TrainConfig& cfg, const OutputPaths& out = {});

// Inference chain: optional restoration, resize to the detector canvas,
// semantic extraction, detector, NMS.
struct Pipeline {
  std::shared_ptr<semprior::SemanticProvider> provider;
  ppu::PpuNet ppu{nullptr};  // null: the detector sees the raw image
  dtu::DtuNet dtu{nullptr};
  int64_t ppu_size = data::kPpuSize;
  bool ppu_semantics = true;

  struct Prepared {
    torch::Tensor input;  // [1,3,H,W] detector input
    std::optional<semprior::SemanticPyramid> semantics;
    ImagePlane enhanced;  // restoration output at ppu_size (empty without a PPU)
  };
  Prepared prepare(const ImagePlane& raw) const;
  // Boxes in the coordinates of `raw`.
  std::vector<dtu::DetectionBox> detect(const ImagePlane& raw, const dtu::NmsOptions& opts) const;
  std::vector<dtu::DetectionBox> detect_prepared(const Prepared& p, int64_t raw_height, int64_t raw_width,
                                                 const dtu::NmsOptions& opts) const;
};

struct DtuResult {
  dtu::DtuNet net{nullptr};
  RunLog log;
  double final_val_map50 = 0.0;
};

// Stage 2: detector training with the restoration unit and provider frozen.
// `pipeline.dtu` is replaced by a fresh detector built from cfg.dtu. Saves
// <dir>/dtu.pt after every epoch. Throws RuntimeFailure if a frozen component
// changes.
DtuResult train_dtu(const std::vector<DetectionExample>& train, const std::vector<DetectionExample>& val,
                    Pipeline& pipeline, const TrainConfig& cfg, const OutputPaths& out = {});

// Detection (and, with a PPU and clean references, restoration) metrics.
metrics::EvalReport evaluate_pipeline(const Pipeline& pipeline, const std::vector<DetectionExample>& examples,
                                      const dtu::NmsOptions& opts);

// Provider resolution: cfg.sem.checkpoint, then $SEMOD_CACHE, else (toy
// provider) train one on the masks of `train`. Parameter-free providers need
// no checkpoint.
std::shared_ptr<semprior::SemanticProvider> resolve_provider(const TrainConfig& cfg,
                                                             const std::vector<data::Sample>& train,
                                                             const std::filesystem::path& save_to = {});
std::optional<std::filesystem::path> provider_cache_path(const semprior::SemanticProviderSpec& spec);

struct DatasetSplit {
  std::vector<data::Sample> train, val;
};
DatasetSplit load_split(const std::filesystem::path& root, uint64_t seed);

// Whole stage runs over a dataset root, writing checkpoints, semod.json and
// the run log under `out`.
PpuResult run_train_ppu(const std::filesystem::path& data_root, const TrainConfig& cfg,
                        const std::filesystem::path& out);
DtuResult run_train_dtu(const std::filesystem::path& data_root, const std::filesystem::path& ckpt_dir,
                        const TrainConfig& cfg, const std::filesystem::path& out);
Pipeline load_pipeline(const std::filesystem::path& ckpt_dir, const TrainConfig& cfg);

inline constexpr std::array<const char*, 4> kAblationRows = {"Detector", "+PPU", "+PPU+Sem", "+PPU+Sem+DAB"};

struct AblationResult {
  // Row label -> per-seed mAP_50 on the validation split (all weathers pooled).
  std::map<std::string, std::vector<double>> map50;
  std::map<std::string, double> median;
  std::vector<std::pair<std::string, metrics::EvalReport>> reports;  // first seed
  std::vector<uint64_t> seeds;

  nlohmann::json to_json() const;
  static AblationResult from_json(const nlohmann::json& j);
};

// One row per configuration in kAblationRows order: median and per-seed
// mAP_50 as percentages.
std::string render_ablation_table(const AblationResult& result);

// Trains and evaluates the four detector configurations against one shared
// restoration unit and provider: raw image without fusion; restored image
// without fusion; restored image with raw semantic concatenation; restored
// image with adapted semantics.
AblationResult run_ablation(const std::vector<DetectionExample>& train, const std::vector<DetectionExample>& val,
                            const Pipeline& stage1, const TrainConfig& cfg, const std::vector<uint64_t>& seeds,
                            const std::filesystem::path& out = {});

struct BenchRow {
  std::string name;
  double median_ms = 0.0;
  double p90_ms = 0.0;
  std::vector<double> samples_ms;
};

struct BenchReport {
  std::vector<BenchRow> rows;  // Detector, +PPU, +PPU+Sem, Full
  double dab_cost_ms = 0.0;    // Full minus +PPU+Sem medians
  nlohmann::json to_json() const;
  std::string render() const;
};

inline constexpr std::array<const char*, 4> kBenchRows = {"Detector", "PPU+Detector", "PPU+Detector+Semantics",
                                                          "Full"};

// Times the four components, interleaved round-robin so drift hits all rows
// alike. Untrained weights are fine: cost does not depend on values.
BenchReport bench(const TrainConfig& cfg, const std::vector<ImagePlane>& images, int64_t repeats,
                  int64_t warmup = 3);

}  // namespace semod::trainer
