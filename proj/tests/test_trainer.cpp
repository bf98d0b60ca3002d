#include <doctest.h>

#include <cstdlib>
#include <set>

#include "semod/errors.hpp"
#include "semod/nn.hpp"
#include "semod/trainer.hpp"
#include "semod/weathersim.hpp"
#include "test_support.hpp"

using namespace semod;
using namespace semod::trainer;
using semod::testing::TempDir;

namespace {

// Small enough for unit tests: 64x64 restoration, 64x128 detector canvas.
TrainConfig desk_config() {
  TrainConfig c;
  c.ppu_size = 64;
  c.ppu.widths = {4, 8, 8, 16, 16};
  c.sem.channel_count = 8;
  c.dtu.widths = {4, 8, 8, 16, 16};
  c.dtu.input_height = 64;
  c.dtu.input_width = 128;
  c.train_batch = 4;
  c.epochs = 1000;
  c.sem_train.steps = 5;
  return c;
}

std::shared_ptr<semprior::SemanticProvider> untrained_provider(const TrainConfig& cfg) {
  torch::manual_seed(5);
  std::shared_ptr<semprior::SemanticProvider> p = semprior::make_provider(cfg.resolved().sem);
  p->freeze();
  return p;
}

std::vector<PairExample> fog_pairs(int n, int64_t size, double intensity) {
  std::vector<PairExample> out;
  for (int i = 0; i < n; ++i) {
    auto scene = data::render_scene(size, size, 2, 40 + static_cast<uint64_t>(i));
    weathersim::WeatherRecipe r;
    r.kind = weathersim::WeatherKind::kFog;
    r.intensity = intensity;
    r.seed = static_cast<uint64_t>(i);
    out.push_back({i, data::Weather::kFoggy, weathersim::degrade(scene.clean, r).to(torch::kFloat32),
                   scene.clean.to(torch::kFloat32)});
  }
  return out;
}

std::vector<DetectionExample> scenes(int n, int64_t h, int64_t w) {
  std::vector<DetectionExample> out;
  for (int i = 0; i < n; ++i) {
    auto s = data::render_scene(h, w, 2, 70 + static_cast<uint64_t>(i));
    out.push_back({i, data::Weather::kSunny, s.clean.to(torch::kFloat32), s.boxes, s.clean.to(torch::kFloat32)});
  }
  return out;
}

Pipeline stage1(const TrainConfig& cfg) {
  Pipeline p;
  p.provider = untrained_provider(cfg);
  torch::manual_seed(6);
  p.ppu = ppu::PpuNet(cfg.resolved().ppu);
  p.ppu_size = cfg.ppu_size;
  return p;
}

class EnvGuard {
 public:
  EnvGuard(const char* name, const std::string& value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    setenv(name, value.c_str(), 1);
  }
  ~EnvGuard() {
    if (old_) {
      setenv(name_, old_->c_str(), 1);
    } else {
      unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("config defaults") {
    TrainConfig c;
    CHECK(c.lr == doctest::Approx(5e-4));
    CHECK(c.weight_decay == doctest::Approx(1e-4));
    CHECK(c.momentum == doctest::Approx(0.9));
    CHECK(c.train_batch == 12);
    CHECK(c.eval_batch == 16);
    CHECK(c.epochs == 50);
    CHECK(c.ppu_size == 512);
    CHECK(c.dtu.input_height == 512);
    CHECK(c.dtu.input_width == 1024);
    CHECK(c.dtu.fusion == dtu::FusionMode::kAdapted);
    CHECK(c.lambdas.box == 1.0);
    CHECK(c.lambdas.cls == 1.0);
    CHECK(c.lambdas.score == 1.0);
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("config: JSON round trip covers exactly the schema keys") {
    auto c = desk_config();
    c.seed = 17;
    c.dtu.fusion = dtu::FusionMode::kRaw;
    c.use_ppu = false;
    c.sem.checkpoint_path = "/tmp/x.pt";
    const auto j = c.to_json();
    CHECK(TrainConfig::from_json(j).to_json() == j);
    std::set<std::string> keys, schema;
    for (const auto& [k, _] : j.items()) keys.insert(k);
    for (const auto& k : config_schema()) schema.insert(k.key);
    CHECK(keys == schema);
    // Partial objects keep the defaults for the rest.
    auto partial = TrainConfig::from_json({{"lr", 0.01}});
    CHECK(partial.lr == 0.01);
    CHECK(partial.train_batch == 12);
  }

  TEST_CASE("config: unknown keys and wrong types are rejected") {
    CHECK_THROWS_AS(TrainConfig::from_json({{"learning_rate", 0.1}}), ConfigurationError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"lr", "fast"}}), ConfigurationError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"train_batch", 1.5}}), ConfigurationError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"dtu.widths", {1, "a"}}}), ConfigurationError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"dtu.fusion", "sideways"}}), ConfigurationError);
    CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json::array()), ConfigurationError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"lr", 0.0}}), ConfigurationError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"train_batch", 0}}), ConfigurationError);
  }

  TEST_CASE("config: overrides are parsed against the schema") {
    TrainConfig c;
    c.apply_override("lr=0.01");
    c.apply_override("train_batch=3");
    c.apply_override("dtu.widths=[8,16,16,32,32]");
    c.apply_override("ppu.widths=4,8,8,16,16");
    c.apply_override("dtu.fusion=raw");
    c.apply_override("ppu.semantics=false");
    c.apply_override("stage=dtu");
    CHECK(c.lr == 0.01);
    CHECK(c.train_batch == 3);
    CHECK(c.dtu.widths == std::vector<int64_t>{8, 16, 16, 32, 32});
    CHECK(c.ppu.widths == std::vector<int64_t>{4, 8, 8, 16, 16});
    CHECK(c.dtu.fusion == dtu::FusionMode::kRaw);
    CHECK_FALSE(c.ppu_semantics);
    CHECK(c.stage == Stage::kDtu);

    const auto before = c.to_json();
    for (const char* bad : {"lr=fast", "lr", "nokey=1", "train_batch=2.5", "ppu.semantics=maybe", "lr=0",
                            "lr=-1", "train_batch=0", "dtu.widths=1,2", "ppu.size=100"}) {
      CAPTURE(bad);
      CHECK_THROWS_AS(c.apply_override(bad), ConfigurationError);
    }
    CHECK(c.to_json() == before);  // a rejected override changes nothing
  }

  TEST_CASE("config: lr > 0 and batches >= 1") {
    TrainConfig c;
    c.lr = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
    CHECK_NOTHROW(c.validate(true));
    c.lr = -1e-3;
    CHECK_THROWS_AS(c.validate(true), ConfigurationError);
    c.lr = 1e-3;
    c.eval_batch = 0;
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
  }

  TEST_CASE("lr schedule: cosine runs from lr to lr/100 and never rises") {
    TrainConfig c;
    c.lr = 0.02;
    c.lr_schedule = "cosine";
    CHECK(scheduled_lr(c, 0, 101) == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(scheduled_lr(c, 100, 101) == doctest::Approx(2e-4).epsilon(1e-12));
    // Midpoint of the cosine: lr * (0.01 + 0.99 / 2).
    CHECK(scheduled_lr(c, 50, 101) == doctest::Approx(0.02 * 0.505).epsilon(1e-12));
    for (int64_t s = 1; s < 101; ++s) CHECK(scheduled_lr(c, s, 101) <= scheduled_lr(c, s - 1, 101));
    CHECK(scheduled_lr(c, 0, 1) == 0.02);
    c.lr_schedule = "constant";
    for (int64_t s : {0, 50, 100}) CHECK(scheduled_lr(c, s, 101) == 0.02);
    CHECK_THROWS_AS(c.apply_override("lr_schedule=step"), ConfigurationError);
  }

  TEST_CASE("config: files") {
    TempDir dir("cfg");
    auto c = desk_config();
    std::ofstream(dir / "a.json") << c.to_json().dump(2);
    CHECK(load_config(dir / "a.json").to_json() == c.to_json());
    std::ofstream(dir / "bad.json") << "{\"lr\": ";
    CHECK_THROWS_AS(load_config(dir / "bad.json"), ParseError);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigurationError);
  }

  TEST_CASE("run log: monotone steps, finite values, JSON-lines round trip") {
    TempDir dir("log");
    {
      RunLog log(dir / "run.jsonl");
      log.record_step({1, 0, 0.5, {{"a", 0.25}, {"b", 0.25}}, 0.01});
      log.record_step({2, 0, 0.4, {{"a", 0.2}, {"b", 0.2}}, 0.01});
      log.record_eval({2, 0, {{"psnr", 20.0}}});
      CHECK_THROWS_AS(log.record_step({2, 0, 0.3, {}, 0.0}), RuntimeFailure);
      CHECK_THROWS_AS(log.record_step({1, 0, 0.3, {}, 0.0}), RuntimeFailure);
      CHECK_THROWS_AS(log.record_step({3, 0, std::nan(""), {}, 0.0}), RuntimeFailure);
      CHECK_THROWS_AS(log.record_step({3, 0, 1.0, {{"a", INFINITY}}, 0.0}), RuntimeFailure);
      CHECK(log.losses() == std::vector<double>{0.5, 0.4});
    }
    auto back = RunLog::read(dir / "run.jsonl");
    REQUIRE(back.steps().size() == 2);
    CHECK(back.losses() == std::vector<double>{0.5, 0.4});
    CHECK(back.steps()[1].components.at("a") == 0.2);
    REQUIRE(back.evals().size() == 1);
    CHECK(back.evals()[0].metrics.at("psnr") == 20.0);

    std::ofstream(dir / "bad.jsonl") << "{\"type\":\"step\",\"step\":1}\n";
    CHECK_THROWS_AS(RunLog::read(dir / "bad.jsonl"), ParseError);
    std::ofstream(dir / "odd.jsonl") << "{\"type\":\"party\"}\n";
    CHECK_THROWS_AS(RunLog::read(dir / "odd.jsonl"), ParseError);
  }

  TEST_CASE("train_ppu: 8 fog pairs, 200 steps, loss falls below half its initial value") {
    auto cfg = desk_config();
    cfg.lr = 0.1;
    cfg.train_batch = 8;
    cfg.max_steps = 200;
    auto pairs = fog_pairs(8, 64, 0.2);  // heavier 64 px fog erases the content to recover
    auto provider = untrained_provider(cfg);
    auto r = train_ppu(pairs, {}, provider.get(), cfg);
    const auto losses = r.log.losses();
    REQUIRE(losses.size() == 200);
    MESSAGE("initial " << losses.front() << " final " << losses.back());
    CHECK(losses.back() < 0.5 * losses.front());
    for (double v : losses) CHECK(std::isfinite(v));
  }

  TEST_CASE("train_ppu: a fixed seed gives bit-identical losses") {
    auto cfg = desk_config();
    cfg.lr = 0.02;
    cfg.max_steps = 12;
    auto pairs = fog_pairs(6, 64, 1.0);
    auto provider = untrained_provider(cfg);
    auto a = train_ppu(pairs, {}, provider.get(), cfg).log.losses();
    auto b = train_ppu(pairs, {}, provider.get(), cfg).log.losses();
    CHECK(a == b);
    cfg.seed = 1;
    CHECK(train_ppu(pairs, {}, provider.get(), cfg).log.losses() != a);
  }

  TEST_CASE("train_ppu: lr = 0 leaves the parameters unchanged and the loss constant") {
    auto cfg = desk_config();
    cfg.lr = 0.0;
    cfg.train_batch = 4;
    cfg.max_steps = 6;
    auto pairs = fog_pairs(4, 64, 1.0);
    auto provider = untrained_provider(cfg);
    torch::manual_seed(cfg.seed);
    ppu::PpuNet fresh(cfg.resolved().ppu);
    auto r = train_ppu(pairs, {}, provider.get(), cfg);
    // Parameters only: batch-norm running statistics still move in train mode.
    const auto before = fresh->parameters();
    const auto after = r.net->parameters();
    REQUIRE(before.size() == after.size());
    for (size_t i = 0; i < before.size(); ++i) CHECK(torch::equal(before[i], after[i]));
    const auto losses = r.log.losses();
    for (double v : losses) CHECK(v == doctest::Approx(losses.front()).epsilon(1e-6));
  }

  TEST_CASE("train_ppu: contract errors") {
    auto cfg = desk_config();
    cfg.max_steps = 1;
    auto pairs = fog_pairs(2, 64, 1.0);
    auto provider = untrained_provider(cfg);
    CHECK_THROWS_AS(train_ppu({}, {}, provider.get(), cfg), ValidationError);
    CHECK_THROWS_AS(train_ppu(pairs, {}, nullptr, cfg), ConfigurationError);
    auto wrong = fog_pairs(1, 32, 1.0);
    CHECK_THROWS_AS(train_ppu(wrong, {}, provider.get(), cfg), DimensionError);
    cfg.ppu_semantics = false;
    CHECK_NOTHROW(train_ppu(pairs, {}, nullptr, cfg));
  }

  TEST_CASE("train_ppu: checkpoints, best-by-PSNR and the streamed log") {
    TempDir dir("ppu");
    auto cfg = desk_config();
    cfg.lr = 0.02;
    cfg.train_batch = 2;
    cfg.epochs = 3;
    cfg.max_steps = 0;
    auto train = fog_pairs(4, 64, 1.0);
    auto val = fog_pairs(2, 64, 0.7);
    auto provider = untrained_provider(cfg);
    const auto provider_hash = nn::parameter_hash(*provider->module());
    auto r = train_ppu(train, val, provider.get(), cfg, {dir.path()});
    CHECK(nn::parameter_hash(*provider->module()) == provider_hash);
    CHECK(std::filesystem::exists(dir / "ppu.pt"));
    CHECK(std::filesystem::exists(dir / "ppu_last.pt"));
    REQUIRE(r.log.evals().size() == 3);
    double best = -1e9;
    for (const auto& e : r.log.evals()) best = std::max(best, e.metrics.at("psnr"));
    CHECK(r.best_val_psnr == best);
    CHECK(RunLog::read(dir / "runlog_ppu.jsonl").losses() == r.log.losses());

    // The returned network is the best one, and ppu.pt reproduces it exactly.
    auto loaded = ppu::load_ppu(dir / "ppu.pt");
    loaded->eval();
    torch::NoGradGuard no_grad;
    auto sem = provider->extract(val[0].degraded.batched());
    CHECK(torch::equal(loaded->forward(val[0].degraded.batched(), &sem), r.net->forward(val[0].degraded.batched(), &sem)));
  }

  TEST_CASE("train_ppu: a non-finite loss aborts and dumps the batch") {
    TempDir dir("nan");
    auto cfg = desk_config();
    cfg.max_steps = 3;
    cfg.ppu_semantics = false;
    auto pairs = fog_pairs(2, 64, 1.0);
    pairs[0].degraded = ImagePlane(torch::full({3, 64, 64}, std::nan("")));
    pairs[1].degraded = pairs[0].degraded;
    CHECK_THROWS_AS(train_ppu(pairs, {}, nullptr, cfg, {dir.path()}), RuntimeFailure);
    CHECK(std::filesystem::exists(dir / "nan_ppu_step1.pt"));
    auto meta = nlohmann::json::parse(semod::testing::read_bytes(dir / "nan_ppu_step1.pt.json"));
    CHECK(meta.at("stage") == "ppu");
    CHECK(meta.at("image_ids").size() == 2);
  }

  TEST_CASE("train_dtu: frozen stage 1, separate non-negative components, checkpoint round trip") {
    TempDir dir("dtu");
    auto cfg = desk_config();
    cfg.lr = 0.003;
    cfg.train_batch = 2;
    cfg.max_steps = 6;
    auto train = scenes(4, 128, 256);
    auto p = stage1(cfg);
    const auto ppu_hash = nn::parameter_hash(*p.ppu);
    const auto provider_hash = nn::parameter_hash(*p.provider->module());
    auto r = train_dtu(train, {}, p, cfg, {dir.path()});
    CHECK(nn::parameter_hash(*p.ppu) == ppu_hash);
    CHECK(nn::parameter_hash(*p.provider->module()) == provider_hash);
    REQUIRE(r.log.steps().size() == 6);
    for (const auto& s : r.log.steps()) {
      REQUIRE(s.components.size() == 3);
      double sum = 0.0;
      for (const auto& [k, v] : s.components) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(s.total == doctest::Approx(sum).epsilon(1e-6));
    }
    REQUIRE_FALSE(r.log.evals().empty());
    CHECK(r.log.evals().back().metrics.at("map50") == r.final_val_map50);

    auto loaded = dtu::load_dtu(dir / "dtu.pt");
    loaded->eval();
    auto prepared = p.prepare(train[0].image);
    auto a = dtu::dtu_forward(loaded, ImagePlane(prepared.input.squeeze(0)), &*prepared.semantics);
    auto b = dtu::dtu_forward(r.net, ImagePlane(prepared.input.squeeze(0)), &*prepared.semantics);
    CHECK(torch::equal(a.values, b.values));
  }

  TEST_CASE("train_dtu: zeroing all weights but the box weight leaves only the box term in the log") {
    auto cfg = desk_config();
    cfg.max_steps = 3;
    cfg.train_batch = 2;
    cfg.lambdas = {1.0, 0.0, 0.0};
    auto p = stage1(cfg);
    auto r = train_dtu(scenes(2, 64, 128), {}, p, cfg);
    for (const auto& s : r.log.steps()) {
      CHECK(s.components.at("box") > 0.0);
      CHECK(s.components.at("class") == 0.0);
      CHECK(s.components.at("score") == 0.0);
      CHECK(s.total == doctest::Approx(s.components.at("box")));
    }
  }

  TEST_CASE("train_dtu: flips are seeded and change the batches") {
    auto cfg = desk_config();
    cfg.max_steps = 6;
    cfg.train_batch = 2;
    cfg.dtu.fusion = dtu::FusionMode::kRaw;
    const auto data = scenes(2, 64, 128);
    auto losses = [&](bool hflip) {
      auto c = cfg;
      c.hflip = hflip;
      auto p = stage1(c);
      return train_dtu(data, {}, p, c).log.losses();
    };
    const auto a = losses(true);
    CHECK(a == losses(true));
    const auto plain = losses(false);
    CHECK(a != plain);
  }

  TEST_CASE("train_dtu: restored input without a PPU is a configuration error") {
    auto cfg = desk_config();
    cfg.max_steps = 1;
    Pipeline p;
    p.provider = untrained_provider(cfg);
    CHECK_THROWS_AS(train_dtu(scenes(1, 64, 128), {}, p, cfg), ConfigurationError);
    cfg.use_ppu = false;
    CHECK_NOTHROW(train_dtu(scenes(1, 64, 128), {}, p, cfg));
    TempDir empty("noppu");
    cfg.use_ppu = true;
    CHECK_THROWS_AS(load_pipeline(empty.path(), cfg), ConfigurationError);
  }

  TEST_CASE("pipeline: detections come back in raw image coordinates") {
    auto cfg = desk_config();
    cfg.use_ppu = false;
    cfg.dtu.fusion = dtu::FusionMode::kNone;
    torch::manual_seed(3);
    Pipeline p;
    p.dtu = dtu::DtuNet(cfg.dtu);
    auto raw = scenes(1, 128, 256)[0].image;
    // Fresh running statistics shrink eval-mode activations to nothing; warm
    // them up so the comparison sees real box regressions.
    for (int i = 0; i < 30; ++i) dtu::dtu_forward(p.dtu, resize_bilinear(raw, 64, 128), nullptr);
    p.dtu->eval();
    dtu::NmsOptions opts;
    opts.score_thresh = 0.0;
    opts.max_detections = 20;
    auto dets = p.detect(raw, opts);
    auto canvas = dtu::nms(dtu::dtu_forward(p.dtu, resize_bilinear(raw, 64, 128), nullptr), 0, opts);
    REQUIRE(dets.size() == canvas.size());
    REQUIRE_FALSE(dets.empty());
    for (size_t i = 0; i < dets.size(); ++i) {
      CHECK(dets[i].box.x == doctest::Approx(2 * canvas[i].box.x));
      CHECK(dets[i].box.y == doctest::Approx(2 * canvas[i].box.y));
      CHECK(dets[i].box.w == doctest::Approx(2 * canvas[i].box.w));
      CHECK(dets[i].box.h == doctest::Approx(2 * canvas[i].box.h));
      CHECK(dets[i].score == canvas[i].score);
    }
  }

  TEST_CASE("bench: one timing row per component, warm-up floor, DAB difference") {
    auto cfg = desk_config();
    std::vector<ImagePlane> images = {scenes(1, 64, 128)[0].image, scenes(2, 64, 128)[1].image};
    auto report = bench(cfg, images, 1);
    REQUIRE(report.rows.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
      CHECK(report.rows[i].name == kBenchRows[i]);
      CHECK(report.rows[i].samples_ms.size() == images.size());
      CHECK(report.rows[i].p90_ms >= report.rows[i].median_ms);
      CHECK(report.rows[i].median_ms > 0.0);
    }
    CHECK(report.dab_cost_ms == report.rows[3].median_ms - report.rows[2].median_ms);
    CHECK(report.to_json().at("rows").size() == 4);
    CHECK(report.render().find("DAB incremental cost") != std::string::npos);
    CHECK_THROWS_AS(bench(cfg, images, 1, 2), ValidationError);
    CHECK_THROWS_AS(bench(cfg, {}, 1), ValidationError);
    CHECK_THROWS_AS(bench(cfg, images, 0), ValidationError);
  }

  TEST_CASE("ablation: four rows, one value per seed, medians") {
    auto cfg = desk_config();
    cfg.max_steps = 2;
    cfg.train_batch = 2;
    auto data = scenes(2, 64, 128);
    auto p = stage1(cfg);
    auto r = run_ablation(data, {}, p, cfg, {1, 2, 3});
    REQUIRE(r.map50.size() == 4);
    REQUIRE(r.reports.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
      CHECK(r.reports[i].first == kAblationRows[i]);
      const auto& v = r.map50.at(kAblationRows[i]);
      REQUIRE(v.size() == 3);
      auto s = v;
      std::sort(s.begin(), s.end());
      CHECK(r.median.at(kAblationRows[i]) == s[1]);
    }
    CHECK_THROWS_AS(run_ablation(data, {}, p, cfg, {}), ValidationError);
  }

  TEST_CASE("end to end: generated dataset, both stages, cached provider") {
    TempDir dir("e2e");
    EnvGuard cache("SEMOD_CACHE", (dir / "cache").string());
    data::SceneConfig sc;
    sc.count = 20;
    sc.height = 64;
    sc.width = 128;
    sc.seed = 3;
    data::generate_scene_dataset(dir / "data", sc);
    auto cfg = desk_config();
    cfg.epochs = 1;
    cfg.lr = 0.01;

    auto r1 = run_train_ppu(dir / "data", cfg, dir / "s1");
    CHECK(std::filesystem::exists(dir / "s1/ppu.pt"));
    CHECK(std::filesystem::exists(dir / "s1/semprior.pt"));
    CHECK(load_config(dir / "s1/semod.json").stage == Stage::kPpu);
    const auto cached = provider_cache_path(cfg.resolved().sem);
    REQUIRE(cached);
    CHECK(std::filesystem::exists(*cached));
    CHECK(r1.log.steps().size() == 4);  // 16 training images, batch 4

    // A second resolution loads the cached segmenter instead of retraining.
    auto split = load_split(dir / "data", cfg.seed);
    auto a = resolve_provider(cfg, split.train);
    auto b = trainer::load_pipeline(dir / "s1", cfg).provider;
    auto x = torch::rand({1, 3, 64, 64});
    CHECK(torch::equal(a->extract(x).maps.at(8), b->extract(x).maps.at(8)));

    auto r2 = run_train_dtu(dir / "data", dir / "s1", cfg, dir / "s2");
    for (const char* f : {"dtu.pt", "ppu.pt", "semprior.pt", "semod.json", "runlog_dtu.jsonl"}) {
      CAPTURE(f);
      CHECK(std::filesystem::exists(dir / "s2" / f));
    }
    CHECK(load_config(dir / "s2/semod.json").stage == Stage::kDtu);
    auto p = load_pipeline(dir / "s2", cfg);
    auto report = evaluate_pipeline(p, load_detection_examples(split.val), cfg.nms);
    CHECK(report.per_weather.size() >= 4);
    CHECK(r2.final_val_map50 >= 0.0);
  }
}
