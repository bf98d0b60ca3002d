#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>

#include "semod/data.hpp"
#include "semod/errors.hpp"
#include "semod/log.hpp"
#include "semod/trainer.hpp"
#include "semod/weathersim.hpp"

namespace semod::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<uint64_t> seed;
  std::string device;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "JSON config file (flat keys, see README)");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", c.seed, "seed (overrides the config)");
  cmd->add_option("--device", c.device, "cpu or cuda (overrides the config)");
  cmd->add_option("--override", c.overrides, "key=value config override, repeatable")->allow_extra_args(false);
}

// Config resolution: --config, else the checkpoint's semod.json, else
// defaults; then --seed, --device and every --override in order.
trainer::TrainConfig build_config(const Common& c, const std::string& ckpt = {}) {
  trainer::TrainConfig cfg;
  if (!c.config.empty()) {
    cfg = trainer::load_config(c.config);
  } else if (!ckpt.empty() && fs::exists(fs::path(ckpt) / "semod.json")) {
    cfg = trainer::load_config(fs::path(ckpt) / "semod.json");
  }
  if (c.seed) cfg.apply_override(fmt::format("seed={}", *c.seed));
  if (!c.device.empty()) cfg.apply_override("device=" + c.device);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  return cfg;
}

void require_exists(const std::vector<std::pair<std::string, std::string>>& named_paths) {
  std::vector<std::string> missing;
  for (const auto& [what, p] : named_paths) {
    if (!p.empty() && !fs::exists(p)) missing.push_back(fmt::format("{} '{}'", what, p));
  }
  if (missing.empty()) return;
  std::string msg = "missing inputs:";
  for (const auto& m : missing) msg += "\n  " + m;
  throw ValidationError(msg);
}

fs::path annotations_of(const std::string& data) {
  fs::path p(data);
  return fs::is_directory(p) ? p / "annotations.json" : p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw RuntimeFailure(fmt::format("cannot write '{}'", path.string()));
  f << text;
}

cv::Mat to_bgr8(const ImagePlane& img) {
  auto hwc = (img.hwc().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
  cv::Mat rgb(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_8UC3, hwc.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

cv::Scalar class_color(int class_id) {
  static const std::array<cv::Scalar, 8> palette = {
      cv::Scalar(60, 20, 220), cv::Scalar(0, 140, 255), cv::Scalar(0, 215, 255), cv::Scalar(50, 205, 50),
      cv::Scalar(255, 144, 30), cv::Scalar(180, 105, 255), cv::Scalar(128, 0, 128), cv::Scalar(255, 255, 0)};
  return palette[static_cast<size_t>(class_id) % palette.size()];
}

std::string class_name(int class_id) {
  const auto& vocab = data::class_vocabulary();
  return class_id >= 0 && static_cast<size_t>(class_id) < vocab.size() ? vocab[static_cast<size_t>(class_id)]
                                                                        : fmt::format("class{}", class_id);
}

void write_annotated(const fs::path& path, const ImagePlane& img, const std::vector<dtu::DetectionBox>& dets) {
  cv::Mat canvas = to_bgr8(img);
  for (const auto& d : dets) {
    const auto color = class_color(d.class_id);
    const cv::Point tl(static_cast<int>(std::lround(d.box.x - d.box.w / 2)),
                       static_cast<int>(std::lround(d.box.y - d.box.h / 2)));
    const cv::Point br(static_cast<int>(std::lround(d.box.x + d.box.w / 2)),
                       static_cast<int>(std::lround(d.box.y + d.box.h / 2)));
    cv::rectangle(canvas, tl, br, color, 2);
    cv::putText(canvas, fmt::format("{} {:.2f}", class_name(d.class_id), d.score), tl + cv::Point(2, -4),
                cv::FONT_HERSHEY_SIMPLEX, 0.4, color, 1, cv::LINE_AA);
  }
  if (!cv::imwrite(path.string(), canvas)) throw RuntimeFailure(fmt::format("cannot write '{}'", path.string()));
}

// Loss curves: total plus one line per component, linear axes.
void write_loss_plot(const fs::path& path, const trainer::RunLog& log, const std::string& title) {
  constexpr int kW = 800, kH = 480, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
  cv::Mat img(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  const auto& steps = log.steps();
  std::map<std::string, std::vector<cv::Point2d>> series;
  for (const auto& s : steps) {
    series["total"].emplace_back(static_cast<double>(s.step), s.total);
    for (const auto& [k, v] : s.components) series[k].emplace_back(static_cast<double>(s.step), v);
  }
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!steps.empty()) {
    x0 = static_cast<double>(steps.front().step);
    x1 = std::max(x0 + 1.0, static_cast<double>(steps.back().step));
    y1 = 0;
    for (const auto& [_, pts] : series) {
      for (const auto& p : pts) y1 = std::max(y1, p.y);
    }
    if (y1 <= 0) y1 = 1;
  }
  auto px = [&](const cv::Point2d& p) {
    return cv::Point(kLeft + static_cast<int>((p.x - x0) / (x1 - x0) * (kW - kLeft - kRight)),
                     kH - kBottom - static_cast<int>((p.y - y0) / (y1 - y0) * (kH - kTop - kBottom)));
  };
  const cv::Scalar black(0, 0, 0);
  cv::line(img, {kLeft, kH - kBottom}, {kW - kRight, kH - kBottom}, black);
  cv::line(img, {kLeft, kTop}, {kLeft, kH - kBottom}, black);
  for (int t = 0; t <= 4; ++t) {
    const double yv = y0 + (y1 - y0) * t / 4.0;
    const int yp = px({x0, yv}).y;
    cv::putText(img, fmt::format("{:.3g}", yv), {5, yp + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
    const double xv = x0 + (x1 - x0) * t / 4.0;
    const int xp = px({xv, y0}).x;
    cv::putText(img, fmt::format("{:.0f}", xv), {xp - 10, kH - kBottom + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
  }
  cv::putText(img, title, {kLeft, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.6, black, 1, cv::LINE_AA);
  cv::putText(img, "step", {(kW - kRight + kLeft) / 2, kH - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black);
  int legend = 0;
  for (const auto& [name, pts] : series) {
    const auto color = class_color(legend);
    std::vector<cv::Point> poly;
    for (const auto& p : pts) poly.push_back(px(p));
    if (poly.size() > 1) cv::polylines(img, poly, false, color, 1, cv::LINE_AA);
    const int ly = kTop + 20 * legend;
    cv::line(img, {kW - kRight + 10, ly}, {kW - kRight + 30, ly}, color, 2);
    cv::putText(img, name, {kW - kRight + 35, ly + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black);
    ++legend;
  }
  if (!cv::imwrite(path.string(), img)) throw RuntimeFailure(fmt::format("cannot write '{}'", path.string()));
}

std::vector<fs::path> collect_images(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".png") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  return out;
}

// ------------------------------------------------------------- commands

struct DegradeArgs {
  std::string clean_dir;
  std::string recipes = "fog,rain,snow";
  int64_t synthetic = 0;
  int64_t height = 128;
  int64_t width = 256;
  double intensity = 1.0;
};

void cmd_degrade(const Common& c, const DegradeArgs& a, std::ostream& out) {
  const auto cfg = build_config(c);
  std::vector<weathersim::WeatherRecipe> recipes;
  size_t start = 0;
  while (start <= a.recipes.size()) {
    const size_t comma = std::min(a.recipes.find(',', start), a.recipes.size());
    const auto item = a.recipes.substr(start, comma - start);
    if (!item.empty()) {
      auto r = weathersim::parse_recipe(item);
      if (item.find(':') == std::string::npos) r.intensity = a.intensity;
      if (item.find(':', item.find(':') + 1) == std::string::npos) r.seed = cfg.seed;
      r = r.normalized();
      r.validate();
      recipes.push_back(r);
    }
    start = comma + 1;
  }
  if (recipes.empty()) throw ValidationError("--recipes lists no weather");
  if (a.clean_dir.empty() == (a.synthetic <= 0)) {
    throw ValidationError("give exactly one of --clean-dir and --synthetic");
  }
  if (!a.clean_dir.empty()) {
    require_exists({{"clean directory", a.clean_dir}});
    auto m = weathersim::generate_pair_dataset(a.clean_dir, recipes, c.out);
    out << fmt::format("wrote {} pairs; manifest {}\n", m.pairs.size(), m.path.string());
    return;
  }
  data::SceneConfig sc;
  sc.count = a.synthetic;
  sc.height = a.height;
  sc.width = a.width;
  sc.seed = cfg.seed;
  sc.intensity = a.intensity;
  sc.weathers.clear();
  for (const auto& r : recipes) sc.weathers.push_back(data::weather_of(r.kind));
  auto ds = data::generate_scene_dataset(c.out, sc);
  out << fmt::format("wrote {} synthetic scenes; annotations {}\n", ds.samples.size(),
                     (ds.root / "annotations.json").string());
}

void cmd_train_ppu(const Common& c, const std::string& data_root, std::ostream& out) {
  require_exists({{"dataset", data_root}});
  auto cfg = build_config(c);
  cfg.stage = trainer::Stage::kPpu;
  auto r = trainer::run_train_ppu(data_root, cfg, c.out);
  out << fmt::format("best validation PSNR {:.3f} dB over {} steps; checkpoint {}\n", r.best_val_psnr,
                     r.log.steps().size(), (fs::path(c.out) / "ppu.pt").string());
}

void cmd_train_dtu(const Common& c, const std::string& data_root, const std::string& ckpt, std::ostream& out) {
  require_exists({{"dataset", data_root}, {"checkpoint directory", ckpt}});
  // The stage-1 semod.json carries the restoration settings to reuse.
  auto cfg = build_config(c, ckpt);
  cfg.stage = trainer::Stage::kDtu;
  auto r = trainer::run_train_dtu(data_root, ckpt, cfg, c.out);
  out << fmt::format("validation mAP_50 {:.4f}; checkpoint {}\n", r.final_val_map50,
                     (fs::path(c.out) / "dtu.pt").string());
}

struct EvalArgs {
  std::string data;
  std::string ckpt;
  bool ablate = false;
  std::vector<uint64_t> seeds = {1, 2, 3};
};

void cmd_eval(const Common& c, const EvalArgs& a, std::ostream& out) {
  require_exists({{"dataset", a.data}, {"checkpoint directory", a.ckpt}});
  const fs::path dir(c.out);
  fs::create_directories(dir);
  if (a.ablate) {
    auto cfg = build_config(c, a.ckpt);
    cfg.stage = trainer::Stage::kDtu;
    cfg.use_ppu = true;
    auto stage1 = trainer::load_pipeline(a.ckpt, cfg);
    if (!stage1.provider) {
      throw ConfigurationError(
          fmt::format("ablation needs the provider checkpoint '{}'", (fs::path(a.ckpt) / "semprior.pt").string()));
    }
    const fs::path ann = fs::is_directory(a.data) ? fs::path(a.data) : fs::path(a.data).parent_path();
    auto split = trainer::load_split(ann, cfg.seed);
    auto result = trainer::run_ablation(trainer::load_detection_examples(split.train),
                                        trainer::load_detection_examples(split.val), stage1, cfg, a.seeds,
                                        dir / "runs");
    write_text(dir / "ablation.json", result.to_json().dump(2) + "\n");
    const auto table = trainer::render_ablation_table(result);
    write_text(dir / "ablation_table.txt", table);
    out << table;
    return;
  }
  auto cfg = build_config(c, a.ckpt);
  auto pipeline = trainer::load_pipeline(a.ckpt, cfg);
  if (!pipeline.dtu) {
    throw ConfigurationError(fmt::format("detector checkpoint '{}' not found", (fs::path(a.ckpt) / "dtu.pt").string()));
  }
  auto samples = data::load_annotations(annotations_of(a.data));
  auto report = trainer::evaluate_pipeline(pipeline, trainer::load_detection_examples(samples), cfg.nms);
  report.validate();
  write_text(dir / "eval.json", report.to_json().dump(2) + "\n");
  const std::vector<std::pair<std::string, metrics::EvalReport>> rows = {{fs::path(a.ckpt).filename().string(), report}};
  std::string table = metrics::render_detection_table(rows);
  bool restoration = false;
  for (const auto& [_, w] : report.per_weather) restoration = restoration || w.psnr.has_value();
  if (restoration) table += "\n" + metrics::render_restoration_table(rows);
  write_text(dir / "eval_table.txt", table);
  out << table;
}

void cmd_detect(const Common& c, const std::string& image, const std::string& ckpt, std::ostream& out) {
  require_exists({{"image", image}, {"checkpoint directory", ckpt}});
  auto cfg = build_config(c, ckpt);
  auto pipeline = trainer::load_pipeline(ckpt, cfg);
  if (!pipeline.dtu) {
    throw ConfigurationError(fmt::format("detector checkpoint '{}' not found", (fs::path(ckpt) / "dtu.pt").string()));
  }
  const auto raw = read_png(image);
  const auto dets = pipeline.detect(raw, cfg.nms);
  const fs::path dir(c.out.empty() ? "." : c.out);
  fs::create_directories(dir);
  const auto stem = fs::path(image).stem().string();
  dtu::write_detections(dir / (stem + ".detections.jsonl"), {{0, dets}});
  write_annotated(dir / (stem + ".annotated.png"), raw, dets);
  out << fmt::format("{} detections; wrote {} and {}\n", dets.size(), (dir / (stem + ".detections.jsonl")).string(),
                     (dir / (stem + ".annotated.png")).string());
}

struct BenchArgs {
  std::vector<std::string> images;
  int64_t synthetic = 4;
  int64_t repeats = 10;
  int64_t warmup = 3;
};

void cmd_bench(const Common& c, const BenchArgs& a, std::ostream& out) {
  auto cfg = build_config(c);
  std::vector<ImagePlane> images;
  if (!a.images.empty()) {
    std::vector<std::pair<std::string, std::string>> named;
    for (const auto& p : a.images) named.emplace_back("image", p);
    require_exists(named);
    for (const auto& p : collect_images(a.images)) images.push_back(read_png(p));
    if (images.empty()) throw ValidationError("--images matched no PNG files");
  } else {
    if (a.synthetic < 1) throw ValidationError("--synthetic must be at least 1 when no --images are given");
    for (int64_t i = 0; i < a.synthetic; ++i) {
      images.push_back(
          data::render_scene(cfg.dtu.input_height, cfg.dtu.input_width, 4, cfg.seed + static_cast<uint64_t>(i)).clean);
    }
  }
  auto report = trainer::bench(cfg, images, a.repeats, a.warmup);
  const auto table = report.render();
  if (!c.out.empty()) {
    write_text(fs::path(c.out) / "bench.json", report.to_json().dump(2) + "\n");
    write_text(fs::path(c.out) / "bench.txt", table);
  }
  out << table;
}

struct ReportArgs {
  std::vector<std::string> runlogs;
  std::vector<std::string> evals;
  std::string ablation;
  bool no_plots = false;
};

void cmd_report(const Common& c, const ReportArgs& a, std::ostream& out) {
  std::vector<std::pair<std::string, std::string>> labeled_evals;
  for (const auto& e : a.evals) {
    const auto eq = e.find('=');
    if (eq != std::string::npos) {
      labeled_evals.emplace_back(e.substr(0, eq), e.substr(eq + 1));
    } else {
      const fs::path p(e);
      labeled_evals.emplace_back(p.filename() == "eval.json" ? p.parent_path().filename().string() : p.stem().string(),
                                 e);
    }
  }
  std::vector<std::pair<std::string, std::string>> named;
  for (const auto& r : a.runlogs) named.emplace_back("run log", r);
  for (const auto& [_, p] : labeled_evals) named.emplace_back("eval report", p);
  named.emplace_back("ablation result", a.ablation);
  require_exists(named);

  const fs::path dir(c.out);
  auto read_json = [](const std::string& p) {
    std::ifstream in(p);
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}: {}", p, e.what()));
    }
  };
  std::vector<std::pair<std::string, metrics::EvalReport>> rows;
  for (const auto& [label, p] : labeled_evals) rows.emplace_back(label, metrics::EvalReport::from_json(read_json(p)));
  std::optional<trainer::AblationResult> ablation;
  if (!a.ablation.empty()) ablation = trainer::AblationResult::from_json(read_json(a.ablation));
  std::vector<std::pair<std::string, trainer::RunLog>> logs;
  for (const auto& p : a.runlogs) logs.emplace_back(p, trainer::RunLog::read(p));

  if (!rows.empty()) {
    bool restoration = false;
    for (const auto& [_, r] : rows) {
      for (const auto& [__, w] : r.per_weather) restoration = restoration || w.psnr.has_value();
    }
    const auto det = metrics::render_detection_table(rows);
    write_text(dir / "detection_table.txt", det);
    out << det << '\n';
    if (restoration) {
      const auto res = metrics::render_restoration_table(rows);
      write_text(dir / "restoration_table.txt", res);
      out << res << '\n';
    }
  }
  if (ablation) {
    const auto t = trainer::render_ablation_table(*ablation);
    write_text(dir / "ablation_table.txt", t);
    out << t << '\n';
    if (!ablation->reports.empty()) {
      const auto det = metrics::render_detection_table(ablation->reports);
      write_text(dir / "ablation_detection_table.txt", det);
      out << det << '\n';
    }
  }
  if (!a.no_plots) {
    for (const auto& [p, log] : logs) {
      const auto name = fs::path(p).stem().string();
      fs::create_directories(dir);
      write_loss_plot(dir / ("loss_" + name + ".png"), log, name);
      out << "plot " << (dir / ("loss_" + name + ".png")).string() << '\n';
    }
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"semod: weather-robust detection with restoration and semantic priors", "semod"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every command");

  Common common;
  DegradeArgs degrade;
  auto* c_degrade = app.add_subcommand("degrade", "synthesize degraded/clean pairs or a synthetic scene dataset");
  add_common(c_degrade, common, true);
  c_degrade->add_option("--clean-dir", degrade.clean_dir, "directory of clean PNG images to degrade");
  c_degrade->add_option("--recipes", degrade.recipes, "comma list of kind[:intensity[:seed]], kinds fog/rain/snow/clear")
      ->capture_default_str();
  c_degrade->add_option("--synthetic", degrade.synthetic, "render this many synthetic annotated scenes instead");
  c_degrade->add_option("--height", degrade.height, "synthetic scene height")->capture_default_str();
  c_degrade->add_option("--width", degrade.width, "synthetic scene width")->capture_default_str();
  c_degrade->add_option("--intensity", degrade.intensity, "weather intensity when a recipe gives none")
      ->capture_default_str();

  std::string data_root, ckpt;
  auto* c_ppu = app.add_subcommand("train-ppu", "stage 1: train the restoration unit");
  add_common(c_ppu, common, true);
  c_ppu->add_option("--data", data_root, "dataset root holding annotations.json")->required();

  auto* c_dtu = app.add_subcommand("train-dtu", "stage 2: train the detector behind the frozen restoration unit");
  add_common(c_dtu, common, true);
  c_dtu->add_option("--data", data_root, "dataset root holding annotations.json")->required();
  c_dtu->add_option("--ckpt", ckpt, "stage-1 output directory (ppu.pt, semprior.pt)")->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint, or run the four-way ablation");
  add_common(c_eval, common, true);
  c_eval->add_option("--data", eval.data, "dataset root or annotations JSON")->required();
  c_eval->add_option("--ckpt", eval.ckpt, "checkpoint directory")->required();
  c_eval->add_flag("--ablate", eval.ablate, "train and compare detector / +PPU / +PPU+Sem / full on the split");
  c_eval->add_option("--seeds", eval.seeds, "ablation seeds")->delimiter(',')->capture_default_str();

  std::string image;
  auto* c_detect = app.add_subcommand("detect", "detect objects in one image");
  add_common(c_detect, common, false);
  c_detect->add_option("--image", image, "PNG image")->required();
  c_detect->add_option("--ckpt", ckpt, "checkpoint directory with dtu.pt")->required();

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "per-frame latency of the four pipeline configurations");
  add_common(c_bench, common, false);
  c_bench->add_option("--images", bench.images, "PNG files or directories");
  c_bench->add_option("--synthetic", bench.synthetic, "synthetic frames when no --images are given")
      ->capture_default_str();
  c_bench->add_option("--repeats", bench.repeats, "timed passes over the images")->capture_default_str();
  c_bench->add_option("--warmup", bench.warmup, "untimed warm-up iterations (at least 3)")->capture_default_str();

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "render tables and loss plots from earlier runs");
  add_common(c_report, common, true);
  c_report->add_option("--runlog", report.runlogs, "run log (JSON-lines), one loss plot each");
  c_report->add_option("--eval", report.evals, "eval.json, optionally label=path");
  c_report->add_option("--ablation", report.ablation, "ablation.json written by an ablation eval");
  c_report->add_flag("--no-plots", report.no_plots, "skip the loss plots");

  std::vector<std::string> argv_store = {"semod"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kValidationError;
  }

  try {
    if (c_degrade->parsed()) {
      cmd_degrade(common, degrade, out);
    } else if (c_ppu->parsed()) {
      cmd_train_ppu(common, data_root, out);
    } else if (c_dtu->parsed()) {
      cmd_train_dtu(common, data_root, ckpt, out);
    } else if (c_eval->parsed()) {
      cmd_eval(common, eval, out);
    } else if (c_detect->parsed()) {
      cmd_detect(common, image, ckpt, out);
    } else if (c_bench->parsed()) {
      cmd_bench(common, bench, out);
    } else if (c_report->parsed()) {
      cmd_report(common, report, out);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}

}  // namespace semod::cli
