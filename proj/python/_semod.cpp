#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "semod/data.hpp"
#include "semod/dtu.hpp"
#include "semod/errors.hpp"
#include "semod/metrics.hpp"
#include "semod/ppu.hpp"
#include "semod/trainer.hpp"
#include "semod/weathersim.hpp"

namespace py = pybind11;
using namespace semod;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// HWC float array in [0,1] (H x W or H x W x C).
ImagePlane to_plane(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw DimensionError("image must be HxW or HxWxC");
  const int64_t h = a.shape(0), w = a.shape(1), c = a.ndim() == 3 ? a.shape(2) : 1;
  auto t = torch::from_blob(const_cast<float*>(a.data()), {h, w, c}, torch::kFloat32).clone();
  return ImagePlane::from_hwc(t);
}

py::array_t<float> to_array(const ImagePlane& img) {
  auto hwc = img.hwc().to(torch::kFloat32).contiguous();
  py::array_t<float> out({hwc.size(0), hwc.size(1), hwc.size(2)});
  std::memcpy(out.mutable_data(), hwc.data_ptr<float>(), sizeof(float) * static_cast<size_t>(hwc.numel()));
  return out;
}

Box to_box(const std::array<double, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

py::dict detection_dict(const dtu::DetectionBox& d) {
  py::dict o;
  o["class_id"] = d.class_id;
  o["score"] = d.score;
  o["box"] = py::make_tuple(d.box.x, d.box.y, d.box.w, d.box.h);
  return o;
}

// Loaded two-stage pipeline for inference from Python.
class Detector {
 public:
  Detector(const std::filesystem::path& ckpt, const std::vector<std::string>& overrides) {
    trainer::TrainConfig cfg;
    if (std::filesystem::exists(ckpt / "semod.json")) cfg = trainer::load_config(ckpt / "semod.json");
    for (const auto& o : overrides) cfg.apply_override(o);
    nms_ = cfg.nms;
    pipeline_ = trainer::load_pipeline(ckpt, cfg);
    if (!pipeline_.dtu) throw ConfigurationError("checkpoint directory has no dtu.pt");
  }

  py::list detect(const FloatArray& image) const {
    auto plane = to_plane(image);
    std::vector<dtu::DetectionBox> dets;
    {
      py::gil_scoped_release release;
      dets = pipeline_.detect(plane, nms_);
    }
    py::list out;
    for (const auto& d : dets) out.append(detection_dict(d));
    return out;
  }

  py::array_t<float> restore(const FloatArray& image) const {
    auto prepared = pipeline_.prepare(to_plane(image));
    if (prepared.enhanced.empty()) throw ConfigurationError("pipeline has no restoration unit");
    return to_array(prepared.enhanced);
  }

 private:
  trainer::Pipeline pipeline_;
  dtu::NmsOptions nms_;
};

}  // namespace

PYBIND11_MODULE(_semod, m) {
  m.doc() = "semod native extension";

  static py::exception<ValidationError> validation_error(m, "ValidationError", PyExc_ValueError);
  static py::exception<RuntimeFailure> runtime_failure(m, "RuntimeFailure", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      py::set_error(validation_error, e.what());
    } catch (const RuntimeFailure& e) {
      py::set_error(runtime_failure, e.what());
    }
  });

  m.def(
      "psnr", [](const FloatArray& a, const FloatArray& b, double peak) { return metrics::psnr(to_plane(a), to_plane(b), peak); },
      py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
  m.def(
      "ssim", [](const FloatArray& a, const FloatArray& b, double peak) { return metrics::ssim(to_plane(a), to_plane(b), peak); },
      py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
  m.def(
      "iou", [](const std::array<double, 4>& a, const std::array<double, 4>& b) { return metrics::iou(to_box(a), to_box(b)); },
      py::arg("a"), py::arg("b"), "IoU of two center-form (x, y, w, h) boxes");
  m.def(
      "charbonnier",
      [](const FloatArray& pred, const FloatArray& target, double epsilon) {
        ppu::CharbonnierConfig cfg;
        cfg.epsilon = epsilon;
        return ppu::charbonnier_loss(to_plane(pred), to_plane(target), cfg);
      },
      py::arg("pred"), py::arg("target"), py::arg("epsilon") = 1e-3);

  m.def(
      "nms",
      [](const std::vector<std::array<double, 4>>& boxes, const std::vector<double>& scores,
         const std::vector<int>& classes, double iou_thresh) {
        if (boxes.size() != scores.size() || boxes.size() != classes.size()) {
          throw DimensionError("boxes, scores and classes must have one entry each");
        }
        std::vector<dtu::DetectionBox> cand;
        for (size_t i = 0; i < boxes.size(); ++i) cand.push_back({to_box(boxes[i]), classes[i], scores[i]});
        // Kept boxes come back by score; map them to input indices.
        std::vector<int64_t> kept;
        std::vector<bool> used(boxes.size(), false);
        for (const auto& k : dtu::suppress(cand, iou_thresh)) {
          for (size_t i = 0; i < cand.size(); ++i) {
            if (!used[i] && cand[i].box == k.box && cand[i].class_id == k.class_id && cand[i].score == k.score) {
              used[i] = true;
              kept.push_back(static_cast<int64_t>(i));
              break;
            }
          }
        }
        return kept;
      },
      py::arg("boxes"), py::arg("scores"), py::arg("classes"), py::arg("iou_thresh") = 0.45,
      "greedy per-class NMS; returns kept input indices in descending score order");

  m.def(
      "degrade",
      [](const FloatArray& clean, const std::string& recipe) {
        return to_array(weathersim::degrade(to_plane(clean), weathersim::parse_recipe(recipe)));
      },
      py::arg("clean"), py::arg("recipe"), "recipe: kind[:intensity[:seed]], e.g. 'fog:0.5:3'");

  m.def(
      "render_scene",
      [](int64_t height, int64_t width, int objects, uint64_t seed) {
        auto s = data::render_scene(height, width, objects, seed);
        py::list boxes;
        for (const auto& b : s.boxes.boxes) boxes.append(py::make_tuple(b.class_id, b.box.x, b.box.y, b.box.w, b.box.h));
        return py::make_tuple(to_array(s.clean), boxes);
      },
      py::arg("height"), py::arg("width"), py::arg("objects") = 3, py::arg("seed") = 0,
      "synthetic clean scene and its (class_id, x, y, w, h) boxes");
  m.def("class_vocabulary", &data::class_vocabulary);

  m.def("_default_config_json", [] { return trainer::TrainConfig{}.to_json().dump(); });
  m.def("_normalize_config_json",
        [](const std::string& text) { return trainer::TrainConfig::from_json(nlohmann::json::parse(text)).to_json().dump(); });
  m.def("config_keys", [] {
    std::vector<std::string> keys;
    for (const auto& k : trainer::config_schema()) keys.push_back(k.key);
    return keys;
  });

  py::class_<Detector>(m, "Detector")
      .def(py::init<const std::filesystem::path&, const std::vector<std::string>&>(), py::arg("ckpt"),
           py::arg("overrides") = std::vector<std::string>{})
      .def("detect", &Detector::detect, py::arg("image"), "list of {class_id, score, box=(x, y, w, h)}")
      .def("restore", &Detector::restore, py::arg("image"));
}
