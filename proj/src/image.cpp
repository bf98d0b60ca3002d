#include "semod/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <fmt/format.h>

namespace semod {

ImagePlane::ImagePlane(torch::Tensor chw) : data_(std::move(chw)) {
  if (data_.dim() != 3) {
    throw DimensionError(fmt::format("image tensor must be [C,H,W], got {} dims", data_.dim()));
  }
  if (!data_.is_floating_point()) {
    throw ValidationError("image tensor must be floating point");
  }
}

ImagePlane ImagePlane::zeros(int64_t height, int64_t width, int64_t channels, torch::Dtype dtype) {
  return filled(height, width, channels, 0.0, dtype);
}

ImagePlane ImagePlane::filled(int64_t height, int64_t width, int64_t channels, double value,
                              torch::Dtype dtype) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw ValidationError(fmt::format("image dims must be positive, got {}x{}x{}", height, width, channels));
  }
  return ImagePlane(torch::full({channels, height, width}, value, torch::TensorOptions().dtype(dtype)));
}

ImagePlane ImagePlane::from_hwc(const torch::Tensor& hwc) {
  if (hwc.dim() != 3) throw DimensionError("expected an [H,W,C] tensor");
  return ImagePlane(hwc.permute({2, 0, 1}).contiguous());
}

bool ImagePlane::same_shape(const ImagePlane& other) const {
  return data_.sizes() == other.data_.sizes();
}

void ImagePlane::validate_range(const std::string& what) const {
  if (!torch::isfinite(data_).all().item<bool>()) {
    throw ValidationError(what + " contains non-finite values");
  }
  if (data_.numel() > 0 && (data_.min().item<double>() < 0.0 || data_.max().item<double>() > 1.0)) {
    throw ValidationError(what + " has values outside [0,1]");
  }
}

ImagePlane read_png(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw ValidationError(fmt::format("cannot decode image '{}'", path.string()));
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto hwc = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return ImagePlane::from_hwc(hwc.to(torch::kFloat32).div_(255.0));
}

void write_png(const std::filesystem::path& path, const ImagePlane& image) {
  if (image.channels() != 3 && image.channels() != 1) {
    throw DimensionError("PNG output supports 1 or 3 channels");
  }
  auto bytes = image.hwc().to(torch::kFloat64).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).contiguous();
  const int type = image.channels() == 3 ? CV_8UC3 : CV_8UC1;
  cv::Mat mat(static_cast<int>(image.height()), static_cast<int>(image.width()), type, bytes.data_ptr<uint8_t>());
  cv::Mat out;
  if (image.channels() == 3) {
    cv::cvtColor(mat, out, cv::COLOR_RGB2BGR);
  } else {
    out = mat;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) {
    throw RuntimeFailure(fmt::format("failed to write '{}'", path.string()));
  }
}

ImagePlane resize_bilinear(const ImagePlane& image, int64_t height, int64_t width) {
  if (image.empty() || image.height() == 0 || image.width() == 0) {
    throw ValidationError("cannot resize an empty image");
  }
  if (height <= 0 || width <= 0) throw ValidationError("resize target must be positive");
  if (height == image.height() && width == image.width()) return image;
  namespace F = torch::nn::functional;
  auto out = F::interpolate(image.tensor().unsqueeze(0),
                            F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{height, width})
                                .mode(torch::kBilinear)
                                .align_corners(false));
  return ImagePlane(out.squeeze(0));
}

}  // namespace semod
