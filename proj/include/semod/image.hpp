#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>

#include "semod/errors.hpp"

namespace semod {

// An image with values in [0,1]. Stored channel-first ([C,H,W]) so it feeds
// convolution layers without a permute; `hwc()` gives the interleaved view.
class ImagePlane {
 public:
  ImagePlane() = default;
  // Takes a [C,H,W] floating tensor. Range is not checked here; see `validate_range`.
  explicit ImagePlane(torch::Tensor chw);

  static ImagePlane zeros(int64_t height, int64_t width, int64_t channels = 3,
                          torch::Dtype dtype = torch::kFloat32);
  static ImagePlane filled(int64_t height, int64_t width, int64_t channels, double value,
                           torch::Dtype dtype = torch::kFloat32);
  // From an interleaved [H,W,C] tensor.
  static ImagePlane from_hwc(const torch::Tensor& hwc);

  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  int64_t channels() const { return data_.size(0); }
  bool empty() const { return !data_.defined(); }

  const torch::Tensor& tensor() const { return data_; }
  torch::Tensor hwc() const { return data_.permute({1, 2, 0}).contiguous(); }
  // [1,C,H,W] float32, ready for a network.
  torch::Tensor batched() const { return data_.unsqueeze(0).to(torch::kFloat32); }

  ImagePlane to(torch::Dtype dtype) const { return ImagePlane(data_.to(dtype)); }
  bool same_shape(const ImagePlane& other) const;

  // Throws ValidationError when any value is outside [0,1] or non-finite.
  void validate_range(const std::string& what) const;

 private:
  torch::Tensor data_;
};

// 8-bit PNG I/O. Pixels map to [0,1] by v/255 on read and round(v*255) on write.
ImagePlane read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImagePlane& image);

// Bilinear resize (half-pixel centers, no corner alignment).
ImagePlane resize_bilinear(const ImagePlane& image, int64_t height, int64_t width);

}  // namespace semod
