#pragma once

#include <filesystem>
#include <vector>

#include "vislex/tensor.hpp"

namespace vislex {

/// H x W x C image with values in [0, 1], stored interleaved (HWC).
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, double fill = 0.0);

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  bool empty() const { return pixels_.empty(); }

  double& at(int y, int x, int ch) { return pixels_[index(y, x, ch)]; }
  double at(int y, int x, int ch) const { return pixels_[index(y, x, ch)]; }
  const std::vector<double>& data() const { return pixels_; }
  std::vector<double>& data() { return pixels_; }

  /// Throws ArgumentError unless every value is finite and in [0, 1].
  void validate() const;
  bool operator==(const ImageTensor&) const = default;

  /// (P x patch*patch*C) matrix of row-major patches, each flattened (y, x, c).
  Mat patchify(int patch) const;

 private:
  size_t index(int y, int x, int ch) const {
    return (static_cast<size_t>(y) * static_cast<size_t>(w_) + static_cast<size_t>(x)) *
               static_cast<size_t>(c_) +
           static_cast<size_t>(ch);
  }
  int h_ = 0, w_ = 0, c_ = 0;
  std::vector<double> pixels_;
};

/// Binary PPM (P6, 8-bit). Values are quantised to k/255 on write; images
/// produced by the synthetic generator are already on that grid, so the
/// round trip is lossless for them.
void write_ppm(const ImageTensor& img, const std::filesystem::path& path);
ImageTensor read_ppm(const std::filesystem::path& path);

/// Snap every value to the nearest k/255.
void quantize8(ImageTensor& img);

}  // namespace vislex
