#include "vislex/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace vislex {

ImageTensor::ImageTensor(int height, int width, int channels, double fill)
    : h_(height), w_(width), c_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0)
    throw ArgumentError("image dimensions must be positive");
  pixels_.assign(static_cast<size_t>(height) * width * channels, fill);
}

void ImageTensor::validate() const {
  if (pixels_.size() != static_cast<size_t>(h_) * w_ * c_ || pixels_.empty())
    throw ArgumentError("image buffer does not match its dimensions");
  for (double v : pixels_)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw ArgumentError("image values must be finite and within [0, 1]");
}

Mat ImageTensor::patchify(int patch) const {
  if (patch <= 0 || h_ % patch != 0 || w_ % patch != 0)
    throw ConfigError("image " + std::to_string(h_) + "x" + std::to_string(w_) +
                      " is not divisible by patch size " + std::to_string(patch));
  const int ph = h_ / patch, pw = w_ / patch;
  Mat out(ph * pw, patch * patch * c_);
  for (int py = 0; py < ph; ++py)
    for (int px = 0; px < pw; ++px) {
      Eigen::Index col = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int ch = 0; ch < c_; ++ch)
            out(py * pw + px, col++) = at(py * patch + y, px * patch + x, ch);
    }
  return out;
}

void quantize8(ImageTensor& img) {
  for (double& v : img.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

void write_ppm(const ImageTensor& img, const std::filesystem::path& path) {
  if (img.channels() != 3) throw ArgumentError("PPM output needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  std::string bytes(img.data().size(), '\0');
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<char>(
        static_cast<unsigned char>(std::lround(std::clamp(img.data()[i], 0.0, 1.0) * 255.0)));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read image " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError("unsupported PPM header in " + path.string());
  in.get();
  ImageTensor img(h, w, 3);
  std::string bytes(img.data().size(), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw FormatError("truncated PPM " + path.string());
  for (size_t i = 0; i < bytes.size(); ++i)
    img.data()[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return img;
}

}  // namespace vislex
