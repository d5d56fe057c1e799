#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/image.hpp"
#include "vislex/manifest.hpp"
#include "vislex/rng.hpp"

namespace vislex {

struct SplitSpec {
  std::string name;
  int count = 0;
  double correlation = 0.5;     // P(background == class-matched background)
  double empty_fraction = 0.0;  // scenes with no foreground shape
};

/// Shapes-on-textures dataset where class k is paired with background k with
/// probability `correlation` and with a uniformly chosen other background otherwise.
struct SyntheticSpec {
  std::vector<std::string> shapes{"circle", "triangle"};
  std::vector<std::string> backgrounds{"water", "grass"};
  std::vector<std::string> colors{"red", "yellow", "white"};
  std::vector<SplitSpec> splits;
  int image_size = 32;
  int shape_min = 9;
  int shape_max = 13;
  double texture_noise = 0.08;
  double synonym_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<ImageTensor> images;  // parallel to manifest.records
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Names of all supported shapes and background textures.
const std::vector<std::string>& known_shapes();
const std::vector<std::string>& known_backgrounds();

ImageTensor render_background(const std::string& background, int size, double noise, Rng& rng);
/// Draws `shape` with `color` into the bbox; returns the number of pixels painted.
int draw_shape(ImageTensor& img, const std::string& shape, const std::string& color,
               const BBox& bbox);
std::array<double, 3> color_rgb(const std::string& color);

std::string caption_for(const std::string& shape, const std::string& color,
                        const std::string& background, double synonym_rate, Rng& rng);
std::string empty_caption_for(const std::string& background);

/// Replaces every bbox pixel with the background region tiled from its
/// top-left corner. Other pixels are untouched. The regions must be disjoint
/// and inside the image; an empty bbox returns the image unchanged.
ImageTensor occlude_foreground(const ImageTensor& image, const BBox& bbox, const BBox& background_region);
/// Largest bbox-sized (or smaller) region in the widest strip beside the bbox.
BBox background_region_for(const BBox& bbox, int height, int width);

}  // namespace vislex
