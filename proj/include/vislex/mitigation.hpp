#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/encoder.hpp"
#include "vislex/image.hpp"

namespace vislex {

/// H x W map in [0, 1], max-normalised unless identically zero.
struct SaliencyMap {
  int height = 0, width = 0;
  int target_class = 0;
  std::vector<double> values;  // row-major
  bool zero = false;           // gradients vanished; map is all zeros

  double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

enum class FillPolicy { DatasetMean, Zero };
enum class MaskProvenance { Saliency, Random, BBox };

struct MaskSpec {
  int height = 0, width = 0;
  std::vector<std::uint8_t> mask;  // row-major, 0 or 1
  FillPolicy fill = FillPolicy::DatasetMean;
  std::array<double, 3> fill_value{0.0, 0.0, 0.0};  // used with DatasetMean
  MaskProvenance provenance = MaskProvenance::Saliency;

  size_t area() const;
  bool at(int y, int x) const { return mask[static_cast<size_t>(y) * width + x] != 0; }
};

/// GradCAM over the patch tokens entering the encoder's last block: channel
/// weights are patch-averaged gradients of the target logit, the weighted sum
/// is rectified, bilinearly upsampled to image resolution and max-normalised.
SaliencyMap saliency(const VisionEncoder& classifier, const ImageTensor& image, int target_class);

/// Ones where map >= threshold; threshold must be in (0, 1].
MaskSpec mask_from_saliency(const SaliencyMap& map, double threshold,
                            FillPolicy fill = FillPolicy::DatasetMean,
                            std::array<double, 3> fill_value = {0.0, 0.0, 0.0});

/// Masked pixels take the fill value on every channel; others are untouched.
ImageTensor apply_mask(const ImageTensor& image, const MaskSpec& mask);

/// Per-channel mean over a set of images.
std::array<double, 3> dataset_mean(std::span<const ImageTensor> images);

struct FinetuneConfig {
  int epochs = 3;
  double base_lr = 1e-3;
  double lr_scale = 0.1;
  int batch_size = 8;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static FinetuneConfig from_json(const nlohmann::json& j);
};

struct FinetuneResult {
  VisionEncoder model;
  TrainCurve history;
  size_t samples = 0;
};

/// Fine-tunes a thawed copy of `classifier` on the masked samples only, at
/// base_lr * lr_scale. The input classifier is not modified.
FinetuneResult finetune_masked(const VisionEncoder& classifier, std::span<const ImageTensor> masked,
                               std::span<const int> labels, const FinetuneConfig& cfg);

struct SubgroupAccuracy {
  int id = 0;
  std::string name;
  long count = 0;
  long correct = 0;
  double accuracy = 0.0;
};

struct SubgroupMetrics {
  std::vector<SubgroupAccuracy> groups;  // non-empty groups, by id
  std::vector<std::string> excluded;     // names of empty groups
  double worst_group = 0.0;
  double average = 0.0;  // sample-weighted
  double masked_fraction = 0.0;

  nlohmann::json to_json() const;
  static SubgroupMetrics from_json(const nlohmann::json& j);
};

/// Accuracy per subgroup id in [0, names.size()). Empty subgroups are excluded
/// and listed in `excluded`.
SubgroupMetrics eval_subgroups(const VisionEncoder& classifier, std::span<const ImageTensor> images,
                               std::span<const int> labels, std::span<const int> subgroups,
                               const std::vector<std::string>& names);

struct RandomMasked {
  size_t index = 0;  // position in the training set
  MaskSpec mask;
};

/// Uniform random subset of round(fraction * n) samples, each with a random
/// smooth blob mask covering `area_fraction` of the image.
std::vector<RandomMasked> random_mask_baseline(size_t n, double fraction, double area_fraction,
                                               int height, int width, std::uint64_t seed,
                                               FillPolicy fill = FillPolicy::DatasetMean,
                                               std::array<double, 3> fill_value = {0.0, 0.0, 0.0});

/// Column of a method comparison table; one SubgroupMetrics per seed.
struct MethodRuns {
  std::string method;
  std::vector<SubgroupMetrics> runs;
};

/// Rows: one per subgroup, Worst-group, Average, Masked Samples; cells are
/// percentages as mean, or mean ± std over runs when there are several.
std::string subgroup_table(const std::vector<MethodRuns>& methods);

}  // namespace vislex
