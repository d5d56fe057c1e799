#pragma once

#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/checkpoint.hpp"
#include "vislex/image.hpp"
#include "vislex/transformer.hpp"

namespace vislex {

struct EncoderConfig {
  int image_size = 32;
  int channels = 3;
  int patch = 8;
  int dim = 32;
  int layers = 2;
  int heads = 2;
  int mlp_ratio = 4;
  int num_classes = 2;

  int grid() const { return image_size / patch; }
  int patches() const { return grid() * grid(); }
  int tokens() const { return patches() + 1; }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Penultimate-layer token matrix, (P+1) x D; row 0 is the summary token.
struct FeatureEmbedding {
  Mat tokens;
};

struct ClassPrediction {
  std::vector<double> probabilities;
  std::vector<std::pair<int, double>> top_k;
};

/// Patch-embedding transformer with a learnable summary token and a linear
/// classification head on that token.
class VisionEncoder {
 public:
  VisionEncoder(EncoderConfig cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  FeatureEmbedding encode(const ImageTensor& image) const;
  std::vector<FeatureEmbedding> encode_batch(std::span<const ImageTensor> images) const;
  ClassPrediction classify(const ImageTensor& image, int k) const;
  /// Argmax labels for a batch of images.
  std::vector<int> predict(std::span<const ImageTensor> images, int batch_size = 64) const;

  struct Forward {
    Var features;         // (B*(P+1)) x D
    Var logits;           // B x K
    Var last_block_input; // (B*(P+1)) x D, gradient-tracked when requested
  };
  /// Records a forward pass. `bound` comes from params().bind().
  Forward forward(Tape& tape, const std::vector<Var>& bound, std::span<const ImageTensor> images,
                  bool track_last_block = false) const;

  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  void freeze() { params_.freeze(); }
  bool frozen() const { return params_.frozen(); }
  std::string digest() const { return params_.digest(); }

  /// Unfrozen copy with identical parameters.
  VisionEncoder thawed_copy() const;

  ModelCheckpoint to_checkpoint() const;
  static VisionEncoder from_checkpoint(const ModelCheckpoint& ckpt);

 private:
  void check_image(const ImageTensor& img) const;

  EncoderConfig cfg_;
  ParameterSet params_;
  LinearIdx patch_embed_, head_;
  size_t cls_ = 0, pos_ = 0;
  struct Block {
    NormIdx ln1, ln2;
    AttentionIdx attn;
    MlpIdx mlp;
  };
  std::vector<Block> blocks_;
  NormIdx ln_final_;
};

struct ClassifierTrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainCurve {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
};

/// Cross-entropy training of encoder + head on labels only. Refuses datasets
/// with fewer than two distinct labels or labels outside [0, K).
TrainCurve pretrain_classifier(VisionEncoder& model, std::span<const ImageTensor> images,
                               std::span<const int> labels, const ClassifierTrainConfig& cfg);
/// The optimisation loop behind pretrain_classifier, without dataset checks.
TrainCurve fit_classifier(VisionEncoder& model, std::span<const ImageTensor> images,
                          std::span<const int> labels, const ClassifierTrainConfig& cfg);

}  // namespace vislex
