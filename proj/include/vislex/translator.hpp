#pragma once

#include <string>
#include <vector>

#include "vislex/decoder.hpp"
#include "vislex/encoder.hpp"

namespace vislex {

/// Row-major flattening of a FeatureEmbedding, length (P+1)*D.
struct FlatFeature {
  RowVec values;
};

FlatFeature flatten(const FeatureEmbedding& z);
FeatureEmbedding unflatten(const FlatFeature& f, int tokens, int dim);

struct TranslatorConfig {
  int tokens = 17;       // P+1
  int feature_dim = 32;  // D of the encoder
  int decoder_dim = 48;  // D of the decoder memory
  int hidden = 0;        // 0: input / 4
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  int input_dim() const { return tokens * feature_dim; }
  int output_dim() const { return tokens * decoder_dim; }
  int hidden_dim() const { return hidden > 0 ? hidden : std::max(1, input_dim() / 4); }
  nlohmann::json to_json() const;
  static TranslatorConfig from_json(const nlohmann::json& j);
};

/// affine -> batchnorm -> relu, twice, then a final affine reshaped to
/// (P+1) x D_dec memory tokens. The only trainable component of the pipeline.
class Translator {
 public:
  Translator(TranslatorConfig cfg, std::uint64_t seed);

  const TranslatorConfig& config() const { return cfg_; }

  /// Inference mode (running statistics); deterministic.
  MappedEmbedding translate(const FlatFeature& z_in) const;

  /// Records the forward pass for a (B x input_dim) batch. Training mode uses
  /// batch statistics and, when `update_running` is set, updates the running
  /// statistics. Returns (B*(P+1)) x D_dec.
  Var forward(Tape& tape, const std::vector<Var>& bound, Var flat, bool training,
              bool update_running);

  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  const RowVec& running_mean(int layer) const { return running_mean_[static_cast<size_t>(layer)]; }
  const RowVec& running_var(int layer) const { return running_var_[static_cast<size_t>(layer)]; }

  /// Checkpoint records the (P+1, D, D_dec) triple alongside the tensors.
  ModelCheckpoint to_checkpoint() const;
  /// Refuses to load when the recorded triple disagrees with the endpoints.
  static Translator from_checkpoint(const ModelCheckpoint& ckpt, const EncoderConfig& enc,
                                    const DecoderConfig& dec);

  bool operator==(const Translator& o) const;

 private:
  Var forward_impl(Tape& t, const std::vector<Var>& p, Var flat, bool training,
                   std::vector<RowVec>* batch_means, std::vector<RowVec>* batch_vars) const;

  TranslatorConfig cfg_;
  ParameterSet params_;
  LinearIdx fc_[3];
  NormIdx bn_[2];
  std::vector<RowVec> running_mean_, running_var_;
};

/// Mean teacher-forced next-token cross entropy of `gold` under the frozen
/// decoder given `memory`. Pad positions are excluded.
double lm_loss(const TextDecoder& decoder, const MappedEmbedding& memory, const TokenSequence& gold);

struct CaptionedImage {
  ImageTensor image;
  std::string caption;
};

struct TrainingStage {
  std::string name;
  std::vector<CaptionedImage> pairs;
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 64;
};

struct StageMarker {
  std::string name;
  size_t first_step = 0;
  size_t first_epoch = 0;
};

struct TrainingHistory {
  std::vector<size_t> step;
  std::vector<double> step_loss;
  std::vector<double> heldout_loss;
  std::vector<double> heldout_token_accuracy;
  std::vector<StageMarker> stages;
  double initial_train_loss = 0.0;
  double stage1_train_loss = 0.0;
  bool failed = false;  // stage-1 training loss did not drop below initialisation

  nlohmann::json to_json() const;
};

struct HeldoutScore {
  double loss = 0.0;
  double token_accuracy = 0.0;
};

/// Teacher-forced loss and argmax token accuracy (EOS included, pad excluded).
HeldoutScore evaluate_translator(const Translator& translator, const TextDecoder& decoder,
                                 const std::vector<FlatFeature>& features,
                                 const std::vector<TokenSequence>& gold);

/// Trains only the translator. Both endpoints must be frozen; their digests
/// are re-checked after training. Each stage gets a fresh optimizer.
TrainingHistory train_translator(Translator& translator, const VisionEncoder& encoder,
                                 const TextDecoder& decoder, const Vocabulary& vocab,
                                 const std::vector<TrainingStage>& stages,
                                 const std::vector<CaptionedImage>& heldout, std::uint64_t seed);

}  // namespace vislex
