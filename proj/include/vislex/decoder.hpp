#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/checkpoint.hpp"
#include "vislex/encoder.hpp"
#include "vislex/transformer.hpp"
#include "vislex/vocab.hpp"

namespace vislex {

struct DecoderConfig {
  int vocab_size = 0;
  int dim = 48;
  int layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int max_context = 64;
  int memory_tokens = 17;

  void validate() const;
  nlohmann::json to_json() const;
  static DecoderConfig from_json(const nlohmann::json& j);
};

/// Memory tokens consumed by the decoder's cross-attention, M x D_dec.
struct MappedEmbedding {
  Mat tokens;
};

/// Teacher-forcing batch: inputs [BOS w1..wn] and targets [w1..wn EOS],
/// right-padded; padded target positions are -1.
struct LmBatch {
  std::vector<int> inputs;
  std::vector<int> targets;
  int batch = 0;
  int length = 0;
};
LmBatch make_lm_batch(std::span<const TokenSequence* const> seqs);

class TextDecoder;

/// Incremental (KV-cached) inference over one memory. Cheap to create;
/// holds a pointer to the decoder, which must outlive it.
class DecoderSession {
 public:
  DecoderSession(const TextDecoder& dec, const MappedEmbedding* memory);
  /// Feeds the token at the next position; returns next-token probabilities.
  RowVec step(int token);
  int length() const { return pos_; }

 private:
  const TextDecoder* dec_;
  std::vector<Mat> self_k_, self_v_, cross_k_, cross_v_;
  int pos_ = 0;
};

/// Small causal transformer LM with cross-attention over memory tokens.
/// Pretraining substitutes a learned null memory for the missing image input.
class TextDecoder {
 public:
  TextDecoder(DecoderConfig cfg, std::uint64_t seed);

  const DecoderConfig& config() const { return cfg_; }

  /// Logits (B*T x V). `memory` is (B*M x D) or an invalid Var for the null memory.
  Var forward(Tape& tape, const std::vector<Var>& bound, std::span<const int> ids, int batch,
              int length, Var memory) const;

  /// Next-token distribution for `prefix` (must start with BOS).
  RowVec decode_step(const MappedEmbedding& memory, const TokenSequence& prefix) const;
  DecoderSession session(const MappedEmbedding* memory) const { return DecoderSession(*this, memory); }

  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  void freeze() { params_.freeze(); }
  bool frozen() const { return params_.frozen(); }
  std::string digest() const { return params_.digest(); }

  ModelCheckpoint to_checkpoint(const std::string& vocab_hash) const;
  static TextDecoder from_checkpoint(const ModelCheckpoint& ckpt);

 private:
  friend class DecoderSession;
  DecoderConfig cfg_;
  ParameterSet params_;
  size_t tok_ = 0, pos_ = 0, null_memory_ = 0;
  NormIdx ln_final_;
  LinearIdx out_;
  struct Block {
    NormIdx ln1, ln2, ln3;
    AttentionIdx self_attn;
    LinearIdx cross_q, cross_k;  // cross-attention values are the memory itself
    MlpIdx mlp;
  };
  std::vector<Block> blocks_;
};

struct DecoderTrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double lr = 2e-3;
  std::uint64_t seed = 0;
};

struct DecoderTrainResult {
  TrainCurve curve;
  std::vector<std::string> warnings;
};

/// Language-model training on text alone (null memory).
DecoderTrainResult pretrain_decoder(TextDecoder& model, const std::vector<std::string>& corpus,
                                    const Vocabulary& vocab, const DecoderTrainConfig& cfg);

/// Mean per-token negative log-likelihood (nats) of the sequences, each
/// scored with its EOS, under the null memory.
double mean_nll(const TextDecoder& model, std::span<const TokenSequence> seqs);

}  // namespace vislex
