#include "vislex/decoder.hpp"

#include <algorithm>
#include <numeric>

namespace vislex {

void DecoderConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("decoder config: vocabulary has no words");
  if (dim <= 0 || layers < 1 || heads < 1 || mlp_ratio < 1 || max_context < 2 || memory_tokens < 1)
    throw ConfigError("decoder config: dimensions must be positive");
  if (dim % heads != 0) throw ConfigError("decoder config: dim not divisible by heads");
}

nlohmann::json DecoderConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"dim", dim},
          {"layers", layers},         {"heads", heads},
          {"mlp_ratio", mlp_ratio},   {"max_context", max_context},
          {"memory_tokens", memory_tokens}};
}

DecoderConfig DecoderConfig::from_json(const nlohmann::json& j) {
  DecoderConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.max_context = j.value("max_context", c.max_context);
  c.memory_tokens = j.value("memory_tokens", c.memory_tokens);
  return c;
}

LmBatch make_lm_batch(std::span<const TokenSequence* const> seqs) {
  LmBatch b;
  b.batch = static_cast<int>(seqs.size());
  for (const auto* s : seqs) {
    if (s->ids.empty() || s->ids.front() != Vocabulary::kBos)
      throw ArgumentError("sequence must start with the begin marker");
    int n = static_cast<int>(s->ids.size());
    if (s->ids.back() == Vocabulary::kEos) --n;
    b.length = std::max(b.length, n);
  }
  b.inputs.assign(static_cast<size_t>(b.batch) * b.length, Vocabulary::kPad);
  b.targets.assign(b.inputs.size(), -1);
  for (int i = 0; i < b.batch; ++i) {
    const auto& ids = seqs[static_cast<size_t>(i)]->ids;
    int n = static_cast<int>(ids.size());
    if (ids.back() == Vocabulary::kEos) --n;
    for (int t = 0; t < n; ++t) {
      const size_t at = static_cast<size_t>(i) * b.length + t;
      b.inputs[at] = ids[static_cast<size_t>(t)];
      b.targets[at] = t + 1 < n ? ids[static_cast<size_t>(t + 1)] : Vocabulary::kEos;
    }
  }
  return b;
}

TextDecoder::TextDecoder(DecoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const double out_gain = 1.0 / std::sqrt(3.0 * cfg_.layers);
  tok_ = params_.add("tok_embed", random_normal(cfg_.vocab_size, cfg_.dim, 0.3, rng));
  pos_ = params_.add("pos_embed", random_normal(cfg_.max_context, cfg_.dim, 0.1, rng));
  null_memory_ = params_.add("null_memory", random_normal(cfg_.memory_tokens, cfg_.dim, 1.0, rng));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "block" + std::to_string(l);
    Block b;
    b.ln1 = add_norm(params_, pre + ".ln1", cfg_.dim);
    b.self_attn = add_attention(params_, pre + ".self", cfg_.dim, rng, out_gain);
    b.ln2 = add_norm(params_, pre + ".ln2", cfg_.dim);
    b.cross_q = add_linear(params_, pre + ".cross.q", cfg_.dim, cfg_.dim, rng);
    b.cross_k = add_linear(params_, pre + ".cross.k", cfg_.dim, cfg_.dim, rng);
    b.ln3 = add_norm(params_, pre + ".ln3", cfg_.dim);
    b.mlp = add_mlp(params_, pre + ".mlp", cfg_.dim, cfg_.dim * cfg_.mlp_ratio, rng, out_gain);
    blocks_.push_back(b);
  }
  ln_final_ = add_norm(params_, "ln_final", cfg_.dim);
  out_ = add_linear(params_, "lm_head", cfg_.dim, cfg_.vocab_size, rng);
}

Var TextDecoder::forward(Tape& t, const std::vector<Var>& p, std::span<const int> ids, int B,
                         int T, Var memory) const {
  if (static_cast<int>(ids.size()) != B * T) throw ConfigError("decoder forward: id count mismatch");
  if (T > cfg_.max_context)
    throw ContextError("sequence of " + std::to_string(T) + " tokens exceeds context " +
                       std::to_string(cfg_.max_context));
  const int M = cfg_.memory_tokens;
  if (!memory.valid()) {
    memory = add_tiled(t, t.constant(Mat::Zero(static_cast<Eigen::Index>(B) * M, cfg_.dim)),
                       p[null_memory_]);
  } else if (t.value(memory).rows() != static_cast<Eigen::Index>(B) * M ||
             t.value(memory).cols() != cfg_.dim) {
    throw ConfigError("decoder forward: memory must be (B*" + std::to_string(M) + ") x " +
                      std::to_string(cfg_.dim));
  }
  Var mem = memory;
  std::vector<int> rows(static_cast<size_t>(T));
  std::iota(rows.begin(), rows.end(), 0);
  Var x = add_tiled(t, embedding(t, p[tok_], ids), embedding(t, p[pos_], rows));
  for (const Block& blk : blocks_) {
    Var h = norm(t, p, blk.ln1, x);
    x = add(t, x, attend(t, p, blk.self_attn, h, h, B, T, T, cfg_.heads, true));
    h = norm(t, p, blk.ln2, x);
    // Memory tokens serve directly as values so the translator writes into the residual stream.
    x = add(t, x, attention(t, linear(t, p, blk.cross_q, h), linear(t, p, blk.cross_k, mem), mem, B, T, M,
                            cfg_.heads, false));
    x = add(t, x, mlp(t, p, blk.mlp, norm(t, p, blk.ln3, x)));
  }
  return linear(t, p, out_, norm(t, p, ln_final_, x));
}

DecoderSession::DecoderSession(const TextDecoder& dec, const MappedEmbedding* memory) : dec_(&dec) {
  const auto& cfg = dec.cfg_;
  const auto& ps = dec.params_;
  Mat mem;
  if (memory == nullptr) {
    mem = ps[dec.null_memory_].value;
  } else {
    if (memory->tokens.rows() != cfg.memory_tokens || memory->tokens.cols() != cfg.dim)
      throw ConfigError("memory must be " + std::to_string(cfg.memory_tokens) + " x " +
                        std::to_string(cfg.dim));
    mem = memory->tokens;
  }

  for (const auto& blk : dec.blocks_) {
    cross_k_.push_back(linear_eval(ps, blk.cross_k, mem));
    cross_v_.push_back(mem);
    self_k_.emplace_back(cfg.max_context, cfg.dim);
    self_v_.emplace_back(cfg.max_context, cfg.dim);
  }
}

namespace {

// Single-query multi-head attention over the first `n` rows of k/v.
Mat attend_one(const Mat& q, const Mat& k, const Mat& v, Eigen::Index n, int heads) {
  const Eigen::Index d = q.cols();
  const Eigen::Index dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat out(1, d);
  for (int h = 0; h < heads; ++h) {
    Mat s = (q.block(0, h * dh, 1, dh) * k.block(0, h * dh, n, dh).transpose()) * inv_sqrt;
    const Mat pr = softmax_rows(s);
    out.block(0, h * dh, 1, dh) = pr * v.block(0, h * dh, n, dh);
  }
  return out;
}

}  // namespace

RowVec DecoderSession::step(int token) {
  const auto& dec = *dec_;
  const auto& cfg = dec.cfg_;
  const auto& ps = dec.params_;
  if (pos_ >= cfg.max_context)
    throw ContextError("decoder context of " + std::to_string(cfg.max_context) + " tokens exhausted");
  if (token < 0 || token >= cfg.vocab_size) throw ArgumentError("token id out of range");
  Mat x = ps[dec.tok_].value.row(token) + ps[dec.pos_].value.row(pos_);
  for (size_t l = 0; l < dec.blocks_.size(); ++l) {
    const auto& blk = dec.blocks_[l];
    Mat h = norm_eval(ps, blk.ln1, x);
    self_k_[l].row(pos_) = linear_eval(ps, blk.self_attn.k, h).row(0);
    self_v_[l].row(pos_) = linear_eval(ps, blk.self_attn.v, h).row(0);
    Mat q = linear_eval(ps, blk.self_attn.q, h);
    x += linear_eval(ps, blk.self_attn.o, attend_one(q, self_k_[l], self_v_[l], pos_ + 1, cfg.heads));
    h = norm_eval(ps, blk.ln2, x);
    q = linear_eval(ps, blk.cross_q, h);
    x += attend_one(q, cross_k_[l], cross_v_[l], cross_k_[l].rows(), cfg.heads);
    x += mlp_eval(ps, blk.mlp, norm_eval(ps, blk.ln3, x));
  }
  ++pos_;
  const Mat logits = linear_eval(ps, dec.out_, norm_eval(ps, dec.ln_final_, x));
  require_finite(logits, "decode_step");
  return softmax_rows(logits).row(0);
}

RowVec TextDecoder::decode_step(const MappedEmbedding& memory, const TokenSequence& prefix) const {
  if (prefix.ids.empty() || prefix.ids.front() != Vocabulary::kBos)
    throw ArgumentError("decode_step: prefix must start with the begin marker");
  if (static_cast<int>(prefix.ids.size()) > cfg_.max_context)
    throw ContextError("decode_step: prefix of " + std::to_string(prefix.ids.size()) +
                       " tokens exceeds context " + std::to_string(cfg_.max_context));
  DecoderSession s(*this, &memory);
  RowVec probs;
  for (int id : prefix.ids) probs = s.step(id);
  return probs;
}

ModelCheckpoint TextDecoder::to_checkpoint(const std::string& vocab_hash) const {
  ModelCheckpoint c;
  c.kind = "decoder";
  c.config = cfg_.to_json();
  c.config["vocab_hash"] = vocab_hash;
  c.tensors = params_.all();
  for (auto& t : c.tensors) t.grad.resize(0, 0);
  c.digest = tensors_digest(c.tensors);
  c.frozen = frozen();
  return c;
}

TextDecoder TextDecoder::from_checkpoint(const ModelCheckpoint& ckpt) {
  if (ckpt.kind != "decoder") throw FormatError("expected a decoder checkpoint, got " + ckpt.kind);
  TextDecoder dec(DecoderConfig::from_json(ckpt.config), 0);
  auto& ps = dec.params_.mutable_all();
  if (ckpt.tensors.size() != ps.size()) throw FormatError("decoder checkpoint tensor count mismatch");
  for (size_t i = 0; i < ps.size(); ++i) {
    if (ckpt.tensors[i].name != ps[i].name || ckpt.tensors[i].value.rows() != ps[i].value.rows() ||
        ckpt.tensors[i].value.cols() != ps[i].value.cols())
      throw FormatError("decoder checkpoint tensor '" + ckpt.tensors[i].name + "' does not match config");
    ps[i].value = ckpt.tensors[i].value;
  }
  if (ckpt.frozen) dec.freeze();
  return dec;
}

DecoderTrainResult pretrain_decoder(TextDecoder& model, const std::vector<std::string>& corpus,
                                    const Vocabulary& vocab, const DecoderTrainConfig& cfg) {
  if (corpus.empty()) throw ArgumentError("pretrain_decoder: empty corpus");
  if (model.frozen()) throw ContractViolation("pretrain_decoder: model is frozen");
  if (vocab.size() != model.config().vocab_size)
    throw ConfigError("pretrain_decoder: vocabulary size does not match decoder config");
  DecoderTrainResult result;
  std::vector<TokenSequence> seqs;
  size_t total_tokens = 0;
  const int ctx = model.config().max_context;
  for (const auto& line : corpus) {
    TokenSequence s = tokenize(line, vocab);
    if (static_cast<int>(s.ids.size()) > ctx) {
      result.warnings.push_back("caption truncated to context window: " + line);
      s.ids.resize(static_cast<size_t>(ctx));
    }
    total_tokens += s.ids.size();
    seqs.push_back(std::move(s));
  }
  if (total_tokens < static_cast<size_t>(ctx))
    result.warnings.push_back("corpus has " + std::to_string(total_tokens) +
                              " tokens, fewer than the context window of " + std::to_string(ctx));

  Adam opt(cfg.lr);
  Rng rng(cfg.seed);
  std::vector<size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  const size_t bs = static_cast<size_t>(std::max(1, cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double total = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t n = std::min(bs, order.size() - start);
      std::vector<const TokenSequence*> ptrs;
      for (size_t i = 0; i < n; ++i) ptrs.push_back(&seqs[order[start + i]]);
      const LmBatch b = make_lm_batch(ptrs);
      Tape t;
      model.params().zero_grad();
      const auto p = model.params().bind(t, true);
      Var logits = model.forward(t, p, b.inputs, b.batch, b.length, Var{});
      Var loss = softmax_cross_entropy(t, logits, b.targets);
      t.backward(loss);
      opt.step(model.params());
      const double l = t.value(loss)(0, 0);
      if (!std::isfinite(l)) throw NumericError("pretrain_decoder: loss diverged");
      result.curve.step_loss.push_back(l);
      total += l;
      ++batches;
    }
    result.curve.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  model.params().zero_grad();
  return result;
}

double mean_nll(const TextDecoder& model, std::span<const TokenSequence> seqs) {
  double nll = 0.0;
  size_t count = 0;
  for (const auto& s : seqs) {
    DecoderSession sess(model, nullptr);
    const size_t n = s.ids.back() == Vocabulary::kEos ? s.ids.size() - 1 : s.ids.size();
    for (size_t i = 0; i < n; ++i) {
      const RowVec probs = sess.step(s.ids[i]);
      const int target = i + 1 < n ? s.ids[i + 1] : Vocabulary::kEos;
      nll -= std::log(std::max(probs(target), 1e-300));
      ++count;
    }
  }
  if (count == 0) throw ArgumentError("mean_nll: no tokens");
  return nll / static_cast<double>(count);
}

}  // namespace vislex
