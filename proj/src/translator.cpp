#include "vislex/translator.hpp"

#include <algorithm>
#include <numeric>

namespace vislex {

FlatFeature flatten(const FeatureEmbedding& z) {
  require_finite(z.tokens, "flatten");
  return FlatFeature{Eigen::Map<const RowVec>(z.tokens.data(), z.tokens.size())};
}

FeatureEmbedding unflatten(const FlatFeature& f, int tokens, int dim) {
  if (f.values.size() != static_cast<Eigen::Index>(tokens) * dim)
    throw ConfigError("unflatten: length does not match tokens x dim");
  return FeatureEmbedding{Eigen::Map<const Mat>(f.values.data(), tokens, dim)};
}

nlohmann::json TranslatorConfig::to_json() const {
  return {{"tokens", tokens},   {"feature_dim", feature_dim}, {"decoder_dim", decoder_dim},
          {"hidden", hidden},   {"bn_eps", bn_eps},           {"bn_momentum", bn_momentum}};
}

TranslatorConfig TranslatorConfig::from_json(const nlohmann::json& j) {
  TranslatorConfig c;
  c.tokens = j.value("tokens", c.tokens);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.decoder_dim = j.value("decoder_dim", c.decoder_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  return c;
}

Translator::Translator(TranslatorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.tokens < 1 || cfg_.feature_dim < 1 || cfg_.decoder_dim < 1)
    throw ConfigError("translator config: dimensions must be positive");
  Rng rng(seed);
  const int in = cfg_.input_dim(), h = cfg_.hidden_dim(), out = cfg_.output_dim();
  fc_[0] = add_linear(params_, "fc1", in, h, rng, std::sqrt(2.0));
  bn_[0] = add_norm(params_, "bn1", h);
  fc_[1] = add_linear(params_, "fc2", h, h, rng, std::sqrt(2.0));
  bn_[1] = add_norm(params_, "bn2", h);
  fc_[2] = add_linear(params_, "fc3", h, out, rng);
  running_mean_.assign(2, RowVec::Zero(h));
  running_var_.assign(2, RowVec::Ones(h));
}

Var Translator::forward_impl(Tape& t, const std::vector<Var>& p, Var flat, bool training,
                             std::vector<RowVec>* means, std::vector<RowVec>* vars) const {
  const Mat& in = t.value(flat);
  if (in.cols() != cfg_.input_dim())
    throw ConfigError("translate: input length " + std::to_string(in.cols()) + " != " +
                      std::to_string(cfg_.input_dim()));
  if (training && in.rows() < 8)
    throw ArgumentError("translator training needs batches of at least 8 samples");
  Var x = flat;
  for (int l = 0; l < 2; ++l) {
    x = linear(t, p, fc_[l], x);
    if (training) {
      RowVec m, v;
      x = batch_norm_train(t, x, p[bn_[l].gamma], p[bn_[l].beta], cfg_.bn_eps, &m, &v);
      if (means) means->push_back(m);
      if (vars) vars->push_back(v);
    } else {
      x = batch_norm_infer(t, x, p[bn_[l].gamma], p[bn_[l].beta], running_mean_[static_cast<size_t>(l)],
                           running_var_[static_cast<size_t>(l)], cfg_.bn_eps);
    }
    x = relu(t, x);
  }
  x = linear(t, p, fc_[2], x);
  return reshape(t, x, t.value(x).rows() * cfg_.tokens, cfg_.decoder_dim);
}

Var Translator::forward(Tape& t, const std::vector<Var>& p, Var flat, bool training,
                        bool update_running) {
  std::vector<RowVec> means, vars;
  Var out = forward_impl(t, p, flat, training, &means, &vars);
  if (training && update_running) {
    const double m = cfg_.bn_momentum;
    const double n = static_cast<double>(t.value(flat).rows());
    for (size_t l = 0; l < 2; ++l) {
      running_mean_[l] = (1.0 - m) * running_mean_[l] + m * means[l];
      running_var_[l] = (1.0 - m) * running_var_[l] + m * vars[l] * (n / (n - 1.0));
    }
  }
  return out;
}

MappedEmbedding Translator::translate(const FlatFeature& z_in) const {
  Tape t;
  const auto p = params_.bind(t);
  Var out = forward_impl(t, p, t.constant(z_in.values), false, nullptr, nullptr);
  require_finite(t.value(out), "translate");
  return MappedEmbedding{t.value(out)};
}

ModelCheckpoint Translator::to_checkpoint() const {
  ModelCheckpoint c;
  c.kind = "translator";
  c.config = cfg_.to_json();
  c.config["triple"] = {cfg_.tokens, cfg_.feature_dim, cfg_.decoder_dim};
  c.tensors = params_.all();
  for (auto& t : c.tensors) t.grad.resize(0, 0);
  for (size_t l = 0; l < 2; ++l) {
    c.tensors.push_back(Parameter{"buffer.bn" + std::to_string(l + 1) + ".running_mean", running_mean_[l], Mat()});
    c.tensors.push_back(Parameter{"buffer.bn" + std::to_string(l + 1) + ".running_var", running_var_[l], Mat()});
  }
  c.digest = tensors_digest(c.tensors);
  c.frozen = true;
  return c;
}

Translator Translator::from_checkpoint(const ModelCheckpoint& ckpt, const EncoderConfig& enc,
                                       const DecoderConfig& dec) {
  if (ckpt.kind != "translator") throw FormatError("expected a translator checkpoint, got " + ckpt.kind);
  const auto cfg = TranslatorConfig::from_json(ckpt.config);
  if (cfg.tokens != enc.tokens() || cfg.feature_dim != enc.dim || cfg.decoder_dim != dec.dim ||
      cfg.tokens != dec.memory_tokens)
    throw ConfigError("translator checkpoint (" + std::to_string(cfg.tokens) + ", " +
                      std::to_string(cfg.feature_dim) + ", " + std::to_string(cfg.decoder_dim) +
                      ") does not match encoder/decoder (" + std::to_string(enc.tokens()) + ", " +
                      std::to_string(enc.dim) + ", " + std::to_string(dec.dim) + ")");
  Translator tr(cfg, 0);
  auto& ps = tr.params_.mutable_all();
  for (auto& p : ps) {
    const Mat& v = ckpt.tensor(p.name);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
      throw FormatError("translator tensor '" + p.name + "' has the wrong shape");
    p.value = v;
  }
  for (size_t l = 0; l < 2; ++l) {
    tr.running_mean_[l] = ckpt.tensor("buffer.bn" + std::to_string(l + 1) + ".running_mean");
    tr.running_var_[l] = ckpt.tensor("buffer.bn" + std::to_string(l + 1) + ".running_var");
  }
  return tr;
}

bool Translator::operator==(const Translator& o) const {
  return params_.flatten() == o.params_.flatten() && running_mean_ == o.running_mean_ &&
         running_var_ == o.running_var_;
}

double lm_loss(const TextDecoder& decoder, const MappedEmbedding& memory, const TokenSequence& gold) {
  if (gold.ids.empty() || gold.ids.front() != Vocabulary::kBos)
    throw ArgumentError("lm_loss: gold must start with the begin marker");
  const size_t n = gold.ids.back() == Vocabulary::kEos ? gold.ids.size() - 1 : gold.ids.size();
  if (gold.ids.size() <= 1) throw ArgumentError("lm_loss: gold contains only the begin marker");
  DecoderSession sess(decoder, &memory);
  double nll = 0.0;
  int count = 0;
  for (size_t i = 0; i < n; ++i) {
    if (gold.ids[i] == Vocabulary::kPad) break;
    const RowVec probs = sess.step(gold.ids[i]);
    const int target = i + 1 < n ? gold.ids[i + 1] : Vocabulary::kEos;
    if (target == Vocabulary::kPad) break;
    nll -= std::log(std::max(probs(target), 1e-300));
    ++count;
  }
  return nll / count;
}

nlohmann::json TrainingHistory::to_json() const {
  nlohmann::json stages_json = nlohmann::json::array();
  for (const auto& s : stages)
    stages_json.push_back({{"name", s.name}, {"first_step", s.first_step}, {"first_epoch", s.first_epoch}});
  return {{"step", step},
          {"step_loss", step_loss},
          {"heldout_loss", heldout_loss},
          {"heldout_token_accuracy", heldout_token_accuracy},
          {"stages", stages_json},
          {"initial_train_loss", initial_train_loss},
          {"stage1_train_loss", stage1_train_loss},
          {"failed", failed}};
}

HeldoutScore evaluate_translator(const Translator& translator, const TextDecoder& decoder,
                                 const std::vector<FlatFeature>& features,
                                 const std::vector<TokenSequence>& gold) {
  if (features.size() != gold.size() || features.empty())
    throw ArgumentError("evaluate_translator: need matching, nonempty features and captions");
  double nll = 0.0;
  size_t correct = 0, count = 0;
  for (size_t i = 0; i < features.size(); ++i) {
    const MappedEmbedding mem = translator.translate(features[i]);
    DecoderSession sess(decoder, &mem);
    const auto& ids = gold[i].ids;
    const size_t n = ids.back() == Vocabulary::kEos ? ids.size() - 1 : ids.size();
    for (size_t k = 0; k < n; ++k) {
      const RowVec probs = sess.step(ids[k]);
      const int target = k + 1 < n ? ids[k + 1] : Vocabulary::kEos;
      Eigen::Index arg = 0;
      probs.maxCoeff(&arg);
      correct += static_cast<int>(arg) == target;
      nll -= std::log(std::max(probs(target), 1e-300));
      ++count;
    }
  }
  return HeldoutScore{nll / static_cast<double>(count),
                      static_cast<double>(correct) / static_cast<double>(count)};
}

namespace {

// Consecutive batches of `bs`, with a trailing remainder smaller than 8 merged
// into the previous batch (batch norm needs at least 8 rows).
std::vector<std::pair<size_t, size_t>> batch_ranges(size_t n, size_t bs) {
  std::vector<std::pair<size_t, size_t>> out;
  for (size_t s = 0; s < n; s += bs) out.emplace_back(s, std::min(n, s + bs));
  if (out.size() > 1 && out.back().second - out.back().first < 8) {
    const size_t end = out.back().second;
    out.pop_back();
    out.back().second = end;
  }
  return out;
}

struct Encoded {
  std::vector<FlatFeature> features;
  std::vector<TokenSequence> captions;
};

Encoded encode_pairs(const VisionEncoder& enc, const Vocabulary& vocab,
                     const std::vector<CaptionedImage>& pairs, int max_context) {
  Encoded e;
  std::vector<ImageTensor> images;
  images.reserve(pairs.size());
  for (const auto& p : pairs) {
    images.push_back(p.image);
    TokenSequence s = tokenize(p.caption, vocab);
    if (static_cast<int>(s.ids.size()) > max_context)
      throw ContextError("caption exceeds decoder context: " + p.caption);
    e.captions.push_back(std::move(s));
  }
  for (auto& z : enc.encode_batch(images)) e.features.push_back(flatten(z));
  return e;
}

Mat stack_rows(const std::vector<FlatFeature>& f, const std::vector<size_t>& order, size_t begin,
               size_t end) {
  Mat m(static_cast<Eigen::Index>(end - begin), f.front().values.size());
  for (size_t i = begin; i < end; ++i) m.row(static_cast<Eigen::Index>(i - begin)) = f[order[i]].values;
  return m;
}

double batch_loss(Translator& tr, const TextDecoder& dec, const Encoded& data,
                  const std::vector<size_t>& order, size_t begin, size_t end, bool train_step,
                  Adam* opt) {
  std::vector<const TokenSequence*> seqs;
  for (size_t i = begin; i < end; ++i) seqs.push_back(&data.captions[order[i]]);
  const LmBatch b = make_lm_batch(seqs);
  Tape t;
  tr.params().zero_grad();
  const auto tp = tr.params().bind(t, train_step);
  const auto dp = dec.params().bind(t);
  Var mem = tr.forward(t, tp, t.constant(stack_rows(data.features, order, begin, end)), true, train_step);
  Var loss = softmax_cross_entropy(t, dec.forward(t, dp, b.inputs, b.batch, b.length, mem), b.targets);
  if (train_step) {
    t.backward(loss);
    opt->step(tr.params());
  }
  return t.value(loss)(0, 0);
}

double train_set_loss(Translator& tr, const TextDecoder& dec, const Encoded& data, size_t bs) {
  std::vector<size_t> order(data.features.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  size_t weight = 0;
  for (auto [b, e] : batch_ranges(order.size(), bs)) {
    total += batch_loss(tr, dec, data, order, b, e, false, nullptr) * static_cast<double>(e - b);
    weight += e - b;
  }
  return total / static_cast<double>(weight);
}

}  // namespace

TrainingHistory train_translator(Translator& translator, const VisionEncoder& encoder,
                                 const TextDecoder& decoder, const Vocabulary& vocab,
                                 const std::vector<TrainingStage>& stages,
                                 const std::vector<CaptionedImage>& heldout, std::uint64_t seed) {
  if (!encoder.frozen() || !decoder.frozen())
    throw ContractViolation("train_translator: encoder and decoder must be frozen");
  if (stages.empty()) throw ArgumentError("train_translator: no training stages");
  const auto& tc = translator.config();
  if (tc.tokens != encoder.config().tokens() || tc.feature_dim != encoder.config().dim ||
      tc.decoder_dim != decoder.config().dim || tc.tokens != decoder.config().memory_tokens)
    throw ConfigError("train_translator: translator dimensions do not match the endpoints");
  const std::string enc_digest = encoder.digest();
  const std::string dec_digest = decoder.digest();
  const size_t trainable = translator.params().scalar_count();

  TrainingHistory hist;
  Encoded held;
  if (!heldout.empty()) held = encode_pairs(encoder, vocab, heldout, decoder.config().max_context);

  size_t step = 0;
  for (size_t si = 0; si < stages.size(); ++si) {
    const auto& stage = stages[si];
    if (stage.pairs.size() < 8)
      throw ArgumentError("train_translator: stage '" + stage.name + "' needs at least 8 pairs");
    const Encoded data = encode_pairs(encoder, vocab, stage.pairs, decoder.config().max_context);
    const size_t bs = static_cast<size_t>(std::max(8, stage.batch_size));
    if (si == 0) hist.initial_train_loss = train_set_loss(translator, decoder, data, bs);
    hist.stages.push_back(StageMarker{stage.name, step, hist.heldout_loss.size()});
    Adam opt(stage.lr);
    Rng rng(derive_seed(seed, si));
    std::vector<size_t> order(data.features.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < stage.epochs; ++epoch) {
      for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
      for (auto [b, e] : batch_ranges(order.size(), bs)) {
        const double l = batch_loss(translator, decoder, data, order, b, e, true, &opt);
        if (!std::isfinite(l)) throw NumericError("train_translator: loss diverged");
        hist.step.push_back(step++);
        hist.step_loss.push_back(l);
      }
      if (!heldout.empty()) {
        const auto score = evaluate_translator(translator, decoder, held.features, held.captions);
        hist.heldout_loss.push_back(score.loss);
        hist.heldout_token_accuracy.push_back(score.token_accuracy);
      }
    }
    if (si == 0) {
      hist.stage1_train_loss = train_set_loss(translator, decoder, data, bs);
      hist.failed = stage.epochs > 0 && !(hist.stage1_train_loss < hist.initial_train_loss);
    }
  }
  translator.params().zero_grad();
  if (encoder.digest() != enc_digest || decoder.digest() != dec_digest)
    throw ContractViolation("train_translator: a frozen endpoint changed during training");
  if (translator.params().scalar_count() != trainable)
    throw ContractViolation("train_translator: trainable parameter count changed");
  return hist;
}

}  // namespace vislex
