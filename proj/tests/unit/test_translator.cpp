#include <doctest.h>

#include <cmath>

#include "../support/toy.hpp"
#include "vislex/translator.hpp"

using namespace vislex;

namespace {

size_t index_of(const ParameterSet& ps, const std::string& name) {
  for (size_t i = 0; i < ps.size(); ++i)
    if (ps[i].name == name) return i;
  FAIL("no parameter " << name);
  return 0;
}

// Decoder whose next-token distribution ignores context: lm_head weights are
// zero and the bias holds the desired log-probabilities.
TextDecoder constant_decoder(const std::vector<double>& probs) {
  DecoderConfig c;
  c.vocab_size = static_cast<int>(probs.size());
  c.dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.max_context = 8;
  c.memory_tokens = 2;
  TextDecoder dec(c, 1);
  dec.params().mutable_at(index_of(dec.params(), "lm_head.w")).value.setZero();
  auto& b = dec.params().mutable_at(index_of(dec.params(), "lm_head.b")).value;
  for (size_t i = 0; i < probs.size(); ++i) b(0, static_cast<Eigen::Index>(i)) = std::log(probs[i]);
  dec.freeze();
  return dec;
}

}  // namespace

TEST_CASE("flatten is row-major") {
  FeatureEmbedding z{Mat(2, 3)};
  z.tokens << 1, 2, 3, 4, 5, 6;
  const auto f = flatten(z);
  CHECK(f.values.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(f.values(i) == i + 1);
  CHECK(unflatten(f, 2, 3).tokens == z.tokens);
  CHECK(flatten(FeatureEmbedding{Mat::Zero(4, 5)}).values.isZero());
  TranslatorConfig vit_base;
  vit_base.tokens = 577;
  vit_base.feature_dim = 768;
  CHECK(vit_base.input_dim() == 443136);
}

TEST_CASE("translate output shape and determinism") {
  TranslatorConfig c;
  Translator tr(c, 3);
  Rng rng(1);
  const FlatFeature f{random_normal(1, c.input_dim(), 1.0, rng)};
  const auto a = tr.translate(f);
  CHECK(a.tokens.rows() == 17);
  CHECK(a.tokens.cols() == 48);
  CHECK(tr.translate(f).tokens == a.tokens);
  CHECK_THROWS_AS(tr.translate(FlatFeature{RowVec::Zero(5)}), ConfigError);
}

TEST_CASE("translator gradients match finite differences") {
  TranslatorConfig tiny;
  tiny.tokens = 2;
  tiny.feature_dim = 2;
  tiny.decoder_dim = 4;
  tiny.hidden = 2;
  const auto small = testing::translator_gradcheck(tiny, 1);
  CHECK(small.parameters <= 64);
  CHECK(small.max_relative_error < 1e-4);

  TranslatorConfig ten = tiny;
  ten.hidden = 10;
  const auto wide = testing::translator_gradcheck(ten, 2);
  MESSAGE("max relative error " << small.max_relative_error << ", " << wide.max_relative_error);
  CHECK(wide.max_relative_error < 1e-4);
}

TEST_CASE("lm_loss fixtures") {
  const MappedEmbedding mem{Mat::Zero(2, 8)};
  const auto uniform = constant_decoder(std::vector<double>(6, 1.0 / 6.0));
  CHECK(lm_loss(uniform, mem, TokenSequence{{0, 4, 5, 4}}) == doctest::Approx(std::log(6.0)).epsilon(1e-12));

  // Token 4 gets 0.5, EOS 0.25: gold [BOS, 4] scores 4 then EOS.
  const auto fixed = constant_decoder({1.0 / 16, 0.25, 1.0 / 16, 1.0 / 16, 0.5, 1.0 / 16});
  CHECK(lm_loss(fixed, mem, TokenSequence{{0, 4}}) ==
        doctest::Approx((std::log(2.0) + std::log(4.0)) / 2.0).epsilon(1e-12));
  CHECK(lm_loss(fixed, mem, TokenSequence{{0, 4, Vocabulary::kEos}}) ==
        doctest::Approx((std::log(2.0) + std::log(4.0)) / 2.0).epsilon(1e-12));

  std::vector<double> eos_certain(6, 1e-300);
  eos_certain[Vocabulary::kEos] = 1.0;
  const auto certain = constant_decoder(eos_certain);
  CHECK(lm_loss(certain, mem, TokenSequence{{0, Vocabulary::kEos}}) == doctest::Approx(0.0));

  CHECK_THROWS_AS(lm_loss(uniform, mem, TokenSequence{{0}}), ArgumentError);
  CHECK_THROWS_AS(lm_loss(uniform, mem, TokenSequence{{4, 5}}), ArgumentError);
}

namespace {

struct Stack {
  VisionEncoder encoder;
  TextDecoder decoder;
  Vocabulary vocab;
};

Stack small_stack(std::uint64_t seed) {
  EncoderConfig ec;
  ec.image_size = 16;
  ec.dim = 8;
  VisionEncoder enc(ec, seed);
  const auto vocab = Vocabulary::build({"a red square", "a blue square"});
  DecoderConfig dc;
  dc.vocab_size = vocab.size();
  dc.dim = 8;
  dc.layers = 1;
  dc.heads = 2;
  dc.max_context = 8;
  dc.memory_tokens = ec.tokens();
  return Stack{enc, TextDecoder(dc, seed + 1), vocab};
}

std::vector<CaptionedImage> pairs(int n) {
  std::vector<CaptionedImage> out;
  for (int i = 0; i < n; ++i) {
    ImageTensor img(16, 16, 3, i % 2 ? 0.9 : 0.1);
    out.push_back({img, i % 2 ? "a red square" : "a blue square"});
  }
  return out;
}

TranslatorConfig matching(const Stack& s) {
  TranslatorConfig c;
  c.tokens = s.encoder.config().tokens();
  c.feature_dim = s.encoder.config().dim;
  c.decoder_dim = s.decoder.config().dim;
  return c;
}

}  // namespace

TEST_CASE("train_translator leaves frozen endpoints untouched and learns") {
  auto s = small_stack(4);
  s.encoder.freeze();
  s.decoder.freeze();
  const auto enc_digest = s.encoder.digest(), dec_digest = s.decoder.digest();
  Translator tr(matching(s), 9);
  const auto before = tr.params().flatten();

  const std::vector<TrainingStage> none{{"generic", pairs(16), 0, 1e-3, 8}};
  const auto idle = train_translator(tr, s.encoder, s.decoder, s.vocab, none, {}, 1);
  CHECK(tr.params().flatten() == before);
  CHECK_FALSE(idle.failed);

  const std::vector<TrainingStage> stages{{"generic", pairs(32), 30, 1e-2, 8}, {"task", pairs(16), 2, 1e-3, 8}};
  const auto hist = train_translator(tr, s.encoder, s.decoder, s.vocab, stages, pairs(8), 1);
  CHECK(s.encoder.digest() == enc_digest);
  CHECK(s.decoder.digest() == dec_digest);
  CHECK(hist.stages.size() == 2);
  CHECK(hist.stages[1].first_step == 4u * 30u);
  CHECK(hist.stage1_train_loss < hist.initial_train_loss);
  CHECK_FALSE(hist.failed);
  CHECK(hist.heldout_token_accuracy.size() == 32u);
}

TEST_CASE("train_translator refuses unfrozen endpoints") {
  auto s = small_stack(5);
  Translator tr(matching(s), 9);
  const std::vector<TrainingStage> stages{{"generic", pairs(16), 1, 1e-3, 8}};
  CHECK_THROWS_AS(train_translator(tr, s.encoder, s.decoder, s.vocab, stages, {}, 1), ContractViolation);
  s.encoder.freeze();
  CHECK_THROWS_AS(train_translator(tr, s.encoder, s.decoder, s.vocab, stages, {}, 1), ContractViolation);
  s.decoder.freeze();
  const std::vector<TrainingStage> tiny{{"generic", pairs(4), 1, 1e-3, 8}};
  CHECK_THROWS_AS(train_translator(tr, s.encoder, s.decoder, s.vocab, tiny, {}, 1), ArgumentError);
}

TEST_CASE("translator checkpoint records and checks its endpoint triple") {
  auto s = small_stack(6);
  Translator tr(matching(s), 2);
  const auto ck = tr.to_checkpoint();
  const auto back = Translator::from_checkpoint(ck, s.encoder.config(), s.decoder.config());
  CHECK(back == tr);
  auto other = s.decoder.config();
  other.dim = 16;
  other.heads = 2;
  CHECK_THROWS_AS(Translator::from_checkpoint(ck, s.encoder.config(), other), ConfigError);
}
