#include <doctest.h>

#include <filesystem>

#include "vislex/explainer.hpp"

using namespace vislex;

namespace {

struct Toy {
  Vocabulary vocab;
  TextDecoder decoder;
  Translator translator;
  FeatureEmbedding feature;
};

Toy toy(int max_context = 96) {
  auto vocab = Vocabulary::build({"red circle water grass sky , . triangle on the small"});
  DecoderConfig dc;
  dc.vocab_size = vocab.size();
  dc.dim = 8;
  dc.layers = 1;
  dc.heads = 2;
  dc.max_context = max_context;
  dc.memory_tokens = 3;
  TextDecoder dec(dc, 2);
  dec.freeze();
  TranslatorConfig tc;
  tc.tokens = 3;
  tc.feature_dim = 4;
  tc.decoder_dim = 8;
  Rng rng(1);
  FeatureEmbedding z{random_normal(3, 4, 1.0, rng)};
  return Toy{vocab, dec, Translator(tc, 3), z};
}

}  // namespace

TEST_CASE("generate_sentence honours the length law") {
  const auto t = toy();
  const auto mem = t.translator.translate(flatten(t.feature));
  SamplingConfig fixed;
  fixed.min_len = fixed.max_len = 5;
  SamplingConfig dflt;
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto s = generate_sentence(t.decoder, t.vocab, mem, fixed, rng);
    CHECK(word_count(s, t.vocab) == 5);
    CHECK(s.ids.front() == Vocabulary::kBos);
    CHECK(s.ids.back() == Vocabulary::kEos);
    const int n = word_count(generate_sentence(t.decoder, t.vocab, mem, dflt, rng), t.vocab);
    CHECK(n >= 20);
    CHECK(n <= 30);
  }
}

TEST_CASE("generate_sentence never emits reserved markers mid-sentence") {
  const auto t = toy();
  const auto mem = t.translator.translate(flatten(t.feature));
  Rng rng(8);
  SamplingConfig cfg;
  cfg.top_p = 1.0;
  for (int i = 0; i < 100; ++i) {
    const auto s = generate_sentence(t.decoder, t.vocab, mem, cfg, rng);
    for (size_t k = 1; k + 1 < s.ids.size(); ++k) CHECK(s.ids[k] > Vocabulary::kUnk);
  }
}

TEST_CASE("generate_sentence is seeded and overflows the context loudly") {
  const auto t = toy();
  const auto mem = t.translator.translate(flatten(t.feature));
  SamplingConfig cfg;
  Rng a(5), b(5);
  CHECK(generate_sentence(t.decoder, t.vocab, mem, cfg, a) == generate_sentence(t.decoder, t.vocab, mem, cfg, b));
  const auto small = toy(12);
  Rng c(5);
  CHECK_THROWS_AS(generate_sentence(small.decoder, small.vocab, mem, cfg, c), ContextError);
}

TEST_CASE("explain draws the requested number of sentences") {
  const auto t = toy();
  SamplingConfig cfg;
  cfg.n_samples = 1000;
  cfg.seed = 1;
  const auto big = explain(t.feature, t.translator, t.decoder, t.vocab, cfg, "x");
  CHECK(big.sentences.size() == 1000);
  CHECK(big.sequences.size() == 1000);
  cfg.n_samples = 1;
  CHECK(explain(t.feature, t.translator, t.decoder, t.vocab, cfg).sentences.size() == 1);
}

TEST_CASE("explain is seeded and independent of the thread count") {
  const auto t = toy();
  SamplingConfig cfg;
  cfg.n_samples = 40;
  cfg.seed = 10;
  const auto one = explain(t.feature, t.translator, t.decoder, t.vocab, cfg, "x", 1);
  const auto four = explain(t.feature, t.translator, t.decoder, t.vocab, cfg, "x", 4);
  CHECK(one.sentences == four.sentences);
  cfg.seed = 11;
  CHECK(explain(t.feature, t.translator, t.decoder, t.vocab, cfg).sentences != one.sentences);
}

TEST_CASE("explanation sets round trip through a file") {
  const auto t = toy();
  SamplingConfig cfg;
  cfg.n_samples = 5;
  const auto set = explain(t.feature, t.translator, t.decoder, t.vocab, cfg, "sample-1");
  const auto path = std::filesystem::temp_directory_path() / "vislex_explain_test.txt";
  set.save(path);
  const auto back = ExplanationSet::load(path, t.vocab);
  CHECK(back.source_id == "sample-1");
  CHECK(back.sentences == set.sentences);
  CHECK(back.sequences == set.sequences);
  CHECK(back.config.to_json() == cfg.to_json());
  std::filesystem::remove(path);
}
