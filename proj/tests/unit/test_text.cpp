#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vislex/explainer.hpp"
#include "vislex/vocab.hpp"

using namespace vislex;

TEST_CASE("tokenize and detokenize round trip") {
  const auto v = Vocabulary::build({"a bird", "a cat"});
  const auto seq = tokenize("a bird", v);
  CHECK(seq.ids == std::vector<int>{Vocabulary::kBos, v.id("a"), v.id("bird")});
  CHECK(detokenize(seq, v) == "a bird");
  CHECK(tokenize("a dog", v).ids[2] == Vocabulary::kUnk);
  CHECK(tokenize("", v).ids == std::vector<int>{Vocabulary::kBos});
  CHECK_THROWS_AS(tokenize("a", Vocabulary()), ConfigError);
}

TEST_CASE("vocabulary ids follow lexicographic order and survive a save/load") {
  const auto v = Vocabulary::build({"zebra apple . mango", "apple"});
  CHECK(v.size() == 8);
  CHECK(v.id(".") < v.id("apple"));
  CHECK(v.id("apple") < v.id("mango"));
  CHECK(v.id("mango") < v.id("zebra"));
  const auto path = std::filesystem::temp_directory_path() / "vislex_vocab_test.txt";
  v.save(path);
  const auto back = Vocabulary::load(path);
  CHECK(back == v);
  CHECK(back.hash() == v.hash());
  std::filesystem::remove(path);
}

TEST_CASE("split_words isolates punctuation and word_count skips it") {
  CHECK(split_words("A Bird, on water.") ==
        std::vector<std::string>{"a", "bird", ",", "on", "water", "."});
  const auto v = Vocabulary::build({"a bird , on water ."});
  CHECK(word_count(tokenize("a bird , on water .", v), v) == 4);
}

TEST_CASE("nucleus_filter keeps the smallest prefix reaching top_p") {
  const std::vector<double> d{0.5, 0.3, 0.15, 0.05};
  const auto f = nucleus_filter(d, 0.95);
  CHECK(f[0] == doctest::Approx(0.5 / 0.95));
  CHECK(f[1] == doctest::Approx(0.3 / 0.95));
  CHECK(f[2] == doctest::Approx(0.15 / 0.95));
  CHECK(f[3] == 0.0);
  CHECK(nucleus_filter(d, 1.0) == d);
  const std::vector<double> one{0.0, 1.0, 0.0};
  for (double p : {0.01, 0.5, 1.0}) CHECK(nucleus_filter(one, p) == one);
  // Ties keep the lower id.
  const auto t = nucleus_filter(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 0.3);
  CHECK(t == std::vector<double>{0.5, 0.5, 0.0, 0.0});
}

TEST_CASE("nucleus_filter rejects non-simplex input") {
  CHECK_THROWS_AS(nucleus_filter(std::vector<double>{0.5, 0.4}, 0.9), ArgumentError);
  CHECK_THROWS_AS(nucleus_filter(std::vector<double>{1.5, -0.5}, 0.9), ArgumentError);
  CHECK_THROWS_AS(nucleus_filter(std::vector<double>{}, 0.9), ArgumentError);
  CHECK_THROWS_AS(nucleus_filter(std::vector<double>{1.0}, 0.0), ArgumentError);
}

TEST_CASE("sample_token on a one-hot always returns that token") {
  Rng rng(3);
  const std::vector<double> one{0.0, 0.0, 1.0};
  for (int i = 0; i < 1000; ++i) CHECK(sample_token(one, rng) == 2);
}

TEST_CASE("sample_token frequencies converge to the renormalised nucleus") {
  const auto f = nucleus_filter(std::vector<double>{0.5, 0.3, 0.15, 0.05}, 0.95);
  Rng rng(11);
  std::vector<long> hits(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++hits[static_cast<size_t>(sample_token(f, rng))];
  CHECK(hits[3] == 0);
  for (size_t k = 0; k < 3; ++k) CHECK(std::abs(static_cast<double>(hits[k]) / n - f[k]) < 0.01);
}

TEST_CASE("word_profile counts content words") {
  const std::vector<std::string> s{"a bird on water", "water near a bird", "the water is blue"};
  const StopwordSet stop{"a", "on", "near", "the", "is"};
  const auto p = word_profile(s, stop, 1);
  CHECK(p.counts == std::map<std::string, long>{{"water", 3}, {"bird", 2}, {"blue", 1}});
  CHECK(p.ranked == std::vector<std::string>{"water", "bird", "blue"});
  CHECK(p.total == 6);
  CHECK(word_profile(std::vector<std::string>{}, stop, 1).empty());
  CHECK(word_profile(std::vector<std::string>{"a the on", "is near"}, stop, 1).empty());
  CHECK(word_profile(s, stop, 2).ranked == std::vector<std::string>{"water", "bird"});
  CHECK_THROWS_AS(word_profile(s, stop, 0), ArgumentError);

  const auto top = dominant_words(p, 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0] == std::pair<std::string, long>{"water", 3});
  CHECK(dominant_words(WordFrequencyProfile{}, 3).empty());
}

TEST_CASE("aggregate_class adds counts") {
  WordFrequencyProfile a, b;
  a.counts = {{"a", 1}};
  a.rerank();
  b.counts = {{"a", 2}, {"b", 1}};
  b.rerank();
  const std::vector<WordFrequencyProfile> both{a, b};
  const auto sum = aggregate_class(both);
  CHECK(sum.counts == std::map<std::string, long>{{"a", 3}, {"b", 1}});
  const std::vector<WordFrequencyProfile> one{b};
  CHECK(aggregate_class(one) == b);
}

TEST_CASE("dominant_words breaks ties lexicographically") {
  WordFrequencyProfile p;
  p.counts = {{"y", 2}, {"x", 2}};
  p.rerank();
  CHECK(dominant_words(p, 1) == std::vector<std::pair<std::string, long>>{{"x", 2}});
}

TEST_CASE("profile json round trip") {
  WordFrequencyProfile p;
  p.counts = {{"water", 5}, {"circle", 3}};
  p.rerank();
  CHECK(WordFrequencyProfile::from_json(p.to_json()) == p);
}

TEST_CASE("default_min_count") {
  CHECK(default_min_count(30) == 2);
  CHECK(default_min_count(1000) == 5);
  CHECK(default_min_count(1001) == 6);
}

TEST_CASE("sampling config validation") {
  SamplingConfig c;
  CHECK(c.top_p == 0.95);
  CHECK(c.n_samples == 1000);
  CHECK(c.min_len == 20);
  CHECK(c.max_len == 30);
  c.min_len = 31;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("stopword files skip comments and blanks") {
  const auto path = std::filesystem::temp_directory_path() / "vislex_stop_test.txt";
  {
    std::ofstream out(path);
    out << "# comment\nthe\n\nA\n";
  }
  CHECK(load_stopwords(path) == StopwordSet{"a", "the"});
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_stopwords(path), FormatError);
}
