#include <doctest.h>

#include <cmath>

#include "vislex/analysis.hpp"

using namespace vislex;

namespace {

WordFrequencyProfile profile(std::map<std::string, long> counts) {
  WordFrequencyProfile p;
  p.counts = std::move(counts);
  p.rerank();
  return p;
}

}  // namespace

TEST_CASE("detect_spurious flags a non-class dominant word") {
  const auto r = detect_spurious(profile({{"water", 500}, {"bird", 200}}), {"bird"}, "bird");
  CHECK(r.flagged);
  CHECK(r.dominant_word == "water");
  CHECK(r.first_class_term_rank == 2u);
  REQUIRE_FALSE(r.top_non_class.empty());
  CHECK(r.top_non_class[0].first == "water");

  const auto ok = detect_spurious(profile({{"bird", 500}, {"water", 200}}), {"bird"});
  CHECK_FALSE(ok.flagged);
  CHECK(ok.first_class_term_rank == 1u);

  const auto plural = detect_spurious(profile({{"birds", 5}, {"water", 2}}), {"bird", "birds"});
  CHECK_FALSE(plural.flagged);

  const auto empty = detect_spurious(WordFrequencyProfile{}, {"bird"});
  CHECK_FALSE(empty.flagged);
  CHECK(empty.dominant_word.empty());
  CHECK_THROWS_AS(detect_spurious(profile({{"a", 1}}), {}), ArgumentError);
}

TEST_CASE("compare_profiles divergence fixtures") {
  const auto p = profile({{"a", 1}});
  const auto q = profile({{"a", 1}, {"b", 1}});
  CHECK(compare_profiles(p, q).divergence == doctest::Approx(0.311278124459).epsilon(1e-9));
  CHECK(compare_profiles(q, q).divergence == 0.0);
  const auto disjoint = compare_profiles(profile({{"x", 3}}), profile({{"y", 2}}));
  CHECK(disjoint.divergence == 1.0);
  CHECK(disjoint.only_in_p == std::vector<std::string>{"x"});
  CHECK(disjoint.only_in_q == std::vector<std::string>{"y"});
  CHECK(compare_profiles(WordFrequencyProfile{}, q).divergence == 1.0);
  CHECK_THROWS_AS(compare_profiles(WordFrequencyProfile{}, WordFrequencyProfile{}), ArgumentError);
}

TEST_CASE("compare_profiles orders shifts by magnitude") {
  const auto r = compare_profiles(profile({{"bird", 6}, {"water", 4}}), profile({{"bird", 2}, {"water", 8}}));
  REQUIRE(r.deltas.size() == 2);
  CHECK(std::abs(r.deltas[0].delta) >= std::abs(r.deltas[1].delta));
  CHECK(r.deltas[0].delta == doctest::Approx(-r.deltas[1].delta));
  for (const auto& d : r.deltas) CHECK(d.delta == doctest::Approx(d.freq_q - d.freq_p));
}

TEST_CASE("select_problematic recovers a planted background-dominant subset") {
  const std::map<int, TermSet> terms{{0, {"circle", "circles"}}, {1, {"triangle"}}};
  std::vector<SampleProfile> samples;
  std::vector<std::string> planted;
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    SampleProfile s;
    s.id = "s" + std::to_string(i);
    s.label = i % 2;
    const std::string shape = s.label == 0 ? "circle" : "triangle";
    const bool bg = i % 10 < 3;
    const long a = 20 + static_cast<long>(uniform_index(rng, 20));
    const long b = a + 1 + static_cast<long>(uniform_index(rng, 10));
    s.profile = bg ? profile({{shape, a}, {"water", b}, {"red", 3}}) : profile({{shape, b}, {"water", a}, {"red", 3}});
    if (bg) planted.push_back(s.id);
    samples.push_back(std::move(s));
  }
  const auto sel = select_problematic(samples, terms);
  CHECK(sel.ids == planted);
  CHECK(sel.fraction == doctest::Approx(0.3));
  CHECK(sel.total == 200);
}

TEST_CASE("select_problematic with nothing flagged is empty") {
  std::vector<SampleProfile> samples{{"a", 0, profile({{"circle", 3}, {"water", 1}})}};
  const auto sel = select_problematic(samples, {{0, {"circle"}}});
  CHECK(sel.ids.empty());
  CHECK(sel.fraction == 0.0);
  CHECK_THROWS_AS(select_problematic(samples, {{1, {"circle"}}}), ArgumentError);
}
