#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/rng.hpp"
#include "vislex/translator.hpp"

namespace vislex {

struct SamplingConfig {
  double top_p = 0.95;
  int n_samples = 1000;
  int min_len = 20;
  int max_len = 30;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SamplingConfig from_json(const nlohmann::json& j);
};

struct ExplanationSet {
  std::string source_id;
  SamplingConfig config;
  std::vector<TokenSequence> sequences;
  std::vector<std::string> sentences;

  /// Header line (JSON) followed by one sentence per line.
  void save(const std::filesystem::path& path) const;
  static ExplanationSet load(const std::filesystem::path& path, const Vocabulary& vocab);
};

using StopwordSet = std::set<std::string, std::less<>>;

/// Built-in English function-word list.
const StopwordSet& default_stopwords();
/// One word per line; blank lines and lines starting with '#' are ignored.
StopwordSet load_stopwords(const std::filesystem::path& path);

struct WordFrequencyProfile {
  std::map<std::string, long> counts;
  long total = 0;
  std::vector<std::string> ranked;  // count desc, then word asc

  bool empty() const { return counts.empty(); }
  /// Recomputes total and ranked from counts.
  void rerank();
  /// Array of {word, count, frequency} in rank order.
  nlohmann::json to_json() const;
  static WordFrequencyProfile from_json(const nlohmann::json& j);
  bool operator==(const WordFrequencyProfile&) const = default;
};

/// Zeroes everything outside the nucleus (smallest highest-probability prefix
/// with cumulative mass >= top_p) and renormalises. Ties in probability keep
/// the lower token id first.
std::vector<double> nucleus_filter(std::span<const double> dist, double top_p);
int sample_token(std::span<const double> filtered, Rng& rng);

/// Autoregressive nucleus sampling under a frozen decoder. EOS is masked until
/// min_len words exist; generation stops at max_len words. Reserved markers
/// other than EOS are never emitted.
TokenSequence generate_sentence(const TextDecoder& decoder, const Vocabulary& vocab,
                                const MappedEmbedding& memory, const SamplingConfig& cfg, Rng& rng);

/// Translates once, then draws cfg.n_samples independent sentences; sentence i
/// uses a seed derived from (cfg.seed, i), so output is independent of `threads`.
ExplanationSet explain(const FeatureEmbedding& feature, const Translator& translator,
                       const TextDecoder& decoder, const Vocabulary& vocab,
                       const SamplingConfig& cfg, std::string source_id = "", int threads = 1);

/// Lowercased word counts over all sentences, stopwords and punctuation
/// dropped, words with count < min_count removed.
WordFrequencyProfile word_profile(const ExplanationSet& set, const StopwordSet& stopwords,
                                  long min_count);
WordFrequencyProfile word_profile(std::span<const std::string> sentences,
                                  const StopwordSet& stopwords, long min_count);
/// Drops words below min_count and reranks.
WordFrequencyProfile apply_min_count(WordFrequencyProfile profile, long min_count);
WordFrequencyProfile aggregate_class(std::span<const WordFrequencyProfile> profiles);
std::vector<std::pair<std::string, long>> dominant_words(const WordFrequencyProfile& profile, int k);

/// max(2, ceil(0.5% of n_samples)).
long default_min_count(int n_samples);

}  // namespace vislex
