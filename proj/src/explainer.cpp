#include "vislex/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

namespace vislex {

void SamplingConfig::validate() const {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ArgumentError("sampling: top_p must be in (0, 1]");
  if (n_samples < 1) throw ArgumentError("sampling: n_samples must be >= 1");
  if (min_len < 1 || min_len > max_len) throw ArgumentError("sampling: need 0 < min_len <= max_len");
}

nlohmann::json SamplingConfig::to_json() const {
  return {{"top_p", top_p}, {"n_samples", n_samples}, {"min_len", min_len},
          {"max_len", max_len}, {"seed", seed}};
}

SamplingConfig SamplingConfig::from_json(const nlohmann::json& j) {
  SamplingConfig c;
  c.top_p = j.value("top_p", c.top_p);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.min_len = j.value("min_len", c.min_len);
  c.max_len = j.value("max_len", c.max_len);
  c.seed = j.value("seed", c.seed);
  return c;
}

void ExplanationSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  nlohmann::json header = {{"format", "vislex.explanations"}, {"version", 1},
                           {"source_id", source_id},          {"config", config.to_json()},
                           {"count", sentences.size()}};
  out << header.dump() << '\n';
  for (const auto& s : sentences) out << s << '\n';
}

ExplanationSet ExplanationSet::load(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty explanation file " + path.string());
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "vislex.explanations" || header.value("version", 0) != 1)
    throw FormatError("unrecognised explanation header in " + path.string());
  ExplanationSet set;
  set.source_id = header.at("source_id").get<std::string>();
  set.config = SamplingConfig::from_json(header.at("config"));
  while (std::getline(in, line)) {
    TokenSequence seq = tokenize(line, vocab);
    seq.ids.push_back(Vocabulary::kEos);
    set.sequences.push_back(std::move(seq));
    set.sentences.push_back(line);
  }
  if (set.sentences.size() != header.at("count").get<size_t>())
    throw FormatError("explanation count mismatch in " + path.string());
  return set;
}

const StopwordSet& default_stopwords() {
  static const StopwordSet words = {
      "a",     "about", "above", "after", "again", "all",   "also",  "am",    "an",    "and",
      "any",   "are",   "around", "as",   "at",    "be",    "been",  "being", "below", "between",
      "both",  "but",   "by",    "can",   "could", "did",   "do",    "does",  "down",  "each",
      "for",   "from",  "had",   "has",   "have",  "he",    "her",   "here",  "his",   "how",
      "i",     "if",    "in",    "into",  "is",    "it",    "its",   "just",  "me",    "more",
      "most",  "my",    "near",  "no",    "nor",   "not",   "of",    "off",   "on",    "only",
      "or",    "other", "our",   "out",   "over",  "own",   "same",  "she",   "so",    "some",
      "such",  "than",  "that",  "the",   "their", "them",  "then",  "there", "these", "they",
      "this",  "those", "through", "to",  "too",   "under", "until", "up",    "very",  "was",
      "we",    "were",  "what",  "when",  "where", "which", "while", "who",   "whom",  "why",
      "will",  "with",  "would", "you",   "your"};
  return words;
}

StopwordSet load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read stopword file " + path.string());
  StopwordSet out;
  std::string line;
  while (std::getline(in, line)) {
    for (auto& w : split_words(line)) {
      if (w.starts_with('#')) break;
      out.insert(std::move(w));
    }
  }
  return out;
}

void WordFrequencyProfile::rerank() {
  total = 0;
  ranked.clear();
  for (const auto& [w, c] : counts) {
    total += c;
    ranked.push_back(w);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [this](const std::string& a, const std::string& b) {
    return counts.at(a) > counts.at(b);
  });
}

nlohmann::json WordFrequencyProfile::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& w : ranked) {
    const long c = counts.at(w);
    arr.push_back({{"word", w},
                   {"count", c},
                   {"frequency", total > 0 ? static_cast<double>(c) / static_cast<double>(total) : 0.0}});
  }
  return arr;
}

WordFrequencyProfile WordFrequencyProfile::from_json(const nlohmann::json& j) {
  WordFrequencyProfile p;
  for (const auto& e : j) p.counts[e.at("word").get<std::string>()] = e.at("count").get<long>();
  p.rerank();
  return p;
}

std::vector<double> nucleus_filter(std::span<const double> dist, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ArgumentError("nucleus_filter: top_p must be in (0, 1]");
  if (dist.empty()) throw ArgumentError("nucleus_filter: empty distribution");
  double sum = 0.0;
  for (double p : dist) {
    if (!std::isfinite(p) || p < 0.0) throw ArgumentError("nucleus_filter: input is not a simplex");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ArgumentError("nucleus_filter: input does not sum to 1");

  std::vector<size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return dist[a] > dist[b]; });
  std::vector<double> out(dist.size(), 0.0);
  double cum = 0.0;
  for (size_t i : order) {
    out[i] = dist[i];
    cum += dist[i];
    if (cum >= top_p - 1e-12) break;
  }
  for (double& p : out) p /= cum;
  return out;
}

int sample_token(std::span<const double> filtered, Rng& rng) {
  const double total = std::accumulate(filtered.begin(), filtered.end(), 0.0);
  const double u = uniform01(rng) * total;
  double cum = 0.0;
  int last = -1;
  for (size_t i = 0; i < filtered.size(); ++i) {
    if (filtered[i] <= 0.0) continue;
    cum += filtered[i];
    last = static_cast<int>(i);
    if (cum > u) return last;
  }
  if (last < 0) throw ArgumentError("sample_token: distribution has no mass");
  return last;
}

TokenSequence generate_sentence(const TextDecoder& decoder, const Vocabulary& vocab,
                                const MappedEmbedding& memory, const SamplingConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<bool> is_word(static_cast<size_t>(vocab.size()));
  for (int i = 0; i < vocab.size(); ++i) is_word[static_cast<size_t>(i)] = !is_punctuation(vocab.token(i));

  DecoderSession sess = decoder.session(&memory);
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kBos);
  int words = 0;
  std::vector<double> dist(static_cast<size_t>(vocab.size()));
  while (words < cfg.max_len) {
    const RowVec probs = sess.step(seq.ids.back());
    for (int i = 0; i < vocab.size(); ++i) dist[static_cast<size_t>(i)] = probs(i);
    dist[Vocabulary::kBos] = dist[Vocabulary::kPad] = dist[Vocabulary::kUnk] = 0.0;
    if (words < cfg.min_len) dist[Vocabulary::kEos] = 0.0;
    const double mass = std::accumulate(dist.begin(), dist.end(), 0.0);
    if (!(mass > 0.0)) throw NumericError("generate_sentence: no admissible token has mass");
    for (double& p : dist) p /= mass;
    const int tok = sample_token(nucleus_filter(dist, cfg.top_p), rng);
    if (tok == Vocabulary::kEos) break;
    seq.ids.push_back(tok);
    if (is_word[static_cast<size_t>(tok)]) ++words;
  }
  seq.ids.push_back(Vocabulary::kEos);
  return seq;
}

ExplanationSet explain(const FeatureEmbedding& feature, const Translator& translator,
                       const TextDecoder& decoder, const Vocabulary& vocab,
                       const SamplingConfig& cfg, std::string source_id, int threads) {
  cfg.validate();
  const MappedEmbedding memory = translator.translate(flatten(feature));
  ExplanationSet set;
  set.source_id = std::move(source_id);
  set.config = cfg;
  set.sequences.resize(static_cast<size_t>(cfg.n_samples));
  auto work = [&](size_t first, size_t stride) {
    for (size_t i = first; i < set.sequences.size(); i += stride) {
      Rng rng(derive_seed(cfg.seed, i));
      set.sequences[i] = generate_sentence(decoder, vocab, memory, cfg, rng);
    }
  };
  const size_t n_threads = static_cast<size_t>(std::clamp(threads, 1, cfg.n_samples));
  if (n_threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    for (size_t t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t] {
        try {
          work(t, n_threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    pool.clear();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (const auto& s : set.sequences) set.sentences.push_back(detokenize(s, vocab));
  return set;
}

WordFrequencyProfile word_profile(std::span<const std::string> sentences,
                                  const StopwordSet& stopwords, long min_count) {
  if (min_count < 1) throw ArgumentError("word_profile: min_count must be >= 1");
  WordFrequencyProfile p;
  for (const auto& s : sentences)
    for (const auto& w : split_words(s)) {
      if (is_punctuation(w) || w.starts_with('<') || stopwords.contains(w)) continue;
      ++p.counts[w];
    }
  return apply_min_count(std::move(p), min_count);
}

WordFrequencyProfile word_profile(const ExplanationSet& set, const StopwordSet& stopwords,
                                  long min_count) {
  return word_profile(set.sentences, stopwords, min_count);
}

WordFrequencyProfile apply_min_count(WordFrequencyProfile profile, long min_count) {
  if (min_count < 1) throw ArgumentError("min_count must be >= 1");
  std::erase_if(profile.counts, [min_count](const auto& kv) { return kv.second < min_count; });
  profile.rerank();
  return profile;
}

WordFrequencyProfile aggregate_class(std::span<const WordFrequencyProfile> profiles) {
  WordFrequencyProfile out;
  for (const auto& p : profiles)
    for (const auto& [w, c] : p.counts) out.counts[w] += c;
  out.rerank();
  return out;
}

std::vector<std::pair<std::string, long>> dominant_words(const WordFrequencyProfile& profile, int k) {
  if (k < 1) throw ArgumentError("dominant_words: k must be >= 1");
  std::vector<std::pair<std::string, long>> out;
  for (size_t i = 0; i < profile.ranked.size() && static_cast<int>(i) < k; ++i)
    out.emplace_back(profile.ranked[i], profile.counts.at(profile.ranked[i]));
  return out;
}

long default_min_count(int n_samples) {
  return std::max(2L, static_cast<long>(std::ceil(0.005 * n_samples)));
}

}  // namespace vislex
