#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/explainer.hpp"

namespace vislex {

/// Lowercased word tokens with punctuation removed.
std::vector<std::string> metric_tokens(std::string_view text);

/// LCS-based F-measure (beta = 1) over word sequences.
double rouge_l(std::string_view candidate, std::string_view reference);

/// Exact-match unigram METEOR: recall-weighted harmonic mean
/// 10PR / (R + 9P) times (1 - 0.5 (chunks / matches)^3).
double meteor_lite(std::string_view candidate, std::string_view reference);

/// Cosine of term-frequency vectors after stopword removal. Throws when both
/// sides are empty after filtering; 0 when exactly one is.
double bow_cosine(std::string_view a, std::string_view b,
                  const StopwordSet& stopwords = default_stopwords());

struct FaithfulnessScores {
  double cosine = 0.0;
  double rouge_l = 0.0;      // [0, 1]
  double meteor_lite = 0.0;  // [0, 1]
};

struct FaithfulnessReport {
  std::map<std::string, FaithfulnessScores> per_category;
  FaithfulnessScores macro;

  nlohmann::json to_json() const;
  /// Aligned text table: Scores | Cosine similarity | ROUGE | METEOR, with
  /// ROUGE and METEOR reported x100.
  std::string table() const;
};

/// Scores each category's explanation text against its reference text.
FaithfulnessReport faithfulness_report(const std::map<std::string, std::string>& explanations,
                                       const std::map<std::string, std::string>& references);

/// Renders one aligned row in the faithfulness table layout.
std::string faithfulness_row(const std::string& name, const FaithfulnessScores& s);

}  // namespace vislex
