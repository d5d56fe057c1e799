#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/explainer.hpp"

namespace vislex {

using TermSet = std::set<std::string, std::less<>>;

struct SpuriousReport {
  std::string label;
  TermSet class_terms;
  std::string dominant_word;                    // empty for an empty profile
  std::optional<size_t> first_class_term_rank;  // 1-based
  std::vector<std::pair<std::string, long>> top_non_class;
  bool flagged = false;

  nlohmann::json to_json() const;
};

/// Flags the profile when its rank-1 word is not a class term. An empty
/// profile yields an unflagged, empty report.
SpuriousReport detect_spurious(const WordFrequencyProfile& profile, const TermSet& class_terms,
                               std::string label = "");

struct WordShift {
  std::string word;
  double freq_p = 0.0;
  double freq_q = 0.0;
  double delta = 0.0;  // freq_q - freq_p
};

struct ShiftReport {
  std::vector<WordShift> deltas;  // sorted by |delta| desc, then word
  double divergence = 0.0;        // Jensen-Shannon, base 2
  std::vector<std::string> only_in_p;
  std::vector<std::string> only_in_q;

  nlohmann::json to_json() const;
};

/// Jensen-Shannon divergence (base 2) between two nonnegative weight vectors,
/// each normalised by its own sum.
double jensen_shannon(const std::vector<double>& p, const std::vector<double>& q);

ShiftReport compare_profiles(const WordFrequencyProfile& p, const WordFrequencyProfile& q);

struct SampleProfile {
  std::string id;
  int label = 0;
  WordFrequencyProfile profile;
};

struct Selection {
  std::vector<std::string> ids;  // in input order
  double fraction = 0.0;
  size_t total = 0;

  nlohmann::json to_json() const;
};

/// Ids whose detect_spurious report is flagged, using each sample's class terms.
Selection select_problematic(const std::vector<SampleProfile>& samples,
                             const std::map<int, TermSet>& class_terms);

}  // namespace vislex
