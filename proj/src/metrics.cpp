#include "vislex/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace vislex {

std::vector<std::string> metric_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (auto& w : split_words(text))
    if (!is_punctuation(w)) out.push_back(std::move(w));
  return out;
}

namespace {

std::pair<std::vector<std::string>, std::vector<std::string>> nonempty_pair(std::string_view c,
                                                                            std::string_view r,
                                                                            const char* who) {
  auto ct = metric_tokens(c);
  auto rt = metric_tokens(r);
  if (ct.empty() || rt.empty()) throw ArgumentError(std::string(who) + ": empty input");
  return {std::move(ct), std::move(rt)};
}

}  // namespace

double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto [c, r] = nonempty_pair(candidate, reference, "rouge_l");
  std::vector<std::vector<int>> dp(c.size() + 1, std::vector<int>(r.size() + 1, 0));
  for (size_t i = 1; i <= c.size(); ++i)
    for (size_t j = 1; j <= r.size(); ++j)
      dp[i][j] = c[i - 1] == r[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
  const double lcs = dp[c.size()][r.size()];
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(c.size());
  const double rec = lcs / static_cast<double>(r.size());
  return 2.0 * p * rec / (p + rec);
}

double meteor_lite(std::string_view candidate, std::string_view reference) {
  const auto [c, r] = nonempty_pair(candidate, reference, "meteor_lite");
  // Left-to-right alignment; each candidate word takes the reference
  // occurrence right after the previous match when possible (extending the
  // chunk), else the earliest unused occurrence.
  std::vector<bool> used(r.size(), false);
  std::vector<long> align(c.size(), -1);
  long prev = -2;
  for (size_t i = 0; i < c.size(); ++i) {
    long pick = -1;
    if (prev >= -1 && static_cast<size_t>(prev + 1) < r.size() && !used[static_cast<size_t>(prev + 1)] &&
        r[static_cast<size_t>(prev + 1)] == c[i])
      pick = prev + 1;
    for (size_t j = 0; pick < 0 && j < r.size(); ++j)
      if (!used[j] && r[j] == c[i]) pick = static_cast<long>(j);
    if (pick >= 0) {
      used[static_cast<size_t>(pick)] = true;
      align[i] = pick;
      prev = pick;
    } else {
      prev = -2;
    }
  }
  double matches = 0.0, chunks = 0.0;
  for (size_t i = 0; i < c.size(); ++i) {
    if (align[i] < 0) continue;
    matches += 1.0;
    if (i == 0 || align[i - 1] < 0 || align[i - 1] + 1 != align[i]) chunks += 1.0;
  }
  if (matches == 0.0) return 0.0;
  const double p = matches / static_cast<double>(c.size());
  const double rec = matches / static_cast<double>(r.size());
  const double fmean = 10.0 * p * rec / (rec + 9.0 * p);
  const double penalty = 0.5 * std::pow(chunks / matches, 3.0);
  return fmean * (1.0 - penalty);
}

double bow_cosine(std::string_view a, std::string_view b, const StopwordSet& stopwords) {
  std::map<std::string, double> va, vb;
  for (auto& w : metric_tokens(a))
    if (!stopwords.contains(w)) va[w] += 1.0;
  for (auto& w : metric_tokens(b))
    if (!stopwords.contains(w)) vb[w] += 1.0;
  if (va.empty() && vb.empty()) throw ArgumentError("bow_cosine: both inputs empty after filtering");
  if (va.empty() || vb.empty()) return 0.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [w, x] : va) {
    na += x * x;
    if (auto it = vb.find(w); it != vb.end()) dot += x * it->second;
  }
  for (const auto& [w, y] : vb) nb += y * y;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

nlohmann::json FaithfulnessReport::to_json() const {
  nlohmann::json cats = nlohmann::json::object();
  auto row = [](const FaithfulnessScores& s) {
    return nlohmann::json{{"cosine", s.cosine}, {"rouge_l", s.rouge_l * 100.0}, {"meteor", s.meteor_lite * 100.0}};
  };
  for (const auto& [k, s] : per_category) cats[k] = row(s);
  return {{"per_category", cats}, {"macro_average", row(macro)}};
}

std::string faithfulness_row(const std::string& name, const FaithfulnessScores& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-16s %18.3f %8.2f %8.2f", name.c_str(), s.cosine, s.rouge_l * 100.0,
                s.meteor_lite * 100.0);
  return buf;
}

std::string FaithfulnessReport::table() const {
  std::ostringstream out;
  char head[160];
  std::snprintf(head, sizeof(head), "%-16s %18s %8s %8s", "Scores", "Cosine similarity", "ROUGE", "METEOR");
  out << head << '\n';
  for (const auto& [k, s] : per_category) out << faithfulness_row(k, s) << '\n';
  out << faithfulness_row("Average", macro) << '\n';
  return out.str();
}

FaithfulnessReport faithfulness_report(const std::map<std::string, std::string>& explanations,
                                       const std::map<std::string, std::string>& references) {
  if (explanations.size() != references.size() || explanations.empty())
    throw ArgumentError("faithfulness_report: category sets differ or are empty");
  FaithfulnessReport rep;
  for (const auto& [k, text] : explanations) {
    const auto it = references.find(k);
    if (it == references.end()) throw ArgumentError("faithfulness_report: category '" + k + "' has no reference");
    FaithfulnessScores s{bow_cosine(text, it->second), rouge_l(text, it->second), meteor_lite(text, it->second)};
    rep.per_category[k] = s;
    rep.macro.cosine += s.cosine;
    rep.macro.rouge_l += s.rouge_l;
    rep.macro.meteor_lite += s.meteor_lite;
  }
  const double n = static_cast<double>(rep.per_category.size());
  rep.macro.cosine /= n;
  rep.macro.rouge_l /= n;
  rep.macro.meteor_lite /= n;
  return rep;
}

}  // namespace vislex
