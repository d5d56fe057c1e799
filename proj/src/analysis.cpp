#include "vislex/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace vislex {

nlohmann::json SpuriousReport::to_json() const {
  nlohmann::json top = nlohmann::json::array();
  for (const auto& [w, c] : top_non_class) top.push_back({{"word", w}, {"count", c}});
  return {{"label", label},
          {"class_terms", class_terms},
          {"dominant_word", dominant_word},
          {"first_class_term_rank",
           first_class_term_rank ? nlohmann::json(*first_class_term_rank) : nlohmann::json(nullptr)},
          {"top_non_class", top},
          {"flagged", flagged}};
}

SpuriousReport detect_spurious(const WordFrequencyProfile& profile, const TermSet& class_terms,
                               std::string label) {
  if (class_terms.empty()) throw ArgumentError("detect_spurious: empty class-term set");
  SpuriousReport r;
  r.label = std::move(label);
  r.class_terms = class_terms;
  for (size_t i = 0; i < profile.ranked.size(); ++i) {
    const auto& w = profile.ranked[i];
    if (class_terms.contains(w)) {
      if (!r.first_class_term_rank) r.first_class_term_rank = i + 1;
    } else if (r.top_non_class.size() < 10) {
      r.top_non_class.emplace_back(w, profile.counts.at(w));
    }
  }
  if (!profile.ranked.empty()) {
    r.dominant_word = profile.ranked.front();
    r.flagged = !class_terms.contains(r.dominant_word);
  }
  return r;
}

nlohmann::json ShiftReport::to_json() const {
  nlohmann::json d = nlohmann::json::array();
  for (const auto& s : deltas)
    d.push_back({{"word", s.word}, {"freq_p", s.freq_p}, {"freq_q", s.freq_q}, {"delta", s.delta}});
  return {{"divergence", divergence}, {"deltas", d}, {"only_in_p", only_in_p}, {"only_in_q", only_in_q}};
}

double jensen_shannon(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ArgumentError("jensen_shannon: length mismatch");
  double sp = 0.0, sq = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw ArgumentError("jensen_shannon: negative weight");
    sp += p[i];
    sq += q[i];
  }
  if (sp <= 0.0 || sq <= 0.0) throw ArgumentError("jensen_shannon: empty distribution");
  double js = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double a = p[i] / sp, b = q[i] / sq, m = 0.5 * (a + b);
    if (a > 0.0) js += 0.5 * a * std::log2(a / m);
    if (b > 0.0) js += 0.5 * b * std::log2(b / m);
  }
  return std::clamp(js, 0.0, 1.0);
}

ShiftReport compare_profiles(const WordFrequencyProfile& p, const WordFrequencyProfile& q) {
  if (p.total <= 0 && q.total <= 0) throw ArgumentError("compare_profiles: both profiles are empty");
  ShiftReport r;
  std::set<std::string> vocab;
  for (const auto& [w, c] : p.counts) vocab.insert(w);
  for (const auto& [w, c] : q.counts) vocab.insert(w);
  std::vector<double> pv, qv;
  for (const auto& w : vocab) {
    const auto ip = p.counts.find(w);
    const auto iq = q.counts.find(w);
    const double cp = ip == p.counts.end() ? 0.0 : static_cast<double>(ip->second);
    const double cq = iq == q.counts.end() ? 0.0 : static_cast<double>(iq->second);
    pv.push_back(cp);
    qv.push_back(cq);
    WordShift s;
    s.word = w;
    s.freq_p = p.total > 0 ? cp / static_cast<double>(p.total) : 0.0;
    s.freq_q = q.total > 0 ? cq / static_cast<double>(q.total) : 0.0;
    s.delta = s.freq_q - s.freq_p;
    r.deltas.push_back(s);
    if (cp > 0.0 && cq == 0.0) r.only_in_p.push_back(w);
    if (cq > 0.0 && cp == 0.0) r.only_in_q.push_back(w);
  }
  std::stable_sort(r.deltas.begin(), r.deltas.end(), [](const WordShift& a, const WordShift& b) {
    return std::abs(a.delta) > std::abs(b.delta);
  });
  // One side empty: the supports are disjoint by definition.
  r.divergence = (p.total <= 0 || q.total <= 0) ? 1.0 : jensen_shannon(pv, qv);
  return r;
}

nlohmann::json Selection::to_json() const {
  return {{"ids", ids}, {"fraction", fraction}, {"selected", ids.size()}, {"total", total}};
}

Selection select_problematic(const std::vector<SampleProfile>& samples,
                             const std::map<int, TermSet>& class_terms) {
  Selection sel;
  sel.total = samples.size();
  for (const auto& s : samples) {
    const auto it = class_terms.find(s.label);
    if (it == class_terms.end())
      throw ArgumentError("select_problematic: no class terms for label " + std::to_string(s.label));
    if (detect_spurious(s.profile, it->second).flagged) sel.ids.push_back(s.id);
  }
  sel.fraction = samples.empty() ? 0.0
                                 : static_cast<double>(sel.ids.size()) / static_cast<double>(samples.size());
  return sel;
}

}  // namespace vislex
