#pragma once

// Small helpers shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "vislex/decoder.hpp"
#include "vislex/translator.hpp"

namespace vislex::testing {

struct GradCheck {
  size_t parameters = 0;
  double max_relative_error = 0.0;
};

/// Compares translator gradients of the teacher-forced loss through a frozen
/// one-layer decoder against central finite differences. Relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradCheck translator_gradcheck(const TranslatorConfig& tc, std::uint64_t seed,
                                      double h = 1e-5, double floor = 1e-6) {
  Rng rng(seed);
  DecoderConfig dc;
  dc.vocab_size = 7;
  dc.dim = tc.decoder_dim;
  dc.layers = 1;
  dc.heads = 1;
  dc.max_context = 8;
  dc.memory_tokens = tc.tokens;
  TextDecoder dec(dc, seed + 1);
  dec.freeze();
  Translator tr(tc, seed + 2);

  const int batch = 8;
  const Mat features = random_normal(batch, tc.input_dim(), 1.0, rng);
  std::vector<TokenSequence> seqs;
  for (int i = 0; i < batch; ++i) {
    TokenSequence s{{Vocabulary::kBos}};
    const int len = 1 + static_cast<int>(uniform_index(rng, 3));
    for (int k = 0; k < len; ++k) s.ids.push_back(4 + static_cast<int>(uniform_index(rng, 3)));
    seqs.push_back(s);
  }
  std::vector<const TokenSequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  const LmBatch b = make_lm_batch(ptrs);

  auto loss = [&](bool with_grad) {
    Tape t;
    tr.params().zero_grad();
    const auto tp = tr.params().bind(t, with_grad);
    const auto dp = dec.params().bind(t);
    Var mem = tr.forward(t, tp, t.constant(features), true, false);
    Var l = softmax_cross_entropy(t, dec.forward(t, dp, b.inputs, b.batch, b.length, mem), b.targets);
    if (with_grad) t.backward(l);
    return t.value(l)(0, 0);
  };

  loss(true);
  std::vector<Mat> analytic;
  for (const auto& p : tr.params().all()) analytic.push_back(p.grad);

  GradCheck out;
  out.parameters = tr.params().scalar_count();
  auto& ps = tr.params().mutable_all();
  for (size_t i = 0; i < ps.size(); ++i) {
    for (Eigen::Index k = 0; k < ps[i].value.size(); ++k) {
      double& v = ps[i].value.data()[k];
      const double orig = v;
      v = orig + h;
      const double up = loss(false);
      v = orig - h;
      const double down = loss(false);
      v = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i].size() ? analytic[i].data()[k] : 0.0;
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      out.max_relative_error = std::max(out.max_relative_error, rel);
    }
  }
  return out;
}

}  // namespace vislex::testing
