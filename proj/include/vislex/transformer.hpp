#pragma once

#include <string>
#include <vector>

#include "vislex/params.hpp"
#include "vislex/rng.hpp"

namespace vislex {

// Building blocks shared by the image encoder and the text decoder. Each
// struct stores indices into the owning ParameterSet.

struct LinearIdx {
  size_t w = 0, b = 0;
};
struct NormIdx {
  size_t gamma = 0, beta = 0;
};
struct AttentionIdx {
  LinearIdx q, k, v, o;
};
struct MlpIdx {
  LinearIdx up, down;
};

Mat random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

LinearIdx add_linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng,
                     double gain = 1.0);
NormIdx add_norm(ParameterSet& ps, const std::string& name, int dim);
AttentionIdx add_attention(ParameterSet& ps, const std::string& name, int dim, Rng& rng,
                           double out_gain);
MlpIdx add_mlp(ParameterSet& ps, const std::string& name, int dim, int hidden, Rng& rng,
               double out_gain);

Var linear(Tape& t, const std::vector<Var>& p, const LinearIdx& idx, Var x);
Var norm(Tape& t, const std::vector<Var>& p, const NormIdx& idx, Var x);
Var mlp(Tape& t, const std::vector<Var>& p, const MlpIdx& idx, Var x);
/// Projects q from `x_q` and k, v from `x_kv`, attends, then applies the output projection.
Var attend(Tape& t, const std::vector<Var>& p, const AttentionIdx& idx, Var x_q, Var x_kv,
           int batch, int tq, int tk, int heads, bool causal);

// Plain (tape-free) counterparts used by the cached inference path.
inline Mat linear_eval(const ParameterSet& ps, const LinearIdx& idx, const Mat& x) {
  return (x * ps[idx.w].value).rowwise() + ps[idx.b].value.row(0);
}
Mat norm_eval(const ParameterSet& ps, const NormIdx& idx, const Mat& x, double eps = 1e-5);
inline Mat mlp_eval(const ParameterSet& ps, const MlpIdx& idx, const Mat& x) {
  return linear_eval(ps, idx.down, linear_eval(ps, idx.up, x).cwiseMax(0.0));
}

}  // namespace vislex
