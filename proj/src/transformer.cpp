#include "vislex/transformer.hpp"

namespace vislex {

Mat random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal01(rng) * stddev;
  return m;
}

LinearIdx add_linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng,
                     double gain) {
  LinearIdx idx;
  idx.w = ps.add(name + ".w", random_normal(in, out, gain / std::sqrt(double(in)), rng));
  idx.b = ps.add(name + ".b", Mat::Zero(1, out));
  return idx;
}

NormIdx add_norm(ParameterSet& ps, const std::string& name, int dim) {
  return NormIdx{ps.add(name + ".gamma", Mat::Ones(1, dim)),
                 ps.add(name + ".beta", Mat::Zero(1, dim))};
}

AttentionIdx add_attention(ParameterSet& ps, const std::string& name, int dim, Rng& rng,
                           double out_gain) {
  AttentionIdx idx;
  idx.q = add_linear(ps, name + ".q", dim, dim, rng);
  idx.k = add_linear(ps, name + ".k", dim, dim, rng);
  idx.v = add_linear(ps, name + ".v", dim, dim, rng);
  idx.o = add_linear(ps, name + ".o", dim, dim, rng, out_gain);
  return idx;
}

MlpIdx add_mlp(ParameterSet& ps, const std::string& name, int dim, int hidden, Rng& rng,
               double out_gain) {
  return MlpIdx{add_linear(ps, name + ".up", dim, hidden, rng, std::sqrt(2.0)),
                add_linear(ps, name + ".down", hidden, dim, rng, out_gain)};
}

Var linear(Tape& t, const std::vector<Var>& p, const LinearIdx& idx, Var x) {
  return add_bias(t, matmul(t, x, p[idx.w]), p[idx.b]);
}

Var norm(Tape& t, const std::vector<Var>& p, const NormIdx& idx, Var x) {
  return layer_norm(t, x, p[idx.gamma], p[idx.beta]);
}

Var mlp(Tape& t, const std::vector<Var>& p, const MlpIdx& idx, Var x) {
  return linear(t, p, idx.down, relu(t, linear(t, p, idx.up, x)));
}

Var attend(Tape& t, const std::vector<Var>& p, const AttentionIdx& idx, Var x_q, Var x_kv,
           int batch, int tq, int tk, int heads, bool causal) {
  Var q = linear(t, p, idx.q, x_q);
  Var k = linear(t, p, idx.k, x_kv);
  Var v = linear(t, p, idx.v, x_kv);
  return linear(t, p, idx.o, attention(t, q, k, v, batch, tq, tk, heads, causal));
}

Mat norm_eval(const ParameterSet& ps, const NormIdx& idx, const Mat& x, double eps) {
  Mat out(x.rows(), x.cols());
  const auto& g = ps[idx.gamma].value;
  const auto& b = ps[idx.beta].value;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double inv_std = 1.0 / std::sqrt(var + eps);
    out.row(r) = ((x.row(r).array() - mean) * inv_std) * g.row(0).array() +
                 b.row(0).array();
  }
  return out;
}

}  // namespace vislex
