#include "vislex/autodiff.hpp"

#include <algorithm>
#include <limits>
#include <memory>

#include "vislex/params.hpp"

namespace vislex {

Var Tape::push(Mat value, std::initializer_list<Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (Var p : parents) n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), {}, nullptr); }

Var Tape::leaf(Mat value) {
  Var v = push(std::move(value), {}, nullptr);
  nodes_[v.id].needs_grad = true;
  return v;
}

Var Tape::track(Var x) {
  Var v = push(nodes_[x.id].value, {x}, [x](Tape& t, const Mat& g) {
    t.accumulate(x, g);
  });
  nodes_[v.id].needs_grad = true;
  return v;
}

Var Tape::param(Parameter& p) {
  Var v = leaf(p.value);
  nodes_[v.id].param = &p;
  return v;
}

Var Tape::param(const Parameter& p) { return constant(p.value); }

void Tape::accumulate(Var v, const Mat& g) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var scalar) {
  Node& root = nodes_[scalar.id];
  if (root.value.size() != 1) throw ArgumentError("backward() needs a scalar node");
  if (!root.needs_grad) return;
  root.grad = Mat::Ones(1, 1);
  for (int i = scalar.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) n.param->grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.param->grad += n.grad;
    }
  }
}

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "add");
  return t.push(t.value(a) + t.value(b), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "sub");
  return t.push(t.value(a) - t.value(b), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.push(t.value(a) * s, {a}, [a, s](Tape& tp, const Mat& g) {
    tp.accumulate(a, g * s);
  });
}

Var matmul(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.cols() != bv.rows()) throw ConfigError("matmul: inner dimension mismatch");
  Mat out = av * bv;
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Mat& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

Var add_bias(Tape& t, Var a, Var bias) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(bias);
  if (bv.rows() != 1 || bv.cols() != av.cols()) throw ConfigError("add_bias: bias shape");
  Mat out = av.rowwise() + bv.row(0);
  return t.push(std::move(out), {a, bias}, [a, bias](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    if (tp.needs_grad(bias)) tp.accumulate(bias, g.colwise().sum());
  });
}

Var add_tiled(Tape& t, Var a, Var block) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(block);
  const Eigen::Index T = bv.rows();
  if (bv.cols() != av.cols() || T == 0 || av.rows() % T != 0)
    throw ConfigError("add_tiled: shape mismatch");
  const Eigen::Index B = av.rows() / T;
  Mat out = av;
  for (Eigen::Index b = 0; b < B; ++b) out.middleRows(b * T, T) += bv;
  return t.push(std::move(out), {a, block}, [a, block, B, T](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    if (tp.needs_grad(block)) {
      Mat gb = Mat::Zero(T, g.cols());
      for (Eigen::Index b = 0; b < B; ++b) gb += g.middleRows(b * T, T);
      tp.accumulate(block, gb);
    }
  });
}

Var relu(Tape& t, Var a) {
  Mat out = t.value(a).cwiseMax(0.0);
  return t.push(std::move(out), {a}, [a](Tape& tp, const Mat& g) {
    Mat mask = (tp.value(a).array() > 0.0).cast<double>();
    tp.accumulate(a, g.cwiseProduct(mask));
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Mat& xv = t.value(x);
  const Eigen::Index n = xv.cols();
  auto xhat = std::make_shared<Mat>(xv.rows(), n);
  auto inv_std = std::make_shared<Vec>(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mean) * (*inv_std)(r);
  }
  Mat out = (xhat->array().rowwise() * t.value(gamma).row(0).array()).rowwise() +
            t.value(beta).row(0).array();
  return t.push(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std, n](Tape& tp, const Mat& g) {
                  if (tp.needs_grad(gamma))
                    tp.accumulate(gamma, g.cwiseProduct(*xhat).colwise().sum());
                  if (tp.needs_grad(beta)) tp.accumulate(beta, g.colwise().sum());
                  if (!tp.needs_grad(x)) return;
                  Mat gx_hat = g.array().rowwise() * tp.value(gamma).row(0).array();
                  Mat gx(g.rows(), n);
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const double m1 = gx_hat.row(r).mean();
                    const double m2 = gx_hat.row(r).cwiseProduct(xhat->row(r)).mean();
                    gx.row(r) = (gx_hat.row(r).array() - m1 - xhat->row(r).array() * m2) *
                                (*inv_std)(r);
                  }
                  tp.accumulate(x, gx);
                });
}

Var batch_norm_train(Tape& t, Var x, Var gamma, Var beta, double eps, RowVec* batch_mean,
                     RowVec* batch_var) {
  const Mat& xv = t.value(x);
  const double m = static_cast<double>(xv.rows());
  RowVec mean = xv.colwise().mean();
  Mat centered = xv.rowwise() - mean;
  RowVec var = centered.array().square().colwise().mean();
  auto inv_std = std::make_shared<RowVec>((var.array() + eps).rsqrt());
  auto xhat = std::make_shared<Mat>(centered.array().rowwise() * inv_std->array());
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  Mat out = (xhat->array().rowwise() * t.value(gamma).row(0).array()).rowwise() +
            t.value(beta).row(0).array();
  return t.push(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std, m](Tape& tp, const Mat& g) {
                  if (tp.needs_grad(gamma))
                    tp.accumulate(gamma, g.cwiseProduct(*xhat).colwise().sum());
                  if (tp.needs_grad(beta)) tp.accumulate(beta, g.colwise().sum());
                  if (!tp.needs_grad(x)) return;
                  Mat gx_hat = g.array().rowwise() * tp.value(gamma).row(0).array();
                  RowVec s1 = gx_hat.colwise().sum();
                  RowVec s2 = gx_hat.cwiseProduct(*xhat).colwise().sum();
                  Mat gx = (gx_hat * m).rowwise() - s1;
                  gx -= (xhat->array().rowwise() * s2.array()).matrix();
                  gx = (gx.array().rowwise() * (inv_std->array() / m)).matrix();
                  tp.accumulate(x, gx);
                });
}

Var batch_norm_infer(Tape& t, Var x, Var gamma, Var beta, const RowVec& mean,
                     const RowVec& var, double eps) {
  const Mat& xv = t.value(x);
  auto inv_std = std::make_shared<RowVec>((var.array() + eps).rsqrt());
  auto xhat =
      std::make_shared<Mat>((xv.rowwise() - mean).array().rowwise() * inv_std->array());
  Mat out = (xhat->array().rowwise() * t.value(gamma).row(0).array()).rowwise() +
            t.value(beta).row(0).array();
  return t.push(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std](Tape& tp, const Mat& g) {
                  if (tp.needs_grad(gamma))
                    tp.accumulate(gamma, g.cwiseProduct(*xhat).colwise().sum());
                  if (tp.needs_grad(beta)) tp.accumulate(beta, g.colwise().sum());
                  if (tp.needs_grad(x))
                    tp.accumulate(x, (g.array().rowwise() *
                                      (tp.value(gamma).row(0).array() * inv_std->array()))
                                         .matrix());
                });
}

Var embedding(Tape& t, Var table, std::span<const int> ids) {
  const Mat& tv = t.value(table);
  Mat out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw ArgumentError("embedding: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return t.push(std::move(out), {table}, [table, idv](Tape& tp, const Mat& g) {
    Mat gt = Mat::Zero(tp.value(table).rows(), g.cols());
    for (size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(table, gt);
  });
}

Var prepend_row(Tape& t, Var x, Var row, int batch) {
  const Mat& xv = t.value(x);
  const Mat& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols() || xv.rows() % batch != 0)
    throw ConfigError("prepend_row: shape mismatch");
  const Eigen::Index P = xv.rows() / batch;
  Mat out(batch * (P + 1), xv.cols());
  for (int b = 0; b < batch; ++b) {
    out.row(b * (P + 1)) = rv.row(0);
    out.middleRows(b * (P + 1) + 1, P) = xv.middleRows(b * P, P);
  }
  return t.push(std::move(out), {x, row}, [x, row, batch, P](Tape& tp, const Mat& g) {
    if (tp.needs_grad(row)) {
      Mat gr = Mat::Zero(1, g.cols());
      for (int b = 0; b < batch; ++b) gr += g.row(b * (P + 1));
      tp.accumulate(row, gr);
    }
    if (tp.needs_grad(x)) {
      Mat gx(batch * P, g.cols());
      for (int b = 0; b < batch; ++b) gx.middleRows(b * P, P) = g.middleRows(b * (P + 1) + 1, P);
      tp.accumulate(x, gx);
    }
  });
}

Var take_row(Tape& t, Var x, int batch, int block_rows, int index) {
  const Mat& xv = t.value(x);
  if (xv.rows() != static_cast<Eigen::Index>(batch) * block_rows || index < 0 ||
      index >= block_rows)
    throw ConfigError("take_row: shape mismatch");
  Mat out(batch, xv.cols());
  for (int b = 0; b < batch; ++b) out.row(b) = xv.row(b * block_rows + index);
  return t.push(std::move(out), {x}, [x, batch, block_rows, index](Tape& tp, const Mat& g) {
    Mat gx = Mat::Zero(tp.value(x).rows(), g.cols());
    for (int b = 0; b < batch; ++b) gx.row(b * block_rows + index) = g.row(b);
    tp.accumulate(x, gx);
  });
}

Var reshape(Tape& t, Var x, Eigen::Index rows, Eigen::Index cols) {
  const Mat& xv = t.value(x);
  if (rows * cols != xv.size()) throw ConfigError("reshape: element count mismatch");
  Mat out = Eigen::Map<const Mat>(xv.data(), rows, cols);
  const Eigen::Index r0 = xv.rows(), c0 = xv.cols();
  return t.push(std::move(out), {x}, [x, r0, c0](Tape& tp, const Mat& g) {
    tp.accumulate(x, Eigen::Map<const Mat>(g.data(), r0, c0));
  });
}

Var attention(Tape& t, Var q, Var k, Var v, int batch, int tq, int tk, int heads,
              bool causal) {
  const Mat& qv = t.value(q);
  const Mat& kv = t.value(k);
  const Mat& vv = t.value(v);
  const Eigen::Index d = qv.cols();
  if (qv.rows() != static_cast<Eigen::Index>(batch) * tq ||
      kv.rows() != static_cast<Eigen::Index>(batch) * tk || vv.rows() != kv.rows() ||
      kv.cols() != d || vv.cols() != d || d % heads != 0)
    throw ConfigError("attention: shape mismatch");
  if (causal && tq != tk) throw ConfigError("attention: causal mask needs tq == tk");
  const Eigen::Index dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<Mat>>(static_cast<size_t>(batch) * heads);
  Mat out(qv.rows(), d);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto qb = qv.block(b * tq, h * dh, tq, dh);
      auto kb = kv.block(b * tk, h * dh, tk, dh);
      auto vb = vv.block(b * tk, h * dh, tk, dh);
      Mat s = (qb * kb.transpose()) * inv_sqrt;
      if (causal) {
        for (int i = 0; i < tq; ++i)
          for (int j = i + 1; j < tk; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
      }
      Mat p = softmax_rows(s);
      out.block(b * tq, h * dh, tq, dh) = p * vb;
      (*probs)[static_cast<size_t>(b) * heads + h] = std::move(p);
    }
  }
  return t.push(std::move(out), {q, k, v},
                [q, k, v, batch, tq, tk, heads, dh, inv_sqrt, probs](Tape& tp, const Mat& g) {
                  const Mat& qv = tp.value(q);
                  const Mat& kv = tp.value(k);
                  const Mat& vv = tp.value(v);
                  Mat gq = Mat::Zero(qv.rows(), qv.cols());
                  Mat gk = Mat::Zero(kv.rows(), kv.cols());
                  Mat gv = Mat::Zero(vv.rows(), vv.cols());
                  for (int b = 0; b < batch; ++b) {
                    for (int h = 0; h < heads; ++h) {
                      const Mat& p = (*probs)[static_cast<size_t>(b) * heads + h];
                      auto go = g.block(b * tq, h * dh, tq, dh);
                      auto qb = qv.block(b * tq, h * dh, tq, dh);
                      auto kb = kv.block(b * tk, h * dh, tk, dh);
                      auto vb = vv.block(b * tk, h * dh, tk, dh);
                      gv.block(b * tk, h * dh, tk, dh) = p.transpose() * go;
                      Mat gp = go * vb.transpose();
                      Vec rowdot = gp.cwiseProduct(p).rowwise().sum();
                      Mat gs = p.cwiseProduct(gp.colwise() - rowdot) * inv_sqrt;
                      gq.block(b * tq, h * dh, tq, dh) = gs * kb;
                      gk.block(b * tk, h * dh, tk, dh) = gs.transpose() * qb;
                    }
                  }
                  tp.accumulate(q, gq);
                  tp.accumulate(k, gk);
                  tp.accumulate(v, gv);
                });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> targets) {
  const Mat& lv = t.value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != lv.rows())
    throw ConfigError("softmax_cross_entropy: target count mismatch");
  auto probs = std::make_shared<Mat>(softmax_rows(lv));
  double loss = 0.0;
  int count = 0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const int y = targets[static_cast<size_t>(r)];
    if (y < 0) continue;
    if (y >= lv.cols()) throw ArgumentError("softmax_cross_entropy: target out of range");
    loss -= std::log(std::max((*probs)(r, y), 1e-300));
    ++count;
  }
  if (count == 0) throw ArgumentError("softmax_cross_entropy: no scored positions");
  loss /= count;
  std::vector<int> tv(targets.begin(), targets.end());
  Mat out(1, 1);
  out(0, 0) = loss;
  return t.push(std::move(out), {logits}, [logits, probs, tv, count](Tape& tp, const Mat& g) {
    Mat gl = Mat::Zero(probs->rows(), probs->cols());
    const double s = g(0, 0) / count;
    for (Eigen::Index r = 0; r < probs->rows(); ++r) {
      const int y = tv[static_cast<size_t>(r)];
      if (y < 0) continue;
      gl.row(r) = probs->row(r) * s;
      gl(r, y) -= s;
    }
    tp.accumulate(logits, gl);
  });
}

}  // namespace vislex
