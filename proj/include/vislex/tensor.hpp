#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "vislex/errors.hpp"

namespace vislex {

// Row-major so that a (B x T*D) batch and a (B*T x D) token stack share storage.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_finite(const Mat& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError(what + ": non-finite values");
}

/// Row-wise numerically stable softmax.
inline Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace vislex
