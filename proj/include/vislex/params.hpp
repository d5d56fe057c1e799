#pragma once

#include <string>
#include <vector>

#include "vislex/autodiff.hpp"

namespace vislex {

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
};

/// Ordered, named parameter collection. Once frozen, every mutating accessor
/// throws ContractViolation; frozen sets can only be bound to a tape read-only.
class ParameterSet {
 public:
  /// Registers a parameter and returns its index.
  size_t add(std::string name, Mat init);

  size_t size() const { return params_.size(); }
  size_t scalar_count() const;

  const Parameter& operator[](size_t i) const { return params_[i]; }
  const Parameter& get(const std::string& name) const;
  Parameter& mutable_at(size_t i);
  std::vector<Parameter>& mutable_all();
  const std::vector<Parameter>& all() const { return params_; }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  void zero_grad();
  /// SHA-256 over names, shapes and raw values, hex encoded.
  std::string digest() const;

  /// Binds every parameter onto the tape. Trainable only when not frozen and
  /// `trainable` is requested.
  std::vector<Var> bind(Tape& tape, bool trainable);
  std::vector<Var> bind(Tape& tape) const;

  /// Flat vector of all values in registration order.
  std::vector<double> flatten() const;
  void assign(const std::vector<double>& flat);

 private:
  std::vector<Parameter> params_;
  bool frozen_ = false;
};

/// Adam with bias correction. One instance per training stage; constructing a
/// new one discards moment estimates.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params);
  /// Step restricted to the given parameter indices.
  void step(ParameterSet& params, const std::vector<size_t>& indices);
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

}  // namespace vislex
