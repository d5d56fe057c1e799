#include "vislex/params.hpp"

#include <cstring>

#include "vislex/checkpoint.hpp"

namespace vislex {

size_t ParameterSet::add(std::string name, Mat init) {
  if (frozen_) throw ContractViolation("cannot add parameter '" + name + "' to a frozen set");
  params_.push_back(Parameter{std::move(name), std::move(init), Mat()});
  return params_.size() - 1;
}

size_t ParameterSet::scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += static_cast<size_t>(p.value.size());
  return n;
}

const Parameter& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("unknown parameter '" + name + "'");
}

Parameter& ParameterSet::mutable_at(size_t i) {
  if (frozen_) throw ContractViolation("write access to frozen parameter '" + params_[i].name + "'");
  return params_[i];
}

std::vector<Parameter>& ParameterSet::mutable_all() {
  if (frozen_) throw ContractViolation("write access to a frozen parameter set");
  return params_;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.resize(0, 0);
}

std::string ParameterSet::digest() const {
  return tensors_digest(params_);
}

std::vector<Var> ParameterSet::bind(Tape& tape, bool trainable) {
  if (!trainable || frozen_) return std::as_const(*this).bind(tape);
  std::vector<Var> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(tape.param(p));
  return out;
}

std::vector<Var> ParameterSet::bind(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(tape.param(p));
  return out;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& p : params_) flat.insert(flat.end(), p.value.data(), p.value.data() + p.value.size());
  return flat;
}

void ParameterSet::assign(const std::vector<double>& flat) {
  if (frozen_) throw ContractViolation("assign() on a frozen parameter set");
  if (flat.size() != scalar_count()) throw ConfigError("assign(): size mismatch");
  size_t off = 0;
  for (auto& p : params_) {
    std::memcpy(p.value.data(), flat.data() + off, sizeof(double) * static_cast<size_t>(p.value.size()));
    off += static_cast<size_t>(p.value.size());
  }
}

void Adam::step(ParameterSet& params) {
  std::vector<size_t> all(params.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  step(params, all);
}

void Adam::step(ParameterSet& params, const std::vector<size_t>& indices) {
  auto& ps = params.mutable_all();
  if (m_.size() != ps.size()) {
    m_.assign(ps.size(), Mat());
    v_.assign(ps.size(), Mat());
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i : indices) {
    Parameter& p = ps[i];
    if (p.grad.size() == 0) continue;
    if (m_[i].size() == 0) {
      m_[i] = Mat::Zero(p.value.rows(), p.value.cols());
      v_[i] = Mat::Zero(p.value.rows(), p.value.cols());
    }
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace vislex
