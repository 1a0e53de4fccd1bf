#include "fpd/params.hpp"

#include "fpd/error.hpp"

#include <cmath>

namespace fpd {

ag::Var& ParameterStore::add(const std::string& name, Matrix init) {
  if (params_.contains(name)) throw ValidationError("parameter registered twice: " + name);
  order_.push_back(name);
  return params_.emplace(name, ag::Var(std::move(init), true)).first->second;
}

ag::Var& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

const ag::Var& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

void ParameterStore::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& [name, v] : params_)
    if (std::string_view(name).starts_with(prefix)) v.set_requires_grad(trainable);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

double ParameterStore::grad_norm() const {
  double s = 0.0;
  for (const auto& name : order_) {
    const auto& v = params_.at(name);
    if (v.has_grad()) s += v.node()->grad.squaredNorm();
  }
  return std::sqrt(s);
}

void ParameterStore::assign_values(const std::map<std::string, Matrix>& values) {
  for (const auto& [name, m] : values) {
    auto& v = get(name);
    require_shape(v.rows() == m.rows() && v.cols() == m.cols(), ("parameter " + name).c_str(),
                  v.value(), "model", m, "stored");
    v.mutable_value() = m;
  }
}

std::map<std::string, Matrix> ParameterStore::values() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, v] : params_) out.emplace(name, v.value());
  return out;
}

void SgdOptimizer::step(ParameterStore& params, double lr) {
  double scale = 1.0;
  if (clip_norm_ > 0) {
    const double norm = params.grad_norm();
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
    if (norm > clip_norm_) scale = clip_norm_ / norm;
  }
  for (const auto& name : params.names()) {
    auto& p = params.get(name);
    if (!p.requires_grad() || !p.has_grad()) continue;
    Matrix g = p.node()->grad * scale + weight_decay_ * p.value();
    auto it = velocity_.find(name);
    if (it == velocity_.end()) it = velocity_.emplace(name, Matrix::Zero(g.rows(), g.cols())).first;
    it->second = momentum_ * it->second + g;
    p.mutable_value() -= lr * it->second;
  }
}

}  // namespace fpd
