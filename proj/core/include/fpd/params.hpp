#pragma once

#include "fpd/autograd.hpp"

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fpd {

/// Named trainable parameters in registration order. Each name owns exactly one leaf Var,
/// so both detector branches reach the same storage.
class ParameterStore {
 public:
  ag::Var& add(const std::string& name, Matrix init);
  bool contains(const std::string& name) const { return params_.contains(name); }
  ag::Var& get(const std::string& name);
  const ag::Var& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }

  void zero_grad();
  /// Toggles requires_grad on every parameter whose name starts with prefix.
  void set_trainable(std::string_view prefix, bool trainable);
  bool trainable(const std::string& name) const { return get(name).requires_grad(); }

  std::size_t scalar_count() const;
  double grad_norm() const;
  /// Copies values from another store with the same names and shapes.
  void assign_values(const std::map<std::string, Matrix>& values);
  std::map<std::string, Matrix> values() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, ag::Var> params_;
};

/// SGD with momentum and L2 weight decay, optional global gradient-norm clipping.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay, double clip_norm)
      : momentum_(momentum), weight_decay_(weight_decay), clip_norm_(clip_norm) {}

  void step(ParameterStore& params, double lr);

  std::map<std::string, Matrix>& velocity() { return velocity_; }
  const std::map<std::string, Matrix>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  double clip_norm_;
  std::map<std::string, Matrix> velocity_;
};

}  // namespace fpd
