#pragma once

#include <map>
#include <random>
#include <string>

#include "dlf/autodiff.hpp"

namespace dlf {

// Named parameter registry. Modules fetch parameters by name on every
// forward pass; two call sites using the same name share the same tensor,
// which is how weight sharing across time steps works. Creation order is
// the first-forward order, seeded once, so builds are reproducible.
class ParamStore {
public:
  explicit ParamStore(unsigned seed = 0) : rng_(seed) {}

  // He-style init, fan-in = k*k*ci.
  ag::Var conv_weight(const std::string& name, int k, int ci, int co);
  ag::Var conv_weight_zero(const std::string& name, int k, int ci, int co);
  ag::Var bias(const std::string& name, int co);
  // Raw confidence-propagation weights; softplus(0.54..) ~ 1, start uniform.
  ag::Var conf_weight(const std::string& name, int k);

  const std::map<std::string, ag::Var>& all() const { return params_; }
  std::map<std::string, ag::Var>& all() { return params_; }
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t count_scalars() const;

private:
  ag::Var fetch(const std::string& name, Tensor init);

  std::map<std::string, ag::Var> params_;
  std::mt19937_64 rng_;
};

}  // namespace dlf
