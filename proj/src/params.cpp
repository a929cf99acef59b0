#include "dlf/params.hpp"

#include <cmath>
#include <stdexcept>

namespace dlf {

ag::Var ParamStore::fetch(const std::string& name, Tensor init) {
  auto it = params_.find(name);
  if (it != params_.end()) {
    if (!it->second->val.same_shape(init))
      throw std::runtime_error("parameter shape mismatch for " + name + ": have " +
                               it->second->val.shape_str() + ", requested " + init.shape_str());
    return it->second;
  }
  ag::Var v = ag::leaf(std::move(init), true);
  params_.emplace(name, v);
  return v;
}

ag::Var ParamStore::conv_weight(const std::string& name, int k, int ci, int co) {
  auto it = params_.find(name);
  if (it != params_.end()) return fetch(name, it->second->val);
  Tensor t = Tensor::kkio(k, ci, co);
  fill_normal(t, rng_, 0.0, std::sqrt(2.0 / (double(k) * k * ci)));
  return fetch(name, std::move(t));
}

ag::Var ParamStore::conv_weight_zero(const std::string& name, int k, int ci, int co) {
  return fetch(name, Tensor::kkio(k, ci, co));
}

ag::Var ParamStore::bias(const std::string& name, int co) {
  return fetch(name, Tensor::vec(co));
}

ag::Var ParamStore::conf_weight(const std::string& name, int k) {
  auto it = params_.find(name);
  if (it != params_.end()) return fetch(name, it->second->val);
  Tensor t = Tensor::hw(k, k);
  t.fill(0.5413);  // softplus(0.5413) = 1: uniform unit propagation at start
  return fetch(name, std::move(t));
}

std::size_t ParamStore::count_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += v->val.size();
  return n;
}

}  // namespace dlf
