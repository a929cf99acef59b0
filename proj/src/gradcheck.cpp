#include "dlf/gradcheck.hpp"

namespace dlf {

GradCheckResult grad_check(const std::function<ag::Var()>& build,
                           const std::vector<std::pair<std::string, ag::Var>>& probes,
                           double step) {
  ag::Var root = build();
  ag::backward(root);

  // Snapshot analytic grads; probing mutates leaf values below.
  std::vector<Tensor> analytic;
  for (const auto& [name, v] : probes) {
    (void)name;
    analytic.push_back(v->grad.size() == v->val.size() ? v->grad : v->val.like_zeros());
  }

  GradCheckResult res;
  for (std::size_t pi = 0; pi < probes.size(); ++pi) {
    ag::Var v = probes[pi].second;
    for (std::size_t i = 0; i < v->val.size(); ++i) {
      const double orig = v->val[i];
      v->val[i] = orig + step;
      const double fp = build()->val[0];
      v->val[i] = orig - step;
      const double fm = build()->val[0];
      v->val[i] = orig;
      const double num = (fp - fm) / (2.0 * step);
      const double ana = analytic[pi][i];
      const double rel =
          std::fabs(ana - num) / std::max({1.0, std::fabs(ana), std::fabs(num)});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = probes[pi].first;
      }
    }
  }
  return res;
}

}  // namespace dlf
