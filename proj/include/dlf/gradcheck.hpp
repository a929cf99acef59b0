#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "dlf/autodiff.hpp"

// Central finite-difference checks against the analytic gradients of a
// scalar-valued graph. Used by the test suites and the `check` command.

namespace dlf {

struct GradCheckResult {
  double max_rel_err = 0.0;  // |analytic - numeric| / max(1, |analytic|, |numeric|)
  std::string worst;         // name of the worst input
  bool ok(double tol) const { return max_rel_err <= tol; }
};

// build() must construct a fresh scalar graph from the current contents of
// the probed leaves each time it is called; probes are the leaves whose
// gradients are checked (they must have requires_grad set).
GradCheckResult grad_check(const std::function<ag::Var()>& build,
                           const std::vector<std::pair<std::string, ag::Var>>& probes,
                           double step = 1e-6);

}  // namespace dlf
