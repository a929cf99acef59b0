#pragma once

#include <string>
#include <vector>

namespace dlf {

// Numeric self-test battery: finite-difference gradient checks for every
// differentiable operator and brute-force oracle comparisons for the
// forward kernels. Used by the command-line `check` command.
struct CheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct CheckOptions {
  unsigned seed = 0;
  // Test fixture: perturbs one analytic gradient so the battery must
  // report a named failure.
  bool inject_gradient_fault = false;
};

std::vector<CheckResult> run_checks(const CheckOptions& opts);
std::string format_check_report(const std::vector<CheckResult>& results);
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace dlf
