#include "dlf/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dlf {

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (int i = 0; i < (nd_ == 0 ? 1 : nd_); ++i) {
    if (i) os << "x";
    os << d_[i];
  }
  os << ")";
  return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  assert(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
}

void fill_normal(Tensor& t, std::mt19937_64& rng, double mean, double stddev) {
  std::normal_distribution<double> d(mean, stddev);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
}

}  // namespace dlf
