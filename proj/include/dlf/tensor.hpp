#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dlf {

// Dense row-major tensor, up to 4 dims. Spatial maps are (h, w, c),
// convolution weights are (k, k, c_in, c_out).
class Tensor {
public:
  Tensor() = default;

  static Tensor hw(int h, int w) { return Tensor({h, w, 1, 1}, 3); }
  static Tensor hwc(int h, int w, int c) { return Tensor({h, w, c, 1}, 3); }
  static Tensor kkio(int k, int ci, int co) { return Tensor({k, k, ci, co}, 4); }
  static Tensor vec(int n) { return Tensor({n, 1, 1, 1}, 1); }
  static Tensor scalar(double s) {
    Tensor t({1, 1, 1, 1}, 1);
    t.v_[0] = s;
    return t;
  }

  int dim(int i) const { return d_[i]; }
  int h() const { return d_[0]; }
  int w() const { return d_[1]; }
  int c() const { return d_[2]; }
  int ndim() const { return nd_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  bool same_shape(const Tensor& o) const { return d_ == o.d_; }
  bool same_spatial(const Tensor& o) const { return d_[0] == o.d_[0] && d_[1] == o.d_[1]; }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  // (h, w, c) indexing
  double& at(int y, int x, int ch) { return v_[(std::size_t(y) * d_[1] + x) * d_[2] + ch]; }
  double at(int y, int x, int ch) const { return v_[(std::size_t(y) * d_[1] + x) * d_[2] + ch]; }

  // (k, k, ci, co) indexing
  double& at4(int a, int b, int ci, int co) {
    return v_[((std::size_t(a) * d_[1] + b) * d_[2] + ci) * d_[3] + co];
  }
  double at4(int a, int b, int ci, int co) const {
    return v_[((std::size_t(a) * d_[1] + b) * d_[2] + ci) * d_[3] + co];
  }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  void fill(double s) { std::fill(v_.begin(), v_.end(), s); }
  Tensor like_zeros() const { return Tensor(d_, nd_); }

  Tensor& operator+=(const Tensor& o) {
    assert(same_shape(o));
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (auto& x : v_) x *= s;
    return *this;
  }

  std::string shape_str() const;

private:
  Tensor(std::array<int, 4> d, int nd) : d_(d), nd_(nd) {
    std::size_t n = 1;
    for (int i = 0; i < 4; ++i) n *= std::size_t(d_[i]);
    v_.assign(n, 0.0);
  }

  std::array<int, 4> d_{1, 1, 1, 1};
  int nd_ = 0;
  std::vector<double> v_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo, double hi);
void fill_normal(Tensor& t, std::mt19937_64& rng, double mean, double stddev);

}  // namespace dlf
