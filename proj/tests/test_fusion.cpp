#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "dlf/fusion.hpp"
#include "dlf/gradcheck.hpp"

using namespace dlf;

namespace {

Tensor random_hwc(int h, int w, int c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor t = Tensor::hwc(h, w, c);
  fill_uniform(t, rng, lo, hi);
  return t;
}

double checksum(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * std::cos(0.37 * double(i % 97));
  return s;
}

}  // namespace

TEST_CASE("fuse_level keeps spatial size and hits the requested channel count") {
  std::mt19937_64 rng(1);
  ParamStore ps(1);
  FusionConfig cfg;
  auto rgb = ag::leaf(random_hwc(6, 10, 5, rng));
  auto lidar = ag::leaf(random_hwc(6, 10, 5, rng));
  auto conf = ag::leaf(random_hwc(6, 10, 1, rng, 0, 1));
  auto out = fuse_level(ps, "fuse", 3, rgb, lidar, conf, 7, cfg);
  CHECK(out->val.h() == 6);
  CHECK(out->val.w() == 10);
  CHECK(out->val.c() == 7);
  CHECK(all_finite(out->val));
}

TEST_CASE("fuse_level rejects mismatched spatial sizes") {
  std::mt19937_64 rng(2);
  ParamStore ps(2);
  FusionConfig cfg;
  auto rgb = ag::leaf(random_hwc(6, 6, 4, rng));
  auto lidar = ag::leaf(random_hwc(4, 6, 4, rng));
  auto conf = ag::leaf(random_hwc(6, 6, 1, rng, 0, 1));
  CHECK_THROWS_AS(fuse_level(ps, "fuse", 2, rgb, lidar, conf, 4, cfg), std::invalid_argument);
}

TEST_CASE("confidence concat off makes the output independent of the confidence map") {
  std::mt19937_64 rng(3);
  ParamStore ps(3);
  FusionConfig cfg;
  cfg.use_confidence_concat = false;
  auto rgb = ag::leaf(random_hwc(5, 5, 4, rng));
  auto lidar = ag::leaf(random_hwc(5, 5, 4, rng));
  auto c1 = ag::leaf(random_hwc(5, 5, 1, rng, 0, 1));
  auto c2 = ag::leaf(random_hwc(5, 5, 1, rng, 0, 1));
  auto o1 = fuse_level(ps, "fuse", 2, rgb, lidar, c1, 4, cfg);
  auto o2 = fuse_level(ps, "fuse", 2, rgb, lidar, c2, 4, cfg);
  CHECK(max_abs_diff(o1->val, o2->val) == 0.0);
}

TEST_CASE("fuse_all: shared weights across time steps, five levels, level sizes") {
  std::mt19937_64 rng(4);
  ParamStore ps(4);
  PyramidConfig pcfg;
  FusionConfig fcfg;

  Tensor img = random_hwc(64, 64, 3, rng, 0, 1);
  SparseDepthInput depth;
  depth.disparity = Tensor::hwc(64, 64, 1);
  depth.validity = Tensor::hwc(64, 64, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (u(rng) < 0.1) {
        depth.validity.at(y, x, 0) = 1.0;
        depth.disparity.at(y, x, 0) = 1.0 + 30.0 * u(rng);
      }

  // Same prefixes at t and t+1: identical inputs must fuse identically.
  auto rgb_t = rgb_pyramid(ps, "rgb", ag::leaf(img), pcfg);
  auto lid_t = lidar_pyramid(ps, "lidar", depth, pcfg);
  auto f_t = fuse_all(ps, "fuse", rgb_t, lid_t, pcfg.channels, fcfg);

  auto rgb_n = rgb_pyramid(ps, "rgb", ag::leaf(img), pcfg);
  auto lid_n = lidar_pyramid(ps, "lidar", depth, pcfg);
  auto f_n = fuse_all(ps, "fuse", rgb_n, lid_n, pcfg.channels, fcfg);

  REQUIRE(f_t.size() == 5);
  for (int l = 2; l <= 6; ++l) {
    const Tensor& v = f_t.at(l)->val;
    CHECK(v.h() == 64 >> l);
    CHECK(v.w() == 64 >> l);
    CHECK(v.c() == pcfg.channels[l - 1]);
    CHECK(max_abs_diff(v, f_n.at(l)->val) == 0.0);
  }
}

TEST_CASE("fixed-seed regression checksum on 4x4 inputs") {
  std::mt19937_64 rng(42);
  ParamStore ps(5);
  FusionConfig cfg;
  auto rgb = ag::leaf(random_hwc(4, 4, 3, rng));
  auto lidar = ag::leaf(random_hwc(4, 4, 3, rng));
  auto conf = ag::leaf(random_hwc(4, 4, 1, rng, 0, 1));
  auto out = fuse_level(ps, "fuse", 2, rgb, lidar, conf, 3, cfg);
  // Frozen after the first verified build.
  CHECK(checksum(out->val) == doctest::Approx(1.012318568318).epsilon(1e-9));
}

TEST_CASE("fusion over two-level miniature pyramids passes a gradient check") {
  std::mt19937_64 rng(6);
  ParamStore ps(6);
  PyramidConfig pcfg;
  pcfg.channels = {2, 3};
  pcfg.levels = 2;
  pcfg.out_level = 1;
  FusionConfig fcfg;

  Tensor img = random_hwc(8, 8, 3, rng, 0, 1);
  SparseDepthInput depth;
  depth.disparity = Tensor::hwc(8, 8, 1);
  depth.validity = Tensor::hwc(8, 8, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      if (u(rng) < 0.5) {
        depth.validity.at(y, x, 0) = 1.0;
        depth.disparity.at(y, x, 0) = 1.0 + u(rng);
      }
  Tensor gt = Tensor::hwc(4, 4, 2);
  fill_uniform(gt, rng, -1, 1);
  Tensor ones = Tensor::hw(4, 4);
  ones.fill(1.0);

  auto x = ag::leaf(img, true);
  auto build = [&]() {
    auto rgb = rgb_pyramid(ps, "rgb", x, pcfg);
    auto lid = lidar_pyramid(ps, "lidar", depth, pcfg);
    auto fused = fuse_all(ps, "fuse", rgb, lid, pcfg.channels, fcfg);
    return ag::sf_norm_loss(fused.at(1), gt, ones);
  };
  build();
  std::vector<std::pair<std::string, ag::Var>> probes{{"image", x}};
  for (auto& [name, v] : ps.all()) probes.emplace_back(name, v);
  auto res = grad_check(build, probes);
  CHECK(res.max_rel_err < 1e-3);
}
