#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "dlf/gradcheck.hpp"
#include "dlf/matching.hpp"

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

MatchingConfig tiny_cfg() {
  MatchingConfig cfg;
  cfg.radius = 2;
  cfg.estimator_widths = {8, 6};
  cfg.context_widths = {6, 6, 4};
  cfg.context_dilations = {1, 2, 1};
  return cfg;
}

}  // namespace

TEST_CASE("estimate_level outputs a 4-channel field at level resolution") {
  std::mt19937_64 rng(1);
  ParamStore ps(1);
  MatchingConfig cfg = tiny_cfg();
  auto f_ref = ag::leaf(random_hwc(6, 8, 5, rng));
  auto f_next = ag::leaf(random_hwc(6, 8, 5, rng));

  auto top = estimate_level(ps, "match", 6, f_ref, f_next, std::nullopt, cfg);
  CHECK(top.sf->val.h() == 6);
  CHECK(top.sf->val.w() == 8);
  CHECK(top.sf->val.c() == 4);
  CHECK(top.features->val.c() == cfg.estimator_widths.back());
  CHECK(all_finite(top.sf->val));
}

TEST_CASE("top level correlates against the unwarped next-frame features") {
  // With no incoming flow the warping step is skipped, so feeding an
  // explicit zero flow through a lower level must reproduce the top-level
  // cost path: check via the estimator output with shared weights.
  std::mt19937_64 rng(2);
  MatchingConfig cfg = tiny_cfg();
  auto f_ref = ag::leaf(random_hwc(5, 5, 4, rng));
  auto f_next = ag::leaf(random_hwc(5, 5, 4, rng));

  ParamStore ps(3);
  auto a = estimate_level(ps, "match", 6, f_ref, f_next, std::nullopt, cfg);
  auto b = estimate_level(ps, "match", 6, f_ref, f_next, std::nullopt, cfg);
  CHECK(max_abs_diff(a.sf->val, b.sf->val) == 0.0);  // deterministic + weight-shared

  // Zero flow leaves the warped features bitwise equal to f_next.
  auto zero_flow = ag::leaf(Tensor::hwc(5, 5, 2));
  auto warped = ag::warp(f_next, zero_flow);
  CHECK(max_abs_diff(warped->val, f_next->val) == 0.0);
}

TEST_CASE("upsample_sf doubles resolution and values") {
  SUBCASE("constant field") {
    Tensor t = Tensor::hwc(3, 3, 4);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        t.at(y, x, 0) = 1.0;
        t.at(y, x, 1) = 0.0;
        t.at(y, x, 2) = 8.0;
        t.at(y, x, 3) = 8.0;
      }
    auto up = upsample_sf(ag::leaf(t));
    CHECK(up->val.h() == 6);
    CHECK(up->val.w() == 6);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        CHECK(up->val.at(y, x, 0) == doctest::Approx(2.0));
        CHECK(up->val.at(y, x, 1) == doctest::Approx(0.0));
        CHECK(up->val.at(y, x, 2) == doctest::Approx(16.0));
        CHECK(up->val.at(y, x, 3) == doctest::Approx(16.0));
      }
  }

  SUBCASE("zero field stays zero") {
    auto up = upsample_sf(ag::leaf(Tensor::hwc(4, 4, 4)));
    for (std::size_t i = 0; i < up->val.size(); ++i) CHECK(up->val[i] == 0.0);
  }

  SUBCASE("random field matches bilinear x2 scaled by two") {
    std::mt19937_64 rng(4);
    Tensor t = random_hwc(3, 3, 4, rng);
    auto up = upsample_sf(ag::leaf(t));
    Tensor expect;
    kernels::bilinear_up2_fwd(t, expect);
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] *= 2.0;
    CHECK(max_abs_diff(up->val, expect) < 1e-12);
  }
}

TEST_CASE("context_refine is the identity at initialization") {
  std::mt19937_64 rng(5);
  ParamStore ps(5);
  MatchingConfig cfg = tiny_cfg();
  auto feats = ag::leaf(random_hwc(5, 5, 6, rng));
  auto f_ref = ag::leaf(random_hwc(5, 5, 4, rng));
  auto f_next = ag::leaf(random_hwc(5, 5, 4, rng));
  auto sf = ag::leaf(random_hwc(5, 5, 4, rng));
  auto out = context_refine(ps, "match", feats, f_ref, f_next, sf, cfg);
  CHECK(out->val.same_shape(sf->val));
  CHECK(max_abs_diff(out->val, sf->val) == 0.0);
}

TEST_CASE("context_refine residual responds after the head departs from zero") {
  std::mt19937_64 rng(6);
  ParamStore ps(6);
  MatchingConfig cfg = tiny_cfg();
  auto feats = ag::leaf(random_hwc(4, 4, 6, rng));
  auto f_ref = ag::leaf(random_hwc(4, 4, 3, rng));
  auto f_next = ag::leaf(random_hwc(4, 4, 3, rng));
  auto sf = ag::leaf(random_hwc(4, 4, 4, rng));
  context_refine(ps, "match", feats, f_ref, f_next, sf, cfg);  // create params
  auto head = ps.all().at("match/ctx/head/w");
  fill_uniform(head->val, rng, -0.1, 0.1);
  auto out = context_refine(ps, "match", feats, f_ref, f_next, sf, cfg);
  CHECK(max_abs_diff(out->val, sf->val) > 0.0);
}

TEST_CASE("fixed-seed regression checksum for a two-level coarse-to-fine pass") {
  std::mt19937_64 rng(42);
  ParamStore ps(7);
  MatchingConfig cfg = tiny_cfg();
  auto r6 = ag::leaf(random_hwc(3, 3, 4, rng));
  auto n6 = ag::leaf(random_hwc(3, 3, 4, rng));
  auto r5 = ag::leaf(random_hwc(6, 6, 4, rng));
  auto n5 = ag::leaf(random_hwc(6, 6, 4, rng));

  auto top = estimate_level(ps, "match", 6, r6, n6, std::nullopt, cfg);
  auto up = upsample_sf(top.sf);
  auto fine = estimate_level(ps, "match", 5, r5, n5, up, cfg);
  auto refined = context_refine(ps, "match", fine.features, r5, n5, fine.sf, cfg);
  // Frozen after the first verified build.
  CHECK(checksum(refined->val) == doctest::Approx(-0.080612026604).epsilon(1e-9));
}

TEST_CASE("matching stack passes a finite-difference gradient check") {
  std::mt19937_64 rng(8);
  ParamStore ps(8);
  MatchingConfig cfg = tiny_cfg();
  cfg.radius = 1;
  cfg.estimator_widths = {4, 3};
  cfg.context_widths = {3, 3};
  cfg.context_dilations = {1, 2};

  Tensor tr6 = random_hwc(2, 2, 3, rng), tn6 = random_hwc(2, 2, 3, rng);
  Tensor tr5 = random_hwc(4, 4, 3, rng), tn5 = random_hwc(4, 4, 3, rng);
  auto r6 = ag::leaf(tr6, true), n6 = ag::leaf(tn6, true);
  auto r5 = ag::leaf(tr5, true), n5 = ag::leaf(tn5, true);
  Tensor gt = Tensor::hwc(4, 4, 4);
  fill_uniform(gt, rng, -1, 1);
  Tensor ones = Tensor::hw(4, 4);
  ones.fill(1.0);

  auto build = [&]() {
    auto top = estimate_level(ps, "match", 6, r6, n6, std::nullopt, cfg);
    auto up = upsample_sf(top.sf);
    auto fine = estimate_level(ps, "match", 5, r5, n5, up, cfg);
    auto refined = context_refine(ps, "match", fine.features, r5, n5, fine.sf, cfg);
    return ag::sf_norm_loss(refined, gt, ones);
  };
  build();
  // Nudge the context head off its zero initialization so its input path
  // carries gradient too.
  fill_uniform(ps.all().at("match/ctx/head/w")->val, rng, -0.05, 0.05);

  std::vector<std::pair<std::string, ag::Var>> probes{
      {"r6", r6}, {"n6", n6}, {"r5", r5}, {"n5", n5}};
  for (auto& [name, v] : ps.all()) probes.emplace_back(name, v);
  auto res = grad_check(build, probes);
  CHECK(res.max_rel_err < 1e-3);
}
