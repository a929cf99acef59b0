#include "dlf/checks.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "dlf/backbone.hpp"
#include "dlf/fusion.hpp"
#include "dlf/gradcheck.hpp"
#include "dlf/matching.hpp"
#include "dlf/network.hpp"

namespace dlf {

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kOracleTol = 1e-6;

Tensor rand_hwc(int h, int w, int c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor t = Tensor::hwc(h, w, c);
  fill_uniform(t, rng, lo, hi);
  return t;
}

// The scalarizing target must stay identical across the repeated
// build-function evaluations a finite-difference check performs, so it is
// derived from a fixed seed instead of the shared stream.
ag::Var scalarize(const ag::Var& x, std::uint64_t gt_seed) {
  std::mt19937_64 r(gt_seed);
  Tensor gt = x->val.like_zeros();
  fill_uniform(gt, r, -1, 1);
  Tensor ones = Tensor::hw(x->val.h(), x->val.w());
  ones.fill(1.0);
  return ag::sf_norm_loss(x, gt, ones);
}

struct Battery {
  std::mt19937_64 rng;
  bool faulty;
  std::vector<CheckResult> results;

  void grad(const std::string& name, const std::function<ag::Var()>& build,
            std::vector<std::pair<std::string, ag::Var>> probes) {
    auto res = grad_check(build, probes);
    double err = res.max_rel_err;
    // Fault-injection fixture: misreport one battery entry so callers can
    // verify failures are surfaced by name.
    if (faulty && name == "conv2d") err += 1.0;
    results.push_back({name, err, kGradTol, err <= kGradTol});
  }

  void oracle(const std::string& name, double err) {
    results.push_back({name, err, kOracleTol, err <= kOracleTol});
  }
};

}  // namespace

std::vector<CheckResult> run_checks(const CheckOptions& opts) {
  Battery b{std::mt19937_64(opts.seed), opts.inject_gradient_fault, {}};
  auto& rng = b.rng;

  {  // plain convolution
    auto x = ag::leaf(rand_hwc(5, 5, 2, rng), true);
    auto w = ag::leaf([&] { Tensor t = Tensor::kkio(3, 2, 3); fill_uniform(t, rng, -1, 1); return t; }(), true);
    auto bias = ag::leaf([&] { Tensor t = Tensor::vec(3); fill_uniform(t, rng, -1, 1); return t; }(), true);
    const std::uint64_t gt_seed = rng();
    b.grad("conv2d", [&] { return scalarize(ag::conv2d(x, w, bias, 1), gt_seed); },
           {{"x", x}, {"w", w}, {"b", bias}});
  }
  {  // confidence convolution (both outputs via the confidence channel append)
    auto f = ag::leaf(rand_hwc(5, 5, 2, rng), true);
    auto c = ag::leaf(rand_hwc(5, 5, 1, rng, 0.05, 1.0), true);
    auto wf = ag::leaf([&] { Tensor t = Tensor::kkio(3, 2, 2); fill_uniform(t, rng, -1, 1); return t; }(), true);
    auto wc = ag::leaf([&] { Tensor t = Tensor::hw(3, 3); fill_uniform(t, rng, -0.5, 1.0); return t; }(), true);
    auto bias = ag::leaf([&] { Tensor t = Tensor::vec(2); fill_uniform(t, rng, -1, 1); return t; }(), true);
    const std::uint64_t gt_seed = rng();
    b.grad("confidence_conv",
           [&] {
             auto [fo, co] = ag::conf_conv(f, c, wf, wc, bias, 1);
             return scalarize(ag::concat_c({fo, co}), gt_seed);
           },
           {{"f", f}, {"c", c}, {"wf", wf}, {"wc", wc}, {"b", bias}});
  }
  {  // max-confidence pooling (well-separated confidences avoid tie kinks)
    auto f = ag::leaf(rand_hwc(4, 4, 2, rng), true);
    Tensor ct = Tensor::hw(4, 4);
    for (std::size_t i = 0; i < ct.size(); ++i) ct[i] = 0.1 + 0.05 * double(i);
    auto c = ag::leaf(ct, true);
    const std::uint64_t gt_seed = rng();
    b.grad("max_confidence_pool",
           [&] {
             auto [fo, co] = ag::max_conf_pool(f, c);
             return scalarize(ag::concat_c({fo, co}), gt_seed);
           },
           {{"f", f}, {"c", c}});
  }
  {  // nearest-neighbor upsampling
    auto x = ag::leaf(rand_hwc(3, 3, 2, rng), true);
    const std::uint64_t gt_seed = rng();
    b.grad("nn_upsample", [&] { return scalarize(ag::nn_up2(x), gt_seed); }, {{"x", x}});
  }
  {  // warp (flow nudged away from the bilinear kinks on the integer grid)
    auto f = ag::leaf(rand_hwc(6, 6, 2, rng), true);
    Tensor fl = rand_hwc(6, 6, 2, rng, -1.3, 1.3);
    for (std::size_t i = 0; i < fl.size(); ++i)
      if (std::fabs(fl[i] - std::round(fl[i])) < 0.05) fl[i] += 0.1;
    auto flow = ag::leaf(fl, true);
    const std::uint64_t gt_seed = rng();
    b.grad("warp", [&] { return scalarize(ag::warp(f, flow), gt_seed); },
           {{"f", f}, {"flow", flow}});
  }
  {  // cost volume
    auto x = ag::leaf(rand_hwc(5, 5, 3, rng), true);
    auto y = ag::leaf(rand_hwc(5, 5, 3, rng), true);
    const std::uint64_t gt_seed = rng();
    b.grad("cost_volume", [&] { return scalarize(ag::cost_volume(x, y, 2), gt_seed); },
           {{"a", x}, {"b", y}});
  }
  {  // bilinear upsampling
    auto x = ag::leaf(rand_hwc(3, 4, 4, rng), true);
    const std::uint64_t gt_seed = rng();
    b.grad("bilinear_upsample",
           [&] { return scalarize(ag::scale(ag::bilinear_up2(x), 2.0), gt_seed); },
           {{"x", x}});
  }
  {  // estimator + context stack
    ParamStore ps(opts.seed + 1);
    MatchingConfig mcfg;
    mcfg.radius = 1;
    mcfg.estimator_widths = {4, 3};
    mcfg.context_widths = {3, 3};
    mcfg.context_dilations = {1, 2};
    auto r = ag::leaf(rand_hwc(4, 4, 3, rng), true);
    auto n = ag::leaf(rand_hwc(4, 4, 3, rng), true);
    const std::uint64_t gt_seed = rng();
    auto build = [&] {
      auto est = estimate_level(ps, "m", 6, r, n, std::nullopt, mcfg);
      auto refined = context_refine(ps, "m", est.features, r, n, est.sf, mcfg);
      return scalarize(refined, gt_seed);
    };
    build();
    fill_uniform(ps.all().at("m/ctx/head/w")->val, rng, -0.05, 0.05);
    std::vector<std::pair<std::string, ag::Var>> probes{{"f_ref", r}, {"f_next", n}};
    for (auto& [name, v] : ps.all()) probes.emplace_back(name, v);
    b.grad("estimator_context", build, probes);
  }
  {  // fusion level
    ParamStore ps(opts.seed + 2);
    FusionConfig fcfg;
    auto r = ag::leaf(rand_hwc(4, 4, 3, rng), true);
    auto l = ag::leaf(rand_hwc(4, 4, 3, rng), true);
    auto c = ag::leaf(rand_hwc(4, 4, 1, rng, 0.05, 1.0), true);
    const std::uint64_t gt_seed = rng();
    auto build = [&] { return scalarize(fuse_level(ps, "f", 2, r, l, c, 3, fcfg), gt_seed); };
    build();
    std::vector<std::pair<std::string, ag::Var>> probes{{"rgb", r}, {"lidar", l}, {"conf", c}};
    for (auto& [name, v] : ps.all()) probes.emplace_back(name, v);
    b.grad("fusion", build, probes);
  }
  {  // multi-scale loss (through a leaf prediction)
    ModelConfig cfg;
    cfg.levels = 1;
    cfg.out_level = 0;
    cfg.level_weights = {0.32, 0.08};
    Tensor gt = rand_hwc(4, 4, 4, rng, -2, 2);
    Tensor valid = Tensor::hw(4, 4);
    for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = i % 3 ? 1.0 : 0.0;
    auto fine = ag::leaf(rand_hwc(4, 4, 4, rng), true);
    auto coarse = ag::leaf(rand_hwc(2, 2, 4, rng), true);
    auto build = [&] {
      MultiScalePrediction pred;
      pred.levels[1] = coarse;
      pred.levels[0] = fine;
      pred.refined = fine;
      return multiscale_loss(pred, gt, valid, cfg).total;
    };
    b.grad("multiscale_loss", build, {{"fine", fine}, {"coarse", coarse}});
  }

  // Forward oracles: optimized kernels against the naive serial references.
  {
    Tensor x = rand_hwc(9, 11, 3, rng), w = Tensor::kkio(3, 3, 4), bias = Tensor::vec(4);
    fill_uniform(w, rng, -1, 1);
    fill_uniform(bias, rng, -1, 1);
    Tensor a, r;
    kernels::conv2d_fwd(x, w, bias, 1, 1, a);
    ref::conv2d_fwd(x, w, bias, 1, 1, r);
    b.oracle("conv2d_vs_reference", max_abs_diff(a, r));
  }
  {
    Tensor f = rand_hwc(8, 8, 3, rng), flow = rand_hwc(8, 8, 2, rng, -2, 2);
    Tensor a, r;
    kernels::warp_fwd(f, flow, a);
    ref::warp_fwd(f, flow, r);
    b.oracle("warp_vs_reference", max_abs_diff(a, r));
  }
  {
    Tensor p = rand_hwc(7, 7, 3, rng), q = rand_hwc(7, 7, 3, rng);
    Tensor a, r;
    kernels::cost_volume_fwd(p, q, 2, a);
    ref::cost_volume_fwd(p, q, 2, r);
    b.oracle("cost_volume_vs_reference", max_abs_diff(a, r));
  }
  {
    Tensor f = rand_hwc(8, 8, 2, rng), c = rand_hwc(8, 8, 1, rng, 0.0, 1.0);
    Tensor wf = Tensor::kkio(3, 2, 3), wc = Tensor::hw(3, 3), bias = Tensor::vec(3);
    fill_uniform(wf, rng, -1, 1);
    fill_uniform(wc, rng, -0.5, 1.0);
    fill_uniform(bias, rng, -1, 1);
    Tensor af, ac, rf, rc;
    kernels::conf_conv_fwd(f, c, wf, wc, bias, 1, af, ac);
    ref::conf_conv_fwd(f, c, wf, wc, bias, 1, rf, rc);
    b.oracle("confidence_conv_vs_reference",
             std::max(max_abs_diff(af, rf), max_abs_diff(ac, rc)));
  }
  {
    Tensor f = rand_hwc(6, 6, 2, rng), c = rand_hwc(6, 6, 1, rng, 0.0, 1.0);
    Tensor af, ac, rf, rc;
    kernels::max_conf_pool_fwd(f, c, af, ac);
    ref::max_conf_pool_fwd(f, c, rf, rc);
    b.oracle("max_confidence_pool_vs_reference",
             std::max(max_abs_diff(af, rf), max_abs_diff(ac, rc)));
  }

  return b.results;
}

std::string format_check_report(const std::vector<CheckResult>& results) {
  std::ostringstream ss;
  for (const auto& r : results) {
    ss << (r.passed ? "PASS" : "FAIL") << "  " << r.name;
    for (std::size_t i = r.name.size(); i < 34; ++i) ss << ' ';
    ss << "max rel err " << r.max_rel_err << " (tol " << r.tolerance << ")\n";
  }
  return ss.str();
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.passed) return false;
  return true;
}

}  // namespace dlf
