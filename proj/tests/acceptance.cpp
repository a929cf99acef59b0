// End-to-end acceptance battery. Each numbered criterion prints exactly one
// PASS/FAIL line; the doctest assertions make ctest report the same verdict.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>

#include "dlf/backbone.hpp"
#include "dlf/checks.hpp"
#include "dlf/fusion.hpp"
#include "dlf/metrics.hpp"
#include "dlf/network.hpp"

using namespace dlf;

namespace {

void verdict(int index, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << index << " (" << name << "): " << detail
            << "\n";
  CHECK_MESSAGE(ok, "criterion ", index, " ", name, ": ", detail);
}

Tensor rand_hwc(int h, int w, int c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor t = Tensor::hwc(h, w, c);
  fill_uniform(t, rng, lo, hi);
  return t;
}

ModelConfig tiny_model(bool conf_conv = true, bool conf_concat = true) {
  ModelConfig cfg;
  cfg.channels = {8, 12, 16};
  cfg.levels = 3;
  cfg.out_level = 1;
  cfg.radius = 2;
  cfg.estimator_widths = {16, 12};
  cfg.context_widths = {12, 8};
  cfg.context_dilations = {1, 2};
  cfg.level_weights = {0.32, 0.08, 0.02};
  cfg.use_confidence_conv = conf_conv;
  cfg.use_confidence_concat = conf_concat;
  return cfg;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TEST_CASE("1: gradient suite") {
  const auto t0 = std::chrono::steady_clock::now();
  auto results = run_checks(CheckOptions{});
  bool ok = true;
  double worst = 0.0;
  for (const auto& r : results)
    if (r.tolerance == 1e-4) {  // finite-difference entries
      ok = ok && r.passed;
      worst = std::max(worst, r.max_rel_err);
    }
  const double secs = elapsed_s(t0);
  ok = ok && secs < 300.0;

  // The battery must also surface injected faults rather than mask them.
  CheckOptions faulty;
  faulty.inject_gradient_fault = true;
  ok = ok && !all_passed(run_checks(faulty));

  std::ostringstream d;
  d << "worst relative error " << worst << " (tol 1e-4), " << secs << " s";
  verdict(1, "gradient suite", ok, d.str());
}

TEST_CASE("2: oracle equivalence") {
  auto results = run_checks(CheckOptions{});
  bool ok = true;
  double worst = 0.0;
  for (const auto& r : results)
    if (r.tolerance == 1e-6) {  // forward-oracle entries
      ok = ok && r.passed;
      worst = std::max(worst, r.max_rel_err);
    }

  // Metrics against an independent reference loop on a random instance.
  std::mt19937_64 rng(11);
  const int h = 24, w = 32;
  Tensor pred = rand_hwc(h, w, 4, rng, -6, 6), gt = rand_hwc(h, w, 4, rng, -6, 6);
  Tensor valid = Tensor::hw(h, w);
  for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = (i % 5) ? 1.0 : 0.0;
  MetricsReport rep = evaluate(pred, gt, valid, Calibration{100, 16, 12, 0.5});
  long n = 0, bad_fl = 0, bad_sf = 0;
  double epe_sum = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (valid.at(y, x, 0) == 0.0) continue;
      ++n;
      double e2 = 0.0;
      for (int c = 0; c < 4; ++c) {
        const double e = pred.at(y, x, c) - gt.at(y, x, c);
        e2 += e * e;
      }
      epe_sum += std::sqrt(e2);
      auto comp_bad = [&](double epe, double mag) { return epe > 3.0 && epe > 0.05 * mag; };
      const double fu = pred.at(y, x, 0) - gt.at(y, x, 0), fv = pred.at(y, x, 1) - gt.at(y, x, 1);
      const double fl_err = std::hypot(fu, fv);
      const double fl_mag = std::hypot(gt.at(y, x, 0), gt.at(y, x, 1));
      const bool fl_out = comp_bad(fl_err, fl_mag);
      const bool d0_out = comp_bad(std::fabs(pred.at(y, x, 2) - gt.at(y, x, 2)),
                                   std::fabs(gt.at(y, x, 2)));
      const bool d1_out = comp_bad(std::fabs(pred.at(y, x, 3) - gt.at(y, x, 3)),
                                   std::fabs(gt.at(y, x, 3)));
      bad_fl += fl_out;
      bad_sf += (fl_out || d0_out || d1_out);
    }
  const double fl_ref = 100.0 * bad_fl / double(n), sf_ref = 100.0 * bad_sf / double(n);
  const double epe_ref = epe_sum / double(n);
  worst = std::max(worst, std::fabs(*rep.fl - fl_ref));
  worst = std::max(worst, std::fabs(*rep.sf - sf_ref));
  worst = std::max(worst, std::fabs(*rep.sf_epe - epe_ref));
  ok = ok && worst <= 1e-6;
  std::ostringstream d;
  d << "worst deviation from brute-force references " << worst << " (tol 1e-6)";
  verdict(2, "oracle equivalence", ok, d.str());
}

TEST_CASE("3: confidence contract") {
  std::mt19937_64 rng(21);
  bool ok = true;
  std::ostringstream why;

  // A stack of confidence ops on a half-masked input, run twice: the second
  // time with the masked disparity cells rewritten to garbage.
  auto run_stack = [&](const Tensor& disp, const Tensor& valid,
                       unsigned param_seed) -> std::vector<Tensor> {
    ParamStore ps(param_seed);
    PyramidConfig cfg;
    cfg.channels = {6, 8, 10};
    cfg.levels = 3;
    cfg.out_level = 1;
    PyramidOutput out = lidar_pyramid(ps, "l", SparseDepthInput{disp, valid}, cfg);
    std::vector<Tensor> tensors;
    for (auto& [lvl, f] : out.features) tensors.push_back(f->val);
    for (auto& [lvl, c] : out.confidences) tensors.push_back(c->val);
    return tensors;
  };

  const int h = 16, w = 16;
  Tensor disp = rand_hwc(h, w, 1, rng, 1, 30);
  Tensor valid = Tensor::hw(h, w);
  for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = (i % 3 == 0) ? 1.0 : 0.0;
  Tensor masked = disp;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i] == 0.0) {
      masked[i] = 1e6 * (double(i) - 37.0);  // garbage where the mask is off
      disp[i] = 0.0;
    }
  }

  // Confidences stay inside [0,1] at every level.
  {
    ParamStore ps(5);
    PyramidConfig cfg;
    cfg.channels = {6, 8, 10};
    cfg.levels = 3;
    cfg.out_level = 1;
    PyramidOutput out = lidar_pyramid(ps, "l", SparseDepthInput{disp, valid}, cfg);
    for (auto& [lvl, c] : out.confidences)
      for (std::size_t i = 0; i < c->val.size(); ++i)
        if (c->val[i] < -1e-12 || c->val[i] > 1.0 + 1e-12) ok = false;
    if (!ok) why << "confidence left [0,1]; ";

    // Full validity propagates to full confidence.
    Tensor ones = Tensor::hw(h, w);
    ones.fill(1.0);
    ParamStore ps2(5);
    PyramidOutput full = lidar_pyramid(ps2, "l", SparseDepthInput{disp, ones}, cfg);
    for (auto& [lvl, c] : full.confidences)
      for (std::size_t i = 0; i < c->val.size(); ++i)
        if (std::fabs(c->val[i] - 1.0) > 1e-9) ok = false;
    if (!ok && why.str().empty()) why << "c=1 input did not stay c=1; ";
  }

  // Masked feature values never influence outputs.
  {
    auto a = run_stack(disp, valid, 5);
    auto b = run_stack(masked, valid, 5);
    double diff = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) diff = std::max(diff, max_abs_diff(a[t], b[t]));
    if (diff > 1e-6) {
      ok = false;
      why << "masked values leaked (diff " << diff << "); ";
    }
  }
  verdict(3, "confidence contract", ok, ok ? "stack bounds, saturation, mask invariance hold"
                                           : why.str());
}

TEST_CASE("4: ablation wiring") {
  bool ok = true;
  std::ostringstream why;

  // Parameter-shape audits must distinguish the three variants.
  auto shapes = [](const ModelConfig& cfg) {
    Model m(cfg);
    std::mt19937_64 rng(3);
    Sample s;
    s.image_t = rand_hwc(16, 16, 3, rng, 0, 1);
    s.image_t1 = rand_hwc(16, 16, 3, rng, 0, 1);
    SparseDepthInput d;
    d.disparity = rand_hwc(16, 16, 1, rng, 1, 10);
    d.validity = Tensor::hw(16, 16);
    d.validity.fill(1.0);
    m.forward(s.image_t, s.image_t1, d, d);
    std::map<std::string, std::vector<int>> out;
    for (auto& [name, v] : m.params().all())
      out[name] = {v->val.dim(0), v->val.dim(1), v->val.dim(2), v->val.dim(3)};
    return out;
  };
  auto full = shapes(tiny_model(true, true));
  auto no_conv = shapes(tiny_model(false, true));
  auto no_concat = shapes(tiny_model(true, false));
  if (full == no_conv || full == no_concat || no_conv == no_concat) {
    ok = false;
    why << "parameter audits coincide; ";
  }

  // Disabled confidence-concat path: the confidence input carries no gradient.
  {
    std::mt19937_64 rng(4);
    ParamStore ps(9);
    FusionConfig fcfg;
    fcfg.use_confidence_concat = false;
    auto rgb = ag::leaf(rand_hwc(6, 6, 4, rng), true);
    auto lidar = ag::leaf(rand_hwc(6, 6, 4, rng), true);
    auto conf = ag::leaf(rand_hwc(6, 6, 1, rng, 0.1, 1.0), true);
    auto fused = fuse_level(ps, "f", 2, rgb, lidar, conf, 4, fcfg);
    Tensor gt = fused->val.like_zeros();
    fill_uniform(gt, rng, -1, 1);
    Tensor ones = Tensor::hw(6, 6);
    ones.fill(1.0);
    ag::backward(ag::sf_norm_loss(fused, gt, ones));
    double cmax = 0.0, rmax = 0.0;
    for (std::size_t i = 0; i < conf->grad.size(); ++i)
      cmax = std::max(cmax, std::fabs(conf->grad[i]));
    for (std::size_t i = 0; i < rgb->grad.size(); ++i)
      rmax = std::max(rmax, std::fabs(rgb->grad[i]));
    if (cmax != 0.0) {
      ok = false;
      why << "confidence gradient " << cmax << " through disabled concat; ";
    }
    if (rmax == 0.0) {
      ok = false;
      why << "probe graph dead; ";
    }
  }

  // Masked positions in a confidence convolution carry no feature gradient.
  {
    std::mt19937_64 rng(6);
    auto f = ag::leaf(rand_hwc(6, 6, 2, rng), true);
    Tensor ct = Tensor::hw(6, 6);
    for (std::size_t i = 0; i < ct.size(); ++i) ct[i] = (i % 4 == 0) ? 0.0 : 0.8;
    auto c = ag::leaf(ct, false);
    ParamStore ps(2);
    auto wf = ps.conv_weight("wf", 3, 2, 3);
    auto wc = ps.conf_weight("wc", 3);
    auto bias = ps.bias("b", 3);
    auto [fo, co] = ag::conf_conv(f, c, wf, wc, bias, 1);
    Tensor gt = fo->val.like_zeros();
    fill_uniform(gt, rng, -1, 1);
    Tensor ones = Tensor::hw(6, 6);
    ones.fill(1.0);
    ag::backward(ag::sf_norm_loss(fo, gt, ones));
    double leaked = 0.0, live = 0.0;
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x)
        for (int ch = 0; ch < 2; ++ch) {
          const double g = std::fabs(f->grad.at(y, x, ch));
          if (ct.at(y, x, 0) == 0.0) leaked = std::max(leaked, g);
          else live = std::max(live, g);
        }
    if (leaked != 0.0) {
      ok = false;
      why << "zero-confidence features received gradient " << leaked << "; ";
    }
    if (live == 0.0) {
      ok = false;
      why << "no live gradient; ";
    }
  }
  verdict(4, "ablation wiring", ok,
          ok ? "three distinct parameter audits; disabled paths carry zero gradient" : why.str());
}

TEST_CASE("5: overfit sanity") {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig scfg;  // 64 x 128 scenes, kept gentle enough to overfit cleanly
  scfg.max_rects = 3;
  scfg.max_shift = 4.0;
  std::vector<Sample> samples;
  for (unsigned seed = 1; seed <= 4; ++seed) samples.push_back(synth_generate(seed, scfg));

  Model model(tiny_model());
  TrainConfig tcfg;
  tcfg.steps = 1200;
  tcfg.lr = 2e-3;
  tcfg.seed = 1;
  tcfg.randomize_density = false;
  tcfg.fixed_fraction = 0.1;
  tcfg.noise_sigma = 0.0;
  tcfg.out_dir = "";
  TrainResult res = train(model, samples, tcfg);
  const double secs = elapsed_s(t0);
  const bool ok = res.final_train_sf_epe < 1.0 && secs < 1800.0;
  std::ostringstream d;
  d << "training SF-EPE " << res.final_train_sf_epe << " px after " << tcfg.steps << " steps, "
    << secs << " s";
  verdict(5, "overfit sanity", ok, d.str());
}

TEST_CASE("6: density robustness") {
  SynthConfig scfg;
  std::vector<Sample> train_set, held_out;
  for (unsigned seed = 1; seed <= 4; ++seed) train_set.push_back(synth_generate(seed, scfg));
  for (unsigned seed = 101; seed <= 102; ++seed) held_out.push_back(synth_generate(seed, scfg));

  auto train_model = [&](bool randomize) {
    Model m(tiny_model());
    TrainConfig tcfg;
    tcfg.steps = 700;
    tcfg.lr = 2e-3;
    tcfg.seed = 2;
    tcfg.randomize_density = randomize;
    tcfg.fixed_fraction = 0.2;  // the control only ever sees dense input
    tcfg.noise_sigma = 0.0;
    tcfg.out_dir = "";
    train(m, train_set, tcfg);
    return m;
  };
  auto sweep_ratio = [&](Model& m, std::vector<double>& epes) {
    epes.clear();
    for (double frac : {0.005, 0.02, 0.1, 0.2}) {
      double sum = 0.0;
      long n = 0;
      for (std::size_t si = 0; si < held_out.size(); ++si) {
        const Sample& s = held_out[si];
        std::mt19937_64 rng(900 + unsigned(si));
        auto d0 = sample_lidar_fraction(s.dense_disp0, s.dense_disp0_valid, frac, rng);
        auto d1 = sample_lidar_fraction(s.dense_disp1, s.dense_disp1_valid, frac, rng);
        Tensor pred = predict(m, s, d0, d1);
        auto epe = sf_epe(pred, s.gt, s.gt_valid);
        sum += *epe;
        ++n;
      }
      epes.push_back(sum / double(n));
    }
    const auto [lo, hi] = std::minmax_element(epes.begin(), epes.end());
    return *hi / *lo;
  };

  Model randomized = train_model(true);
  Model control = train_model(false);
  std::vector<double> epes_r, epes_c;
  const double ratio_r = sweep_ratio(randomized, epes_r);
  const double ratio_c = sweep_ratio(control, epes_c);
  const bool ok = ratio_r <= 1.5 && ratio_c > 1.5;
  std::ostringstream d;
  d << "max/min SF-EPE ratio over {0.5%,2%,10%,20%}: randomized " << ratio_r
    << " (<= 1.5 required), fixed-density control " << ratio_c << " (> 1.5 required)";
  verdict(6, "density robustness", ok, d.str());
}

TEST_CASE("7: metric threshold semantics") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> err_d(0.0, 8.0), mag_d(0.0, 120.0);
  bool ok = true;
  for (int trial = 0; trial < 5000 && ok; ++trial) {
    // 2D rule on a one-pixel flow field with a controlled error and magnitude.
    const double mag = mag_d(rng), err = err_d(rng), ang = err_d(rng);
    Tensor gt = Tensor::hwc(1, 1, 2), pred = Tensor::hwc(1, 1, 2), one = Tensor::hw(1, 1);
    one.fill(1.0);
    gt.at(0, 0, 0) = mag * std::cos(ang);
    gt.at(0, 0, 1) = mag * std::sin(ang);
    pred.at(0, 0, 0) = gt.at(0, 0, 0) + err;
    pred.at(0, 0, 1) = gt.at(0, 0, 1);
    const bool flagged = *component_outlier_rate(pred, gt, one) > 50.0;
    const bool expected = err > 3.0 && err > 0.05 * mag;
    if (flagged != expected) ok = false;
    // No pixel below either threshold may be an outlier.
    if (flagged && (err <= 3.0 || err <= 0.05 * mag)) ok = false;
  }
  // 3D rule via a head-on depth change: both points on the optical axis.
  Calibration cal{100, 0.5, 0.5, 0.5};
  std::uniform_real_distribution<double> z_d(1.0, 30.0), dz_d(0.0, 1.0);
  for (int trial = 0; trial < 5000 && ok; ++trial) {
    const double z0 = z_d(rng), gt_dz = dz_d(rng), pred_dz = dz_d(rng);
    auto disp_of = [&](double z) { return cal.focal * cal.baseline / z; };
    Tensor gt = Tensor::hwc(1, 1, 4), pred = Tensor::hwc(1, 1, 4), one = Tensor::hw(1, 1);
    one.fill(1.0);
    gt.at(0, 0, 2) = disp_of(z0);
    gt.at(0, 0, 3) = disp_of(z0 + gt_dz);
    pred.at(0, 0, 2) = gt.at(0, 0, 2);
    pred.at(0, 0, 3) = disp_of(z0 + pred_dz);
    SparseEval3d se = sparse_eval_3d(pred, gt, one, cal);
    const double err = std::fabs(pred_dz - gt_dz);
    const bool expected = err > 0.3 && err > 0.1 * gt_dz;
    const bool flagged = se.sf_3d && *se.sf_3d > 50.0;
    if (flagged != expected) ok = false;
    if (flagged && (err <= 0.3 || err <= 0.1 * gt_dz)) ok = false;
  }
  verdict(7, "metric threshold semantics", ok,
          ok ? "2D (3 px and 5%) and 3D (0.3 m and 10%) conjunctions hold on 10000 trials"
             : "conjunction rule violated");
}

TEST_CASE("8: codec fidelity") {
  std::mt19937_64 rng(88);
  bool ok = true;
  std::ostringstream why;
  const std::string dir = "acceptance_tmp";
  std::filesystem::create_directories(dir);

  {  // flow: quantized to 1/64 px, round trip must be exact
    const int h = 17, w = 23;
    Tensor flow = rand_hwc(h, w, 2, rng, -300, 300);
    for (std::size_t i = 0; i < flow.size(); ++i) flow[i] = std::round(flow[i] * 64.0) / 64.0;
    Tensor valid = Tensor::hw(h, w);
    for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = (i % 7 != 0) ? 1.0 : 0.0;
    write_kitti_flow_png(dir + "/f.png", flow, valid);
    Tensor rf, rv;
    read_kitti_flow_png(dir + "/f.png", rf, rv);
    double diff = max_abs_diff(rv, valid);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (valid.at(y, x, 0) != 0.0)
          for (int c = 0; c < 2; ++c)
            diff = std::max(diff, std::fabs(rf.at(y, x, c) - flow.at(y, x, c)));
    if (diff != 0.0) {
      ok = false;
      why << "flow round trip diff " << diff << "; ";
    }
  }
  {  // disparity: quantized to 1/256 px
    const int h = 19, w = 13;
    Tensor disp = rand_hwc(h, w, 1, rng, 0.1, 200);
    for (std::size_t i = 0; i < disp.size(); ++i)
      disp[i] = std::max(1.0, std::round(disp[i] * 256.0)) / 256.0;
    Tensor valid = Tensor::hw(h, w);
    for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = (i % 4 != 1) ? 1.0 : 0.0;
    write_kitti_disp_png(dir + "/d.png", disp, valid);
    Tensor rd, rv;
    read_kitti_disp_png(dir + "/d.png", rd, rv);
    double diff = max_abs_diff(rv, valid);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (valid.at(y, x, 0) != 0.0)
          diff = std::max(diff, std::fabs(rd.at(y, x, 0) - disp.at(y, x, 0)));
    if (diff != 0.0) {
      ok = false;
      why << "disparity round trip diff " << diff << "; ";
    }
  }
  {  // float maps: exact at float32 precision
    Tensor m = rand_hwc(9, 14, 1, rng, -50, 50);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = double(float(m[i]));
    write_pfm(dir + "/m.pfm", m);
    const double diff = max_abs_diff(read_pfm(dir + "/m.pfm"), m);
    if (diff != 0.0) {
      ok = false;
      why << "float map round trip diff " << diff << "; ";
    }
  }
  verdict(8, "codec fidelity", ok,
          ok ? "flow (1/64 px), disparity (1/256 px) and float maps round-trip exactly"
             : why.str());
}
