#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dlf/metrics.hpp"
#include "dlf/network.hpp"

using namespace dlf;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = {8, 12, 16};
  c.levels = 3;
  c.out_level = 1;
  c.radius = 2;
  c.estimator_widths = {16, 12};
  c.context_widths = {12, 8};
  c.context_dilations = {1, 2};
  c.level_weights = {0.32, 0.08, 0.02};
  return c;
}

SparseDepthInput random_depth(int h, int w, double density, std::mt19937_64& rng) {
  SparseDepthInput d;
  d.disparity = Tensor::hw(h, w);
  d.validity = Tensor::hw(h, w);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (u(rng) < density) {
        d.validity.at(y, x, 0) = 1.0;
        d.disparity.at(y, x, 0) = 2.0 + 30.0 * u(rng);
      }
  return d;
}

}  // namespace

TEST_CASE("model config text round trip") {
  ModelConfig c = tiny_config();
  c.use_confidence_concat = false;
  c.seed = 123;
  ModelConfig d = ModelConfig::deserialize(c.serialize());
  CHECK(c == d);
  CHECK_THROWS_AS(ModelConfig::deserialize("bogus_key 1\n"), std::runtime_error);
}

TEST_CASE("forward pass shapes, determinism, empty lidar") {
  std::mt19937_64 rng(1);
  Model m(tiny_config());
  Tensor img = Tensor::hwc(16, 24, 3);
  fill_uniform(img, rng, 0.0, 1.0);
  SparseDepthInput d = random_depth(16, 24, 0.2, rng);

  auto p1 = m.forward(img, img, d, d);
  CHECK(p1.full->val.h() == 16);
  CHECK(p1.full->val.w() == 24);
  CHECK(p1.full->val.c() == 4);
  CHECK(p1.refined->val.h() == 8);
  CHECK(p1.levels.at(3)->val.h() == 2);
  CHECK(all_finite(p1.full->val));

  auto p2 = m.forward(img, img, d, d);
  CHECK(max_abs_diff(p1.full->val, p2.full->val) == 0.0);

  SparseDepthInput empty;
  empty.disparity = Tensor::hw(16, 24);
  empty.validity = Tensor::hw(16, 24);
  auto p3 = m.forward(img, img, empty, empty);
  CHECK(all_finite(p3.full->val));
}

TEST_CASE("padded forward crops back to the input size") {
  std::mt19937_64 rng(2);
  Model m(tiny_config());
  Tensor img = Tensor::hwc(13, 21, 3);  // not divisible by 8
  fill_uniform(img, rng, 0.0, 1.0);
  SparseDepthInput d = random_depth(13, 21, 0.3, rng);
  auto p = m.forward_padded(img, img, d, d);
  CHECK(p.full->val.h() == 13);
  CHECK(p.full->val.w() == 21);
  CHECK(all_finite(p.full->val));
}

TEST_CASE("multiscale loss") {
  std::mt19937_64 rng(3);

  SUBCASE("perfect prediction scores zero at every level") {
    ModelConfig cfg = tiny_config();
    const int h = 16, w = 16;
    Tensor gt = Tensor::hwc(h, w, 4);
    fill_uniform(gt, rng, -4.0, 4.0);
    Tensor valid = Tensor::hw(h, w);
    valid.fill(1.0);
    MultiScalePrediction pred;
    for (int l = cfg.levels; l >= cfg.out_level; --l) {
      Tensor gl, vl;
      downsample_gt(gt, valid, l, gl, vl);
      pred.levels[l] = ag::leaf(gl);
      if (l == cfg.out_level) pred.refined = ag::leaf(gl);
    }
    auto loss = multiscale_loss(pred, gt, valid, cfg);
    CHECK(loss.total->val[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss.any_valid);
  }

  SUBCASE("single level, one valid pixel, error (3,4,0,0) gives loss 5") {
    ModelConfig cfg;
    cfg.levels = 0;
    cfg.out_level = 0;
    cfg.level_weights = {1.0};
    Tensor gt = Tensor::hwc(2, 2, 4);
    Tensor valid = Tensor::hw(2, 2);
    valid.at(0, 0, 0) = 1.0;
    Tensor p = gt;
    p.at(0, 0, 0) = 3.0;
    p.at(0, 0, 1) = 4.0;
    MultiScalePrediction pred;
    pred.levels[0] = ag::leaf(p);
    pred.refined = ag::leaf(p);
    auto loss = multiscale_loss(pred, gt, valid, cfg);
    CHECK(loss.total->val[0] == doctest::Approx(5.0));
  }

  SUBCASE("zero valid pixels flags the warning and contributes no loss") {
    ModelConfig cfg = tiny_config();
    Tensor gt = Tensor::hwc(16, 16, 4);
    Tensor valid = Tensor::hw(16, 16);
    MultiScalePrediction pred;
    for (int l = cfg.levels; l >= cfg.out_level; --l) {
      pred.levels[l] = ag::leaf(Tensor::hwc(16 >> l, 16 >> l, 4));
      if (l == cfg.out_level) pred.refined = pred.levels[l];
    }
    auto loss = multiscale_loss(pred, gt, valid, cfg);
    CHECK(loss.total->val[0] == 0.0);
    CHECK(!loss.any_valid);
  }

  SUBCASE("matches an independent per-pixel reference on random fields") {
    ModelConfig cfg = tiny_config();
    const int h = 16, w = 24;
    Tensor gt = Tensor::hwc(h, w, 4);
    fill_uniform(gt, rng, -5.0, 5.0);
    Tensor valid = Tensor::hw(h, w);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = u(rng) < 0.6 ? 1.0 : 0.0;
    MultiScalePrediction pred;
    for (int l = cfg.levels; l >= cfg.out_level; --l) {
      Tensor t = Tensor::hwc(h >> l, w >> l, 4);
      fill_uniform(t, rng, -2.0, 2.0);
      pred.levels[l] = ag::leaf(t);
      if (l == cfg.out_level) pred.refined = pred.levels[l];
    }
    auto loss = multiscale_loss(pred, gt, valid, cfg);

    // Reference: explicit block averaging and norm accumulation.
    double expect = 0.0;
    std::size_t wi = 0;
    for (int l = cfg.levels; l >= cfg.out_level; --l, ++wi) {
      const int f = 1 << l;
      const Tensor& p = pred.levels.at(l)->val;
      double sum = 0.0;
      int n = 0;
      for (int y = 0; y < h / f; ++y)
        for (int x = 0; x < w / f; ++x) {
          double acc[4] = {0, 0, 0, 0};
          int cnt = 0;
          for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx)
              if (valid.at(y * f + dy, x * f + dx, 0) > 0.0) {
                ++cnt;
                for (int c = 0; c < 4; ++c) acc[c] += gt.at(y * f + dy, x * f + dx, c);
              }
          if (cnt == 0) continue;
          ++n;
          double s = 0.0;
          for (int c = 0; c < 4; ++c) {
            const double e = p.at(y, x, c) - acc[c] / cnt / f;
            s += e * e;
          }
          sum += std::sqrt(s);
        }
      if (n > 0) expect += cfg.level_weights[wi] * sum / n;
    }
    CHECK(loss.total->val[0] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("training loop") {
  SynthConfig scfg;
  scfg.height = 64;
  scfg.width = 64;
  std::vector<Sample> samples{synth_generate(100, scfg)};
  ModelConfig mcfg = tiny_config();

  TrainConfig tcfg;
  tcfg.steps = 3;
  tcfg.seed = 5;
  tcfg.log_every = 1;

  SUBCASE("learning rate zero leaves every parameter unchanged") {
    Model m(mcfg);
    TrainConfig zero = tcfg;
    zero.lr = 0.0;
    train(m, samples, zero);
    Model fresh(mcfg);
    auto r = train(fresh, samples, TrainConfig{.steps = 0, .seed = 5});
    (void)r;
    // Compare against a model that never stepped: same seed, same init.
    Model init(mcfg);
    // Materialize by one forward with the same shapes.
    std::mt19937_64 rng(1);
    SparseDepthInput d = random_depth(64, 64, 0.1, rng);
    init.forward(samples[0].image_t, samples[0].image_t1, d, d);
    for (auto& [name, var] : m.params().all()) {
      REQUIRE(init.params().has(name));
      CHECK(max_abs_diff(var->val, init.params().all().at(name)->val) == 0.0);
    }
  }

  SUBCASE("fixed seed reproduces the loss curve exactly") {
    Model a(mcfg), b(mcfg);
    auto ra = train(a, samples, tcfg);
    auto rb = train(b, samples, tcfg);
    REQUIRE(ra.curve.size() == rb.curve.size());
    for (std::size_t i = 0; i < ra.curve.size(); ++i)
      CHECK(ra.curve[i].total == rb.curve[i].total);
  }

  SUBCASE("loss csv is emitted and training reduces the loss over a short run") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dlf_train_test").string();
    Model m(mcfg);
    TrainConfig cfg = tcfg;
    cfg.steps = 40;
    cfg.lr = 1e-3;
    cfg.randomize_density = false;
    cfg.fixed_fraction = 0.1;
    cfg.noise_sigma = 0.0;
    cfg.out_dir = dir;
    auto r = train(m, samples, cfg);
    REQUIRE(!r.curve.empty());
    CHECK(r.curve.back().total < r.curve.front().total);
    CHECK(fs::exists(dir + "/loss.csv"));
    CHECK(fs::exists(dir + "/ckpt_final.bin"));
    std::ifstream csv(dir + "/loss.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header.rfind("step,lr,total", 0) == 0);
    fs::remove_all(dir);
  }
}

TEST_CASE("checkpoint round trip and shape audit") {
  namespace fs = std::filesystem;
  std::mt19937_64 rng(7);
  Model m(tiny_config());
  Tensor img = Tensor::hwc(16, 16, 3);
  fill_uniform(img, rng, 0.0, 1.0);
  SparseDepthInput d = random_depth(16, 16, 0.2, rng);
  auto before = m.forward(img, img, d, d);

  const std::string path = (fs::temp_directory_path() / "dlf_ckpt_test.bin").string();
  m.save_checkpoint(path);
  Model loaded = Model::load_checkpoint(path);
  CHECK(loaded.config() == m.config());
  CHECK(loaded.params().count_scalars() == m.params().count_scalars());
  for (auto& [name, var] : m.params().all()) {
    const Tensor& lv = loaded.params().all().at(name)->val;
    for (std::size_t i = 0; i < lv.size(); ++i)
      CHECK(lv[i] == doctest::Approx(var->val[i]).epsilon(1e-6));  // float32 storage
  }
  auto after = loaded.forward(img, img, d, d);
  // Quantization compounds through the stack; outputs stay close.
  CHECK(max_abs_diff(before.full->val, after.full->val) < 1e-2);

  SUBCASE("parameter sets must match the architecture exactly") {
    Model never_run(tiny_config());  // empty registry
    never_run.save_checkpoint(path);
    CHECK_THROWS_WITH_AS(Model::load_checkpoint(path), doctest::Contains("mismatch"),
                         std::runtime_error);
  }

  SUBCASE("garbage files are rejected") {
    std::ofstream(path) << "not a checkpoint";
    CHECK_THROWS_AS(Model::load_checkpoint(path), std::runtime_error);
  }
  fs::remove(path);
}

TEST_CASE("ablation variants have distinct parameter registries") {
  std::mt19937_64 rng(8);
  Tensor img = Tensor::hwc(16, 16, 3);
  fill_uniform(img, rng, 0.0, 1.0);
  SparseDepthInput d = random_depth(16, 16, 0.3, rng);

  auto shapes = [&](bool conf_conv, bool conf_concat) {
    ModelConfig cfg = tiny_config();
    cfg.use_confidence_conv = conf_conv;
    cfg.use_confidence_concat = conf_concat;
    Model m(cfg);
    m.forward(img, img, d, d);
    return std::pair<std::size_t, std::size_t>{m.params().all().size(),
                                               m.params().count_scalars()};
  };
  auto full = shapes(true, true);
  auto no_conv = shapes(false, true);
  auto no_concat = shapes(true, false);
  CHECK(full != no_conv);    // confidence kernels disappear
  CHECK(full != no_concat);  // first fusion conv loses an input channel
  CHECK(no_conv != no_concat);
}
