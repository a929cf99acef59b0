// Command-line front end: train / eval / infer / synth / check.
// Exit codes: 0 success, 1 check or metric failure, 2 usage/IO error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dlf/checks.hpp"
#include "dlf/metrics.hpp"
#include "dlf/network.hpp"

namespace fs = std::filesystem;
using namespace dlf;

namespace {

// ----- flat key-value config files ------------------------------------------
// "section.key value" per line, '#' comments. Flags override file values;
// every command writes its resolved configuration next to its outputs.

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::map<std::string, std::string> kv;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    std::string value, tok;
    while (ss >> tok) value += (value.empty() ? "" : " ") + tok;
    kv[key] = value;
  }
  return kv;
}

struct Resolver {
  std::map<std::string, std::string> file;
  std::map<std::string, std::string> resolved;

  template <typename T>
  T get(const CLI::Option* flag, const std::string& key, T flag_value, T def) {
    T v = def;
    if (auto it = file.find(key); it != file.end()) {
      std::istringstream ss(it->second);
      ss >> v;
    }
    if (flag && flag->count() > 0) v = flag_value;
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    resolved[key] = ss.str();
    return v;
  }

  std::string get_str(const CLI::Option* flag, const std::string& key, std::string flag_value,
                      std::string def) {
    std::string v = def;
    if (auto it = file.find(key); it != file.end()) v = it->second;
    if (flag && flag->count() > 0) v = flag_value;
    resolved[key] = v;
    return v;
  }

  void note(const std::string& key, const std::string& value) { resolved[key] = value; }

  void write(const std::string& out_dir) const {
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    std::ofstream out(out_dir + "/resolved_config.txt");
    for (const auto& [k, v] : resolved) out << k << " " << v << "\n";
  }
};

// ----- model flags shared by train/eval/infer -------------------------------

struct ModelFlags {
  std::string preset = "full";
  bool no_conf_conv = false, no_conf_concat = false;
  unsigned seed = 0;
  CLI::Option *preset_opt = nullptr, *conv_opt = nullptr, *concat_opt = nullptr,
              *seed_opt = nullptr;

  void add(CLI::App* app) {
    preset_opt = app->add_option("--preset", preset,
                                 "model size preset: full (6 levels) or tiny (3 levels)");
    conv_opt = app->add_flag("--no-conf-conv", no_conf_conv,
                             "replace confidence convolutions with plain convolutions");
    concat_opt = app->add_flag("--no-conf-concat", no_conf_concat,
                               "drop the confidence map from the fusion concatenation");
    seed_opt = app->add_option("--seed", seed, "root random seed");
  }

  ModelConfig resolve(Resolver& r) const {
    ModelConfig cfg;
    const std::string p = r.get_str(preset_opt, "model.preset", preset, "full");
    if (p == "tiny") {
      cfg.channels = {8, 12, 16};
      cfg.levels = 3;
      cfg.out_level = 1;
      cfg.radius = 2;
      cfg.estimator_widths = {16, 12};
      cfg.context_widths = {12, 8};
      cfg.context_dilations = {1, 2};
      cfg.level_weights = {0.32, 0.08, 0.02};
    } else if (p != "full") {
      throw CLI::ValidationError("--preset must be 'full' or 'tiny'");
    }
    cfg.use_confidence_conv = !r.get(conv_opt, "model.no_conf_conv", no_conf_conv, false);
    cfg.use_confidence_concat = !r.get(concat_opt, "model.no_conf_concat", no_conf_concat, false);
    cfg.seed = r.get(seed_opt, "model.seed", seed, 0u);
    return cfg;
  }
};

// ----- dataset specs --------------------------------------------------------
// "synth" (4 built-in scenes), "synth:<manifest>", "kitti:<dir>", "ft3d:<dir>".

std::vector<Sample> load_kitti_dir(const std::string& dir) {
  std::vector<Sample> out;
  const fs::path flow_dir = fs::path(dir) / "flow_occ";
  if (!fs::is_directory(flow_dir))
    throw std::runtime_error("missing KITTI flow directory: " + flow_dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(flow_dir))
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  for (const std::string& id : ids) {
    const std::string frame = id.substr(0, id.find('_'));
    KittiSamplePaths p;
    p.image_t = (fs::path(dir) / "image_2" / (id + ".png")).string();
    p.image_t1 = (fs::path(dir) / "image_2" / (frame + "_11.png")).string();
    p.disp0 = (fs::path(dir) / "disp_occ_0" / (id + ".png")).string();
    p.disp1 = (fs::path(dir) / "disp_occ_1" / (id + ".png")).string();
    p.flow = (flow_dir / (id + ".png")).string();
    p.calib = (fs::path(dir) / "calib_cam_to_cam" / (frame + ".txt")).string();
    out.push_back(load_kitti_sample(p));
  }
  return out;
}

std::vector<Sample> load_ft3d_dir(const std::string& dir) {
  std::vector<Sample> out;
  Calibration calib = parse_simple_calib((fs::path(dir) / "calib.txt").string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    const auto pos = name.find("_img0.png");
    if (pos != std::string::npos) ids.push_back(name.substr(0, pos));
  }
  std::sort(ids.begin(), ids.end());
  for (const std::string& id : ids) {
    Ft3dSamplePaths p;
    const fs::path base = fs::path(dir) / id;
    p.image_t = base.string() + "_img0.png";
    p.image_t1 = base.string() + "_img1.png";
    p.disp0 = base.string() + "_disp0.pfm";
    p.disp1 = base.string() + "_disp1.pfm";
    p.flow = base.string() + "_flow.pfm";
    p.calib = calib;
    out.push_back(load_ft3d_sample(p));
  }
  return out;
}

std::vector<Sample> load_dataset(const std::string& spec) {
  if (spec == "synth") {
    SynthConfig cfg;
    std::vector<Sample> out;
    for (unsigned seed = 1; seed <= 4; ++seed) out.push_back(synth_generate(seed, cfg));
    return out;
  }
  const auto colon = spec.find(':');
  if (colon == std::string::npos)
    throw std::runtime_error("dataset spec must be synth, synth:<manifest>, kitti:<dir>, or "
                             "ft3d:<dir>; got: " + spec);
  const std::string kind = spec.substr(0, colon), path = spec.substr(colon + 1);
  if (!fs::exists(path)) throw std::runtime_error("dataset path does not exist: " + path);
  std::vector<Sample> out;
  if (kind == "synth") out = load_synth_manifest(path);
  else if (kind == "kitti") out = load_kitti_dir(path);
  else if (kind == "ft3d") out = load_ft3d_dir(path);
  else throw std::runtime_error("unknown dataset kind: " + kind);
  if (out.empty()) throw std::runtime_error("dataset is empty: " + spec);
  return out;
}

// ----- commands -------------------------------------------------------------

int cmd_train(Resolver& r, const ModelFlags& mf, const std::map<std::string, CLI::Option*>& o,
              const std::string& data, const std::string& out_dir, int steps, double lr,
              double density_lo, double density_hi, bool fixed_density, double fraction,
              double noise_sigma, bool robust, bool do_augment, unsigned train_seed) {
  ModelConfig mcfg = mf.resolve(r);
  TrainConfig tcfg;
  tcfg.steps = r.get(o.at("steps"), "train.steps", steps, 500);
  tcfg.lr = r.get(o.at("lr"), "train.lr", lr, 1e-4);
  tcfg.density_lo = r.get(o.at("dlo"), "train.density_lo", density_lo, 0.002);
  tcfg.density_hi = r.get(o.at("dhi"), "train.density_hi", density_hi, 0.2);
  tcfg.randomize_density = !r.get(o.at("fixed"), "train.fixed_density", fixed_density, false);
  tcfg.fixed_fraction = r.get(o.at("frac"), "train.fraction", fraction, 0.05);
  tcfg.noise_sigma = r.get(o.at("sigma"), "train.noise_sigma", noise_sigma, 0.1);
  tcfg.robust_loss = r.get(o.at("robust"), "train.robust_loss", robust, false);
  tcfg.augment = r.get(o.at("augment"), "train.augment", do_augment, false);
  tcfg.seed = r.get(o.at("tseed"), "train.seed", train_seed, 0u);
  tcfg.out_dir = out_dir;
  const std::string dataset = r.get_str(o.at("data"), "train.data", data, "synth");
  r.write(out_dir);

  auto samples = load_dataset(dataset);
  Model model(mcfg);
  TrainResult res = train(model, samples, tcfg);
  std::cout << "trained " << tcfg.steps << " steps on " << samples.size()
            << " samples; final train SF-EPE " << res.final_train_sf_epe << " px\n";
  if (!out_dir.empty())
    std::cout << "checkpoint: " << out_dir << "/ckpt_final.bin\nloss curve: " << out_dir
              << "/loss.csv\n";
  return 0;
}

int cmd_eval(Resolver& r, const std::string& ckpt, const std::string& data,
             const std::string& out_dir, const std::vector<int>& points, double fraction,
             bool sparse_eval, bool error_maps, unsigned seed) {
  r.write(out_dir);
  Model model = Model::load_checkpoint(ckpt);
  auto samples = load_dataset(data);

  std::vector<std::string> row_names;
  std::vector<MetricsReport> rows;
  std::vector<double> densities;
  std::vector<int> counts = points;
  if (counts.empty()) densities.push_back(fraction);

  auto eval_at = [&](const Sample& s, int si, int count, double frac) {
    std::mt19937_64 rng(seed + unsigned(si) * 977u);
    SparseDepthInput d0 =
        count > 0 ? sample_lidar_count(s.dense_disp0, s.dense_disp0_valid, count, rng)
                  : sample_lidar_fraction(s.dense_disp0, s.dense_disp0_valid, frac, rng);
    SparseDepthInput d1 =
        count > 0 ? sample_lidar_count(s.dense_disp1, s.dense_disp1_valid, count, rng)
                  : sample_lidar_fraction(s.dense_disp1, s.dense_disp1_valid, frac, rng);
    Tensor pred = predict(model, s, d0, d1);
    MetricsReport rep = evaluate(pred, s.gt, s.gt_valid, s.calib);
    if (sparse_eval) {
      SparseEval3d se = sparse_eval_3d(pred, s.gt, d0.validity, s.calib);
      rep.sf_3d = se.sf_3d;
      rep.sf_epe_3d = se.sf_epe_3d;
    }
    if (error_maps && !out_dir.empty())
      render_error_map(pred, s.gt, s.gt_valid,
                       out_dir + "/errmap_" + std::to_string(si) + ".png");
    return rep;
  };

  for (std::size_t si = 0; si < samples.size(); ++si) {
    for (int c : counts) {
      rows.push_back(eval_at(samples[si], int(si), c, 0.0));
      row_names.push_back("sample" + std::to_string(si) + "_points" + std::to_string(c));
    }
    for (double f : densities) {
      rows.push_back(eval_at(samples[si], int(si), 0, f));
      row_names.push_back("sample" + std::to_string(si) + "_fraction" + std::to_string(f));
    }
  }
  // Aggregate over samples per density setting.
  const std::size_t per = counts.size() + densities.size();
  for (std::size_t d = 0; d < per; ++d) {
    MetricsReport agg;
    double epe = 0.0;
    long n = 0;
    for (std::size_t si = 0; si < samples.size(); ++si) {
      const MetricsReport& rep = rows[si * per + d];
      if (rep.sf_epe) {
        epe += *rep.sf_epe * rep.valid_count;
        n += rep.valid_count;
      }
    }
    if (n > 0) agg.sf_epe = epe / double(n);
    agg.valid_count = n;
    rows.push_back(agg);
    row_names.push_back("aggregate_" + std::to_string(d));
  }

  if (!out_dir.empty()) write_metrics_csv(out_dir + "/metrics.csv", row_names, rows);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::cout << "== " << row_names[i] << "\n" << format_metrics_table(rows[i]);
  return 0;
}

int cmd_infer(Resolver& r, const std::string& ckpt, const std::string& img0,
              const std::string& img1, const std::string& d0p, const std::string& d1p,
              const std::string& out_dir) {
  r.write(out_dir.empty() ? "." : out_dir);
  Model model = Model::load_checkpoint(ckpt);
  Sample s;
  KittiSamplePaths kp;
  // Reuse the loaders piecewise: images plus two sparse disparity maps.
  {
    Tensor flow_dummy;
    SparseDepthInput d0, d1;
    read_kitti_disp_png(d0p, d0.disparity, d0.validity);
    read_kitti_disp_png(d1p, d1.disparity, d1.validity);
    cv::Mat im = cv::imread(img0, cv::IMREAD_COLOR);
    if (im.empty()) throw std::runtime_error("cannot read image: " + img0);
    cv::Mat im1 = cv::imread(img1, cv::IMREAD_COLOR);
    if (im1.empty()) throw std::runtime_error("cannot read image: " + img1);
    auto to_tensor = [](const cv::Mat& m) {
      Tensor t = Tensor::hwc(m.rows, m.cols, 3);
      for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
          const auto& px = m.at<cv::Vec3b>(y, x);
          t.at(y, x, 0) = px[2] / 255.0;
          t.at(y, x, 1) = px[1] / 255.0;
          t.at(y, x, 2) = px[0] / 255.0;
        }
      return t;
    };
    s.image_t = to_tensor(im);
    s.image_t1 = to_tensor(im1);
    Tensor pred = predict(model, s, d0, d1);

    const std::string dir = out_dir.empty() ? "." : out_dir;
    fs::create_directories(dir);
    const int h = pred.h(), w = pred.w();
    Tensor flow = Tensor::hwc(h, w, 2), disp0 = Tensor::hw(h, w), disp1 = Tensor::hw(h, w);
    Tensor ones = Tensor::hw(h, w);
    ones.fill(1.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        flow.at(y, x, 0) = pred.at(y, x, 0);
        flow.at(y, x, 1) = pred.at(y, x, 1);
        disp0.at(y, x, 0) = std::max(pred.at(y, x, 2), 1.0 / 256.0);
        disp1.at(y, x, 0) = std::max(pred.at(y, x, 3), 1.0 / 256.0);
      }
    write_kitti_flow_png(dir + "/flow.png", flow, ones);
    write_kitti_disp_png(dir + "/disp0.png", disp0, ones);
    write_kitti_disp_png(dir + "/disp1.png", disp1, ones);
    // Raw float dump: exact values, one single-channel PFM per field.
    Tensor u = Tensor::hw(h, w), v = Tensor::hw(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        u.at(y, x, 0) = pred.at(y, x, 0);
        v.at(y, x, 0) = pred.at(y, x, 1);
      }
    write_pfm(dir + "/sf_u.pfm", u);
    write_pfm(dir + "/sf_v.pfm", v);
    write_pfm(dir + "/sf_d0.pfm", disp0);
    write_pfm(dir + "/sf_d1.pfm", disp1);
    std::cout << "wrote flow.png, disp0.png, disp1.png and PFM dumps to " << dir << "\n";
  }
  (void)kp;
  return 0;
}

int cmd_synth(Resolver& r, const std::string& out_dir, int count, unsigned seed, int height,
              int width) {
  if (out_dir.empty()) throw std::runtime_error("synth needs --out");
  r.write(out_dir);
  SynthConfig cfg;
  cfg.height = height;
  cfg.width = width;
  std::vector<unsigned> seeds;
  for (int i = 0; i < count; ++i) seeds.push_back(seed + unsigned(i));
  write_synth_manifest(out_dir + "/manifest.txt", seeds, cfg);
  // Preview renderings of the first scene.
  Sample s = synth_generate(seeds[0], cfg);
  write_kitti_disp_png(out_dir + "/preview_disp0.png", s.dense_disp0, s.dense_disp0_valid);
  Tensor flow = Tensor::hwc(cfg.height, cfg.width, 2);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      flow.at(y, x, 0) = s.gt.at(y, x, 0);
      flow.at(y, x, 1) = s.gt.at(y, x, 1);
    }
  write_kitti_flow_png(out_dir + "/preview_flow.png", flow, s.gt_valid);
  std::cout << "wrote " << count << "-scene manifest to " << out_dir << "/manifest.txt\n";
  return 0;
}

int cmd_check(Resolver& r, const std::string& out_dir, unsigned seed, bool inject_fault) {
  r.write(out_dir);
  CheckOptions opts;
  opts.seed = seed;
  opts.inject_gradient_fault = inject_fault;
  auto results = run_checks(opts);
  std::cout << format_check_report(results);
  return all_passed(results) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeepLiDARFlow scene-flow estimation from monocular RGB and sparse LiDAR"};
  app.require_subcommand(1);

  std::string config_path;
  if (const char* env = std::getenv("DEEPLIDARFLOW_CONFIG")) config_path = env;
  app.add_option("--config", config_path, "flat key-value config file (flags override)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  ModelFlags train_mf;
  train_mf.add(train_cmd);
  std::string tr_data = "synth", tr_out = "out_train";
  int tr_steps = 500;
  double tr_lr = 1e-4, tr_dlo = 0.002, tr_dhi = 0.2, tr_frac = 0.05, tr_sigma = 0.1;
  bool tr_fixed = false, tr_robust = false, tr_augment = false;
  unsigned tr_seed = 0;
  std::map<std::string, CLI::Option*> tr_opts;
  tr_opts["data"] = train_cmd->add_option("--data", tr_data, "dataset spec");
  tr_opts["steps"] = train_cmd->add_option("--steps", tr_steps, "optimizer steps");
  tr_opts["lr"] = train_cmd->add_option("--lr", tr_lr, "learning rate");
  tr_opts["dlo"] = train_cmd->add_option("--density-lo", tr_dlo, "min LiDAR density");
  tr_opts["dhi"] = train_cmd->add_option("--density-hi", tr_dhi, "max LiDAR density");
  tr_opts["fixed"] = train_cmd->add_flag("--fixed-density", tr_fixed,
                                         "disable per-step density randomization");
  tr_opts["frac"] = train_cmd->add_option("--fraction", tr_frac, "fixed density fraction");
  tr_opts["sigma"] = train_cmd->add_option("--noise-sigma", tr_sigma, "disparity noise sigma");
  tr_opts["robust"] = train_cmd->add_flag("--robust", tr_robust, "robust fine-tuning loss");
  tr_opts["augment"] = train_cmd->add_flag("--augment", tr_augment, "photometric augmentation");
  tr_opts["tseed"] = train_cmd->add_option("--train-seed", tr_seed, "training loop seed");
  train_cmd->add_option("--out", tr_out, "output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data = "synth", ev_out = "out_eval";
  std::vector<int> ev_points;
  double ev_frac = 0.05;
  bool ev_sparse = false, ev_maps = false;
  unsigned ev_seed = 0;
  eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", ev_data, "dataset spec");
  eval_cmd->add_option("--points", ev_points, "fixed LiDAR point counts (density sweep)")
      ->delimiter(',');
  eval_cmd->add_option("--fraction", ev_frac, "LiDAR density fraction");
  eval_cmd->add_flag("--sparse-eval", ev_sparse, "3D metrics at the sparse input locations");
  eval_cmd->add_flag("--error-maps", ev_maps, "write per-sample error maps");
  eval_cmd->add_option("--seed", ev_seed, "sampling seed");
  eval_cmd->add_option("--out", ev_out, "output directory");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "run on one frame pair");
  std::string in_ckpt, in_img0, in_img1, in_d0, in_d1, in_out = "out_infer";
  infer_cmd->add_option("--checkpoint", in_ckpt, "checkpoint file")->required();
  infer_cmd->add_option("--image-t", in_img0, "reference image")->required();
  infer_cmd->add_option("--image-t1", in_img1, "second image")->required();
  infer_cmd->add_option("--depth-t", in_d0, "sparse disparity PNG, frame t")->required();
  infer_cmd->add_option("--depth-t1", in_d1, "sparse disparity PNG, frame t+1")->required();
  infer_cmd->add_option("--out", in_out, "output directory");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic scenes");
  std::string sy_out = "out_synth";
  int sy_count = 4, sy_h = 64, sy_w = 128;
  unsigned sy_seed = 1;
  synth_cmd->add_option("--count", sy_count, "number of scenes");
  synth_cmd->add_option("--seed", sy_seed, "first scene seed");
  synth_cmd->add_option("--height", sy_h, "scene height");
  synth_cmd->add_option("--width", sy_w, "scene width");
  synth_cmd->add_option("--out", sy_out, "output directory");

  // check
  auto* check_cmd = app.add_subcommand("check", "numeric self-tests");
  unsigned ck_seed = 0;
  bool ck_fault = false;
  std::string ck_out;
  check_cmd->add_option("--seed", ck_seed, "random seed");
  check_cmd->add_flag("--inject-fault", ck_fault, "fault-injection fixture (must fail)");
  check_cmd->add_option("--out", ck_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    Resolver r;
    if (!config_path.empty()) r.file = read_config_file(config_path);
    if (train_cmd->parsed())
      return cmd_train(r, train_mf, tr_opts, tr_data, tr_out, tr_steps, tr_lr, tr_dlo, tr_dhi,
                       tr_fixed, tr_frac, tr_sigma, tr_robust, tr_augment, tr_seed);
    if (eval_cmd->parsed())
      return cmd_eval(r, ev_ckpt, ev_data, ev_out, ev_points, ev_frac, ev_sparse, ev_maps,
                      ev_seed);
    if (infer_cmd->parsed()) return cmd_infer(r, in_ckpt, in_img0, in_img1, in_d0, in_d1, in_out);
    if (synth_cmd->parsed()) return cmd_synth(r, sy_out, sy_count, sy_seed, sy_h, sy_w);
    if (check_cmd->parsed()) return cmd_check(r, ck_out, ck_seed, ck_fault);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
