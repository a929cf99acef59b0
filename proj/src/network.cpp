#include "dlf/network.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dlf/metrics.hpp"

namespace dlf {

// --- Config serialization ---------------------------------------------------

namespace {

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < v.size(); ++i) ss << (i ? "," : "") << v[i];
  return ss.str();
}

template <typename T>
std::vector<T> split_list(const std::string& s) {
  std::vector<T> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::istringstream ts(tok);
    T v;
    ts >> v;
    out.push_back(v);
  }
  return out;
}

}  // namespace

std::string ModelConfig::serialize() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "channels " << join(channels) << "\n"
     << "levels " << levels << "\n"
     << "out_level " << out_level << "\n"
     << "radius " << radius << "\n"
     << "estimator_widths " << join(estimator_widths) << "\n"
     << "context_widths " << join(context_widths) << "\n"
     << "context_dilations " << join(context_dilations) << "\n"
     << "leaky_slope " << leaky_slope << "\n"
     << "use_confidence_conv " << int(use_confidence_conv) << "\n"
     << "use_confidence_concat " << int(use_confidence_concat) << "\n"
     << "level_weights " << join(level_weights) << "\n"
     << "seed " << seed << "\n";
  return ss.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string key, val;
  while (in >> key >> val) {
    if (key == "channels") c.channels = split_list<int>(val);
    else if (key == "levels") c.levels = std::stoi(val);
    else if (key == "out_level") c.out_level = std::stoi(val);
    else if (key == "radius") c.radius = std::stoi(val);
    else if (key == "estimator_widths") c.estimator_widths = split_list<int>(val);
    else if (key == "context_widths") c.context_widths = split_list<int>(val);
    else if (key == "context_dilations") c.context_dilations = split_list<int>(val);
    else if (key == "leaky_slope") c.leaky_slope = std::stod(val);
    else if (key == "use_confidence_conv") c.use_confidence_conv = std::stoi(val) != 0;
    else if (key == "use_confidence_concat") c.use_confidence_concat = std::stoi(val) != 0;
    else if (key == "level_weights") c.level_weights = split_list<double>(val);
    else if (key == "seed") c.seed = unsigned(std::stoul(val));
    else throw std::runtime_error("unknown model config key: " + key);
  }
  return c;
}

// --- Forward ----------------------------------------------------------------

MultiScalePrediction Model::forward(const Tensor& image_t, const Tensor& image_t1,
                                    const SparseDepthInput& depth_t,
                                    const SparseDepthInput& depth_t1) {
  PyramidConfig pcfg;
  pcfg.channels = cfg_.channels;
  pcfg.levels = cfg_.levels;
  pcfg.out_level = cfg_.out_level;
  pcfg.leaky_slope = cfg_.leaky_slope;
  pcfg.use_confidence_conv = cfg_.use_confidence_conv;
  FusionConfig fcfg;
  fcfg.leaky_slope = cfg_.leaky_slope;
  fcfg.use_confidence_concat = cfg_.use_confidence_concat;
  MatchingConfig mcfg;
  mcfg.radius = cfg_.radius;
  mcfg.estimator_widths = cfg_.estimator_widths;
  mcfg.context_widths = cfg_.context_widths;
  mcfg.context_dilations = cfg_.context_dilations;
  mcfg.leaky_slope = cfg_.leaky_slope;

  // Shared prefixes across the two time steps implement weight sharing.
  auto rgb_t = rgb_pyramid(ps_, "rgb", ag::leaf(image_t), pcfg);
  auto rgb_t1 = rgb_pyramid(ps_, "rgb", ag::leaf(image_t1), pcfg);
  auto lid_t = lidar_pyramid(ps_, "lidar", depth_t, pcfg);
  auto lid_t1 = lidar_pyramid(ps_, "lidar", depth_t1, pcfg);
  auto f_t = fuse_all(ps_, "fuse", rgb_t, lid_t, cfg_.channels, fcfg);
  auto f_t1 = fuse_all(ps_, "fuse", rgb_t1, lid_t1, cfg_.channels, fcfg);

  MultiScalePrediction out;
  std::optional<ag::Var> up;
  LevelEstimate est{nullptr, nullptr};
  for (int l = cfg_.levels; l >= cfg_.out_level; --l) {
    est = estimate_level(ps_, "match", l, f_t.at(l), f_t1.at(l), up, mcfg);
    out.levels[l] = est.sf;
    if (l > cfg_.out_level) up = upsample_sf(est.sf);
  }
  out.refined = context_refine(ps_, "match", est.features, f_t.at(cfg_.out_level),
                               f_t1.at(cfg_.out_level), est.sf, mcfg);

  ag::Var full = out.refined;
  for (int i = 0; i < cfg_.out_level; ++i) full = upsample_sf(full);
  out.full = full;
  return out;
}

namespace {

Tensor reflect_pad_image(const Tensor& img, int ph, int pw) {
  Tensor out = Tensor::hwc(ph, pw, img.c());
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x) {
      int sy = y < img.h() ? y : 2 * img.h() - 2 - y;
      int sx = x < img.w() ? x : 2 * img.w() - 2 - x;
      sy = std::clamp(sy, 0, img.h() - 1);
      sx = std::clamp(sx, 0, img.w() - 1);
      for (int c = 0; c < img.c(); ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  return out;
}

SparseDepthInput zero_pad_depth(const SparseDepthInput& d, int ph, int pw) {
  SparseDepthInput out;
  out.disparity = Tensor::hw(ph, pw);
  out.validity = Tensor::hw(ph, pw);
  for (int y = 0; y < d.disparity.h(); ++y)
    for (int x = 0; x < d.disparity.w(); ++x) {
      out.disparity.at(y, x, 0) = d.disparity.at(y, x, 0);
      out.validity.at(y, x, 0) = d.validity.at(y, x, 0);
    }
  return out;
}

}  // namespace

MultiScalePrediction Model::forward_padded(const Tensor& image_t, const Tensor& image_t1,
                                           const SparseDepthInput& depth_t,
                                           const SparseDepthInput& depth_t1) {
  const int div = 1 << cfg_.levels;
  const int h = image_t.h(), w = image_t.w();
  const int ph = (h + div - 1) / div * div, pw = (w + div - 1) / div * div;
  if (ph == h && pw == w) return forward(image_t, image_t1, depth_t, depth_t1);

  auto pred = forward(reflect_pad_image(image_t, ph, pw), reflect_pad_image(image_t1, ph, pw),
                      zero_pad_depth(depth_t, ph, pw), zero_pad_depth(depth_t1, ph, pw));
  // Crop the full-resolution field back; coarse levels stay on the padded
  // grid (their supervision masks carry zero validity in the pad).
  Tensor crop = Tensor::hwc(h, w, 4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 4; ++c) crop.at(y, x, c) = pred.full->val.at(y, x, c);
  pred.full = ag::leaf(std::move(crop));  // value-only view for callers
  return pred;
}

// --- Multi-scale loss -------------------------------------------------------

void downsample_gt(const Tensor& gt, const Tensor& valid, int level, Tensor& gt_out,
                   Tensor& valid_out) {
  const int f = 1 << level;
  const int oh = gt.h() / f, ow = gt.w() / f;
  const double scale = 1.0 / double(f);
  gt_out = Tensor::hwc(oh, ow, 4);
  valid_out = Tensor::hw(oh, ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc[4] = {0, 0, 0, 0};
      int n = 0;
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) {
          const int sy = y * f + dy, sx = x * f + dx;
          if (valid.at(sy, sx, 0) <= 0.0) continue;
          ++n;
          for (int c = 0; c < 4; ++c) acc[c] += gt.at(sy, sx, c);
        }
      if (n == 0) continue;
      valid_out.at(y, x, 0) = 1.0;
      for (int c = 0; c < 4; ++c) gt_out.at(y, x, c) = acc[c] / n * scale;
    }
}

LossBreakdown multiscale_loss(const MultiScalePrediction& pred, const Tensor& gt,
                              const Tensor& valid, const ModelConfig& cfg, bool robust) {
  LossBreakdown out;
  ag::Var total;
  std::size_t wi = 0;
  for (int l = cfg.levels; l >= cfg.out_level; --l, ++wi) {
    const double alpha = wi < cfg.level_weights.size() ? cfg.level_weights[wi] : 0.005;
    const ag::Var& p = l == cfg.out_level ? pred.refined : pred.levels.at(l);
    Tensor gt_l, valid_l;
    downsample_gt(gt, valid, l, gt_l, valid_l);
    if (!gt_l.same_spatial(p->val))
      throw std::invalid_argument("multiscale_loss: ground truth size mismatch at level " +
                                  std::to_string(l));
    bool any = false;
    for (std::size_t i = 0; i < valid_l.size(); ++i)
      if (valid_l[i] > 0.0) any = true;
    ag::Var term = ag::sf_norm_loss(p, gt_l, valid_l, robust);
    out.level_losses[l] = term->val[0];
    if (!any) continue;
    out.any_valid = true;
    ag::Var weighted = ag::scale(term, alpha);
    total = total ? ag::add(total, weighted) : weighted;
  }
  out.total = total ? total : ag::leaf(Tensor::scalar(0.0));
  return out;
}

// --- Checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'L', 'F', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);  // little-endian host
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

// Populate every parameter the configured architecture uses by running one
// forward pass on a minimal dummy input.
void materialize_params(Model& m) {
  const int div = 1 << m.config().levels;
  Tensor img = Tensor::hwc(div, div, 3);
  SparseDepthInput d;
  d.disparity = Tensor::hw(div, div);
  d.validity = Tensor::hw(div, div);
  d.validity.at(0, 0, 0) = 1.0;
  d.disparity.at(0, 0, 0) = 1.0;
  m.forward(img, img, d, d);
}

}  // namespace

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  const std::string cfg_text = cfg_.serialize();
  write_u32(out, uint32_t(cfg_text.size()));
  out.write(cfg_text.data(), cfg_text.size());
  write_u32(out, uint32_t(ps_.all().size()));
  for (const auto& [name, var] : ps_.all()) {
    write_u32(out, uint32_t(name.size()));
    out.write(name.data(), name.size());
    write_u32(out, uint32_t(var->val.ndim()));
    for (int i = 0; i < 4; ++i) write_u32(out, uint32_t(var->val.dim(i)));
    std::vector<float> blob(var->val.size());
    for (std::size_t i = 0; i < blob.size(); ++i) blob[i] = float(var->val[i]);
    out.write(reinterpret_cast<const char*>(blob.data()), blob.size() * sizeof(float));
  }
  if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::string cfg_text(read_u32(in), '\0');
  in.read(cfg_text.data(), cfg_text.size());
  Model m(ModelConfig::deserialize(cfg_text));
  materialize_params(m);

  const uint32_t count = read_u32(in);
  std::size_t loaded = 0;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name(read_u32(in), '\0');
    in.read(name.data(), name.size());
    const uint32_t nd = read_u32(in);
    int dims[4];
    for (int k = 0; k < 4; ++k) dims[k] = int(read_u32(in));
    auto& params = m.ps_.all();
    auto it = params.find(name);
    if (it == params.end())
      throw std::runtime_error("checkpoint/config mismatch: stored parameter '" + name +
                               "' is not used by this architecture");
    Tensor& dst = it->second->val;
    std::ostringstream have, want;
    for (int k = 0; k < 4; ++k) {
      have << (k ? "x" : "") << dst.dim(k);
      want << (k ? "x" : "") << dims[k];
    }
    if (int(nd) != dst.ndim() || have.str() != want.str())
      throw std::runtime_error("checkpoint/config mismatch for '" + name + "': config wants " +
                               have.str() + ", checkpoint stores " + want.str());
    std::vector<float> blob(dst.size());
    in.read(reinterpret_cast<char*>(blob.data()), blob.size() * sizeof(float));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    for (std::size_t k = 0; k < blob.size(); ++k) dst[k] = double(blob[k]);
    ++loaded;
  }
  if (loaded != m.ps_.all().size())
    throw std::runtime_error("checkpoint/config mismatch: architecture uses " +
                             std::to_string(m.ps_.all().size()) + " tensors, checkpoint has " +
                             std::to_string(loaded));
  return m;
}

// --- Training ---------------------------------------------------------------

namespace {

struct AdamState {
  Tensor m, v;
};

Tensor pad_gt(const Tensor& t, int ph, int pw) {
  if (t.h() == ph && t.w() == pw) return t;
  Tensor out = Tensor::hwc(ph, pw, t.c());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < t.c(); ++c) out.at(y, x, c) = t.at(y, x, c);
  return out;
}

}  // namespace

Tensor predict(Model& model, const Sample& sample, const SparseDepthInput& depth_t,
               const SparseDepthInput& depth_t1) {
  auto pred = model.forward_padded(sample.image_t, sample.image_t1, depth_t, depth_t1);
  return pred.full->val;
}

TrainResult train(Model& model, const std::vector<Sample>& samples, const TrainConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("train: empty sample list");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> density(cfg.density_lo, cfg.density_hi);
  AugmentConfig aug_cfg;

  std::map<std::string, AdamState> adam;
  double lr = cfg.lr;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;

  const int div = 1 << model.config().levels;
  TrainResult result;
  double window_sum = 0.0;
  int window_n = 0;
  double prev_window = -1.0;

  std::ofstream csv;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    csv.open(cfg.out_dir + "/loss.csv");
    csv << "step,lr,total";
    for (int l = model.config().levels; l >= model.config().out_level; --l) csv << ",l" << l;
    csv << "\n";
  }

  for (int step = 0; step < cfg.steps; ++step) {
    const Sample& base = samples[std::size_t(step) % samples.size()];
    Sample s = cfg.augment ? augment(base, aug_cfg, rng) : base;

    const double frac = cfg.randomize_density ? density(rng) : cfg.fixed_fraction;
    SparseDepthInput d0 = sample_lidar_fraction(s.dense_disp0, s.dense_disp0_valid, frac, rng);
    SparseDepthInput d1 = sample_lidar_fraction(s.dense_disp1, s.dense_disp1_valid, frac, rng);
    if (cfg.noise_sigma > 0.0) {
      d0 = add_noise(d0, cfg.noise_sigma, rng);
      d1 = add_noise(d1, cfg.noise_sigma, rng);
    }

    const int ph = (s.image_t.h() + div - 1) / div * div;
    const int pw = (s.image_t.w() + div - 1) / div * div;
    auto pred = model.forward_padded(s.image_t, s.image_t1, d0, d1);
    LossBreakdown loss = multiscale_loss(pred, pad_gt(s.gt, ph, pw), pad_gt(s.gt_valid, ph, pw),
                                         model.config(), cfg.robust_loss);

    const double total = loss.total->val[0];
    if (!std::isfinite(total)) {
      std::ostringstream diag;
      diag << "non-finite loss at step " << step << " (levels:";
      for (auto& [l, v] : loss.level_losses) diag << " l" << l << "=" << v;
      diag << ")";
      throw std::runtime_error(diag.str());
    }

    if (loss.any_valid && lr > 0.0) {
      ag::backward(loss.total);
      b1t *= b1;
      b2t *= b2;
      for (auto& [name, var] : model.params().all()) {
        if (var->grad.empty()) continue;
        AdamState& st = adam[name];
        if (st.m.empty()) {
          st.m = var->val.like_zeros();
          st.v = var->val.like_zeros();
        }
        for (std::size_t i = 0; i < var->val.size(); ++i) {
          const double g = var->grad[i];
          st.m[i] = b1 * st.m[i] + (1 - b1) * g;
          st.v[i] = b2 * st.v[i] + (1 - b2) * g * g;
          const double mh = st.m[i] / (1 - b1t);
          const double vh = st.v[i] / (1 - b2t);
          var->val[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
      }
    }

    window_sum += total;
    ++window_n;
    if (window_n == cfg.plateau_window) {
      const double mean = window_sum / window_n;
      if (prev_window >= 0.0 && mean >= prev_window) lr *= cfg.plateau_factor;
      prev_window = mean;
      window_sum = 0.0;
      window_n = 0;
    }

    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      result.curve.push_back({step, total, lr, loss.level_losses});
      if (csv.is_open()) {
        csv << step << "," << lr << "," << total;
        for (int l = model.config().levels; l >= model.config().out_level; --l)
          csv << "," << loss.level_losses.at(l);
        csv << "\n";
      }
    }
    if (cfg.checkpoint_every > 0 && !cfg.out_dir.empty() && step > 0 &&
        step % cfg.checkpoint_every == 0)
      model.save_checkpoint(cfg.out_dir + "/ckpt_" + std::to_string(step) + ".bin");
  }

  if (!cfg.out_dir.empty()) model.save_checkpoint(cfg.out_dir + "/ckpt_final.bin");

  // Deterministic training-set evaluation at a fixed mid-range density.
  std::mt19937_64 eval_rng(cfg.seed + 1);
  double epe_sum = 0.0;
  int epe_n = 0;
  for (const Sample& s : samples) {
    SparseDepthInput d0 =
        sample_lidar_fraction(s.dense_disp0, s.dense_disp0_valid, 0.1, eval_rng);
    SparseDepthInput d1 =
        sample_lidar_fraction(s.dense_disp1, s.dense_disp1_valid, 0.1, eval_rng);
    Tensor out = predict(model, s, d0, d1);
    if (auto e = sf_epe(out, s.gt, s.gt_valid)) {
      epe_sum += *e;
      ++epe_n;
    }
  }
  result.final_train_sf_epe = epe_n ? epe_sum / epe_n : 0.0;
  return result;
}

}  // namespace dlf
