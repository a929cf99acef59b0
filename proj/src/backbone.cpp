#include "dlf/backbone.hpp"

#include <stdexcept>

namespace dlf {

namespace {

ag::Var conv_block(ParamStore& ps, const std::string& name, const ag::Var& x, int co, int k,
                   int stride, double slope) {
  const int ci = x->val.c();
  auto w = ps.conv_weight(name + "/w", k, ci, co);
  auto b = ps.bias(name + "/b", co);
  return ag::leaky_relu(ag::conv2d(x, w, b, stride), slope);
}

// Confidence convolution block; leaky activation on features only, the
// confidence path stays normalized-linear to preserve the [0,1] bound.
std::pair<ag::Var, ag::Var> conf_block(ParamStore& ps, const std::string& name, const ag::Var& f,
                                       const ag::Var& c, int co, int k, int stride,
                                       double slope) {
  const int ci = f->val.c();
  auto wf = ps.conv_weight(name + "/wf", k, ci, co);
  auto wc = ps.conf_weight(name + "/wc", k);
  auto b = ps.bias(name + "/b", co);
  auto [fo, co_map] = ag::conf_conv(f, c, wf, wc, b, stride);
  return {ag::leaky_relu(fo, slope), co_map};
}

void check_divisible(int h, int w, int levels) {
  const int div = 1 << levels;
  if (h % div || w % div)
    throw std::invalid_argument("pyramid input size must be divisible by " +
                                std::to_string(div));
}

}  // namespace

PyramidOutput rgb_pyramid(ParamStore& ps, const std::string& prefix, const ag::Var& image,
                          const PyramidConfig& cfg) {
  check_divisible(image->val.h(), image->val.w(), cfg.levels);
  std::map<int, ag::Var> enc;
  ag::Var x = image;
  for (int l = 1; l <= cfg.levels; ++l) {
    const int ch = cfg.channels[l - 1];
    const std::string base = prefix + "/enc" + std::to_string(l);
    x = conv_block(ps, base + "/conv1", x, ch, 3, 2, cfg.leaky_slope);
    x = conv_block(ps, base + "/conv2", x, ch, 3, 1, cfg.leaky_slope);
    enc[l] = x;
  }

  PyramidOutput out;
  ag::Var d = enc[cfg.levels];
  out.features[cfg.levels] = d;
  for (int l = cfg.levels - 1; l >= cfg.out_level; --l) {
    ag::Var up = ag::nn_up2(d);
    ag::Var merged = ag::concat_c({up, enc[l]});
    d = conv_block(ps, prefix + "/dec" + std::to_string(l) + "/merge", merged,
                   cfg.channels[l - 1], 1, 1, cfg.leaky_slope);
    out.features[l] = d;
  }
  return out;
}

PyramidOutput lidar_pyramid(ParamStore& ps, const std::string& prefix,
                            const SparseDepthInput& depth, const PyramidConfig& cfg) {
  check_divisible(depth.disparity.h(), depth.disparity.w(), cfg.levels);

  // Initial feature: raw disparity with invalid cells zeroed; initial
  // confidence: the validity mask.
  Tensor f0 = depth.disparity;
  for (int y = 0; y < f0.h(); ++y)
    for (int x = 0; x < f0.w(); ++x)
      if (depth.validity.at(y, x, 0) <= 0.0) f0.at(y, x, 0) = 0.0;

  if (!cfg.use_confidence_conv) {
    // Ablation wiring: plain convolutions on the zeroed input, constant
    // confidence 1 reported at every level.
    PyramidOutput out;
    ag::Var x = ag::leaf(std::move(f0));
    std::map<int, ag::Var> enc;
    for (int l = 1; l <= cfg.levels; ++l) {
      const int ch = cfg.channels[l - 1];
      const std::string base = prefix + "/enc" + std::to_string(l);
      x = conv_block(ps, base + "/conv1", x, ch, 3, 2, cfg.leaky_slope);
      x = conv_block(ps, base + "/conv2", x, ch, 3, 1, cfg.leaky_slope);
      enc[l] = x;
    }
    ag::Var d = enc[cfg.levels];
    out.features[cfg.levels] = d;
    for (int l = cfg.levels - 1; l >= cfg.out_level; --l) {
      ag::Var up = ag::nn_up2(d);
      d = conv_block(ps, prefix + "/dec" + std::to_string(l) + "/merge",
                     ag::concat_c({up, enc[l]}), cfg.channels[l - 1], 1, 1, cfg.leaky_slope);
      out.features[l] = d;
    }
    for (auto& [l, feat] : out.features) {
      Tensor ones = Tensor::hwc(feat->val.h(), feat->val.w(), 1);
      ones.fill(1.0);
      out.confidences[l] = ag::leaf(std::move(ones));
    }
    return out;
  }

  ag::Var f = ag::leaf(std::move(f0));
  ag::Var c = ag::leaf(depth.validity);
  std::map<int, ag::Var> enc_f, enc_c;
  for (int l = 1; l <= cfg.levels; ++l) {
    const int ch = cfg.channels[l - 1];
    const std::string base = prefix + "/enc" + std::to_string(l);
    std::tie(f, c) = ag::max_conf_pool(f, c);
    std::tie(f, c) = conf_block(ps, base + "/conv1", f, c, ch, 3, 1, cfg.leaky_slope);
    std::tie(f, c) = conf_block(ps, base + "/conv2", f, c, ch, 3, 1, cfg.leaky_slope);
    enc_f[l] = f;
    enc_c[l] = c;
  }

  PyramidOutput out;
  ag::Var df = enc_f[cfg.levels], dc = enc_c[cfg.levels];
  out.features[cfg.levels] = df;
  out.confidences[cfg.levels] = dc;
  for (int l = cfg.levels - 1; l >= cfg.out_level; --l) {
    ag::Var fu = ag::nn_up2(df);
    ag::Var cu = ag::nn_up2(dc);
    // Skip merge: feature concat under the union (max) of the confidences,
    // followed by a 1x1 confidence convolution.
    ag::Var cm = ag::emax(cu, enc_c[l]);
    std::tie(df, dc) = conf_block(ps, prefix + "/dec" + std::to_string(l) + "/merge",
                                  ag::concat_c({fu, enc_f[l]}), cm, cfg.channels[l - 1], 1, 1,
                                  cfg.leaky_slope);
    out.features[l] = df;
    out.confidences[l] = dc;
  }
  return out;
}

}  // namespace dlf
