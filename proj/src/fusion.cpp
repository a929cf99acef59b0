#include "dlf/fusion.hpp"

#include <stdexcept>

namespace dlf {

namespace {

ag::Var conv_lrelu(ParamStore& ps, const std::string& name, const ag::Var& x, int co,
                   double slope) {
  auto w = ps.conv_weight(name + "/w", 3, x->val.c(), co);
  auto b = ps.bias(name + "/b", co);
  return ag::leaky_relu(ag::conv2d(x, w, b, 1), slope);
}

}  // namespace

ag::Var fuse_level(ParamStore& ps, const std::string& prefix, int level, const ag::Var& rgb,
                   const ag::Var& lidar, const ag::Var& conf, int out_channels,
                   const FusionConfig& cfg) {
  if (!rgb->val.same_spatial(lidar->val) || !rgb->val.same_spatial(conf->val))
    throw std::invalid_argument("fuse_level: spatial size mismatch at level " +
                                std::to_string(level));
  const std::string base = prefix + "/l" + std::to_string(level);

  ag::Var d = lidar;
  for (int i = 0; i < cfg.pre_convs; ++i)
    d = conv_lrelu(ps, base + "/pre" + std::to_string(i), d, out_channels, cfg.leaky_slope);

  std::vector<ag::Var> parts{rgb};
  if (cfg.use_confidence_concat) parts.push_back(conf);
  parts.push_back(d);
  ag::Var x = ag::concat_c(parts);
  for (int i = 0; i < cfg.fuse_convs; ++i)
    x = conv_lrelu(ps, base + "/fuse" + std::to_string(i), x, out_channels, cfg.leaky_slope);
  return x;
}

std::map<int, ag::Var> fuse_all(ParamStore& ps, const std::string& prefix,
                                const PyramidOutput& rgb, const PyramidOutput& lidar,
                                const std::vector<int>& channels, const FusionConfig& cfg) {
  std::map<int, ag::Var> fused;
  for (const auto& [level, feat] : rgb.features) {
    fused[level] = fuse_level(ps, prefix, level, feat, lidar.features.at(level),
                              lidar.confidences.at(level), channels[level - 1], cfg);
  }
  return fused;
}

}  // namespace dlf
