#pragma once

#include "dlf/backbone.hpp"

namespace dlf {

// Multi-scale late fusion: at each level the LiDAR features pass a small
// preprocessing convolution stack, then RGB features (optionally joined by
// the LiDAR confidence map) and preprocessed LiDAR features are concatenated
// and mixed by a fusion stack, keeping the spatial size and the level's
// channel count.
struct FusionConfig {
  int pre_convs = 2;
  int fuse_convs = 2;
  double leaky_slope = 0.1;
  bool use_confidence_concat = true;
};

ag::Var fuse_level(ParamStore& ps, const std::string& prefix, int level, const ag::Var& rgb,
                   const ag::Var& lidar, const ag::Var& conf, int out_channels,
                   const FusionConfig& cfg);

// Applies fuse_level at every pyramid level. The prefix carries no time-step
// component, so calling this for t and t+1 shares all weights.
std::map<int, ag::Var> fuse_all(ParamStore& ps, const std::string& prefix,
                                const PyramidOutput& rgb, const PyramidOutput& lidar,
                                const std::vector<int>& channels, const FusionConfig& cfg);

}  // namespace dlf
