#pragma once

#include <map>
#include <vector>

#include "dlf/params.hpp"

namespace dlf {

// Feature pyramids: a strided encoder down to 1/2^levels resolution and a
// decoder with skip connections back up to 1/2^out_level. The RGB pyramid
// uses plain convolutions; the LiDAR pyramid runs every convolution as a
// confidence convolution, downsamples by max-confidence pooling and
// upsamples nearest-neighbor, carrying a confidence map per level.
struct PyramidConfig {
  std::vector<int> channels{16, 32, 64, 96, 128, 192};  // per level 1..levels
  int levels = 6;
  int out_level = 2;
  double leaky_slope = 0.1;
  // When false the LiDAR pyramid degrades to plain convolutions on the
  // mask-zeroed input and reports constant confidence 1.
  bool use_confidence_conv = true;
};

struct PyramidOutput {
  std::map<int, ag::Var> features;     // level -> (h/2^l, w/2^l, channels[l-1])
  std::map<int, ag::Var> confidences;  // LiDAR pyramids only
};

struct SparseDepthInput {
  Tensor disparity;  // (h, w, 1), pixels; invalid cells zeroed
  Tensor validity;   // (h, w, 1), {0, 1}
};

// image: (h, w, 3) in [0,1]; h, w divisible by 2^levels.
PyramidOutput rgb_pyramid(ParamStore& ps, const std::string& prefix, const ag::Var& image,
                          const PyramidConfig& cfg);

PyramidOutput lidar_pyramid(ParamStore& ps, const std::string& prefix,
                            const SparseDepthInput& depth, const PyramidConfig& cfg);

}  // namespace dlf
