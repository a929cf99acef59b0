#pragma once

#include <optional>

#include "dlf/params.hpp"

namespace dlf {

// Per-level scene-flow prediction: warp the next-frame features along the
// current optical-flow estimate, correlate into a cost volume, run the
// estimator stack, and refine the finest level with a dilated-convolution
// context network predicting a residual.
//
// Scene flow fields are (h, w, 4) = (u, v, d0, d1) in level-pixel units;
// only (u, v) drive the warping between levels.
struct MatchingConfig {
  int radius = 4;
  std::vector<int> estimator_widths{128, 128, 96, 64, 32};
  std::vector<int> context_widths{128, 128, 128, 96, 64, 32, 32};
  std::vector<int> context_dilations{1, 2, 4, 8, 16, 1, 1};
  double leaky_slope = 0.1;
};

struct LevelEstimate {
  ag::Var sf;        // (h, w, 4)
  ag::Var features;  // penultimate estimator features, consumed by the context net
};

// up_sf absent exactly at the top level (initial flow is zero, no warping:
// the "warped" features are f_next unmodified).
LevelEstimate estimate_level(ParamStore& ps, const std::string& prefix, int level,
                             const ag::Var& f_ref, const ag::Var& f_next,
                             const std::optional<ag::Var>& up_sf, const MatchingConfig& cfg);

// Bilinear x2 upsampling of a scene-flow field; all four channels are in
// pixel units at their level, so values double along with the resolution.
ag::Var upsample_sf(const ag::Var& sf);

// Residual refinement from the context network, fed with the estimator's
// penultimate features, both frames' level features, and the current field.
// A zero-initialized head makes it the identity at initialization.
ag::Var context_refine(ParamStore& ps, const std::string& prefix, const ag::Var& est_features,
                       const ag::Var& f_ref, const ag::Var& f_next, const ag::Var& sf,
                       const MatchingConfig& cfg);

}  // namespace dlf
