#include "dlf/matching.hpp"

#include <stdexcept>

namespace dlf {

using ag::Var;

namespace {

Var conv_block(ParamStore& ps, const std::string& name, const Var& x, int co, int dilation,
               double slope) {
  int ci = x->val.c();
  Var w = ps.conv_weight(name + "/w", 3, ci, co);
  Var b = ps.bias(name + "/b", co);
  return ag::leaky_relu(ag::conv2d(x, w, b, 1, dilation), slope);
}

}  // namespace

LevelEstimate estimate_level(ParamStore& ps, const std::string& prefix, int level,
                             const Var& f_ref, const Var& f_next,
                             const std::optional<Var>& up_sf, const MatchingConfig& cfg) {
  if (!f_ref->val.same_spatial(f_next->val))
    throw std::runtime_error("estimate_level: frame feature size mismatch");

  Var warped = f_next;
  if (up_sf) {
    if (!up_sf->get()->val.same_spatial(f_ref->val))
      throw std::runtime_error("estimate_level: upsampled flow size mismatch");
    warped = ag::warp(f_next, ag::slice_c(*up_sf, 0, 2));
  }
  Var cost = ag::cost_volume(f_ref, warped, cfg.radius);

  std::vector<Var> parts{cost, f_ref, warped};
  if (up_sf) parts.push_back(*up_sf);
  Var x = ag::concat_c(parts);

  // Per-level estimator: input channel counts differ between levels.
  std::string p = prefix + "/l" + std::to_string(level) + "/est";
  for (std::size_t i = 0; i < cfg.estimator_widths.size(); ++i)
    x = conv_block(ps, p + "/conv" + std::to_string(i), x, cfg.estimator_widths[i], 1,
                   cfg.leaky_slope);

  Var hw = ps.conv_weight(p + "/head/w", 3, x->val.c(), 4);
  Var hb = ps.bias(p + "/head/b", 4);
  Var sf = ag::conv2d(x, hw, hb, 1);
  return {sf, x};
}

Var upsample_sf(const Var& sf) {
  // All four channels are per-level pixel quantities: doubling the
  // resolution doubles their magnitude.
  return ag::scale(ag::bilinear_up2(sf), 2.0);
}

Var context_refine(ParamStore& ps, const std::string& prefix, const Var& est_features,
                   const Var& f_ref, const Var& f_next, const Var& sf,
                   const MatchingConfig& cfg) {
  if (cfg.context_widths.size() != cfg.context_dilations.size())
    throw std::runtime_error("context_refine: widths/dilations length mismatch");

  Var x = ag::concat_c({est_features, f_ref, f_next, sf});
  std::string p = prefix + "/ctx";
  for (std::size_t i = 0; i < cfg.context_widths.size(); ++i)
    x = conv_block(ps, p + "/conv" + std::to_string(i), x, cfg.context_widths[i],
                   cfg.context_dilations[i], cfg.leaky_slope);

  // Zero-initialized head: refinement starts as the identity.
  Var hw = ps.conv_weight_zero(p + "/head/w", 3, x->val.c(), 4);
  Var hb = ps.bias(p + "/head/b", 4);
  return ag::add(sf, ag::conv2d(x, hw, hb, 1));
}

}  // namespace dlf
