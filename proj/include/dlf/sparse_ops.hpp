#pragma once

#include <cmath>

#include "dlf/tensor.hpp"

// Differentiable operators for sparse, confidence-carrying maps.
//
// A feature map (h, w, c) travels together with a confidence map (h, w, 1)
// whose values stay in [0, 1]. Convolutions normalize by accumulated
// confidence, pooling keeps the most reliable sample per window, and
// upsampling replicates both signals.
//
// dlf::kernels holds the OpenMP implementations used by the network.
// dlf::ref holds naive serial versions of the forward passes, kept as an
// independent reference for the tests and the benchmark target.

namespace dlf {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kConfEps = 1e-8;

namespace kernels {

// f: (h,w,ci), c: (h,w,1), wf: (k,k,ci,co), wc_raw: (k,k), bias: (co).
// Propagation weights are softplus(wc_raw). Zero padding carries zero
// confidence, so the border never gains support. stride in {1, 2}.
//
//   f_out(p,o) = bias(o) + [sum_q sp(q) c(p+q) sum_i wf(q,i,o) f(p+q,i)]
//                          / [sum_q sp(q) c(p+q) + eps]
//   c_out(p)   = [sum_q sp(q) c(p+q)] / [sum_q sp(q)]
void conf_conv_fwd(const Tensor& f, const Tensor& c, const Tensor& wf, const Tensor& wc_raw,
                   const Tensor& bias, int stride, Tensor& f_out, Tensor& c_out);

void conf_conv_bwd(const Tensor& f, const Tensor& c, const Tensor& wf, const Tensor& wc_raw,
                   const Tensor& bias, int stride, const Tensor& gf_out, const Tensor& gc_out,
                   Tensor& gf, Tensor& gc, Tensor& gwf, Tensor& gwc_raw, Tensor& gbias);

// 2x2 non-overlapping windows; keeps the (feature, confidence) pair at the
// position of maximum confidence, first-in-row-major on ties. Odd sizes are
// padded with zero confidence.
void max_conf_pool_fwd(const Tensor& f, const Tensor& c, Tensor& f_out, Tensor& c_out);
void max_conf_pool_bwd(const Tensor& f, const Tensor& c, const Tensor& gf_out,
                       const Tensor& gc_out, Tensor& gf, Tensor& gc);

// Nearest-neighbor x2: every cell becomes a 2x2 block; backward sums each
// block into its source cell. Works on any (h,w,c) tensor.
void nn_up2_fwd(const Tensor& x, Tensor& out);
void nn_up2_bwd(const Tensor& g_out, Tensor& gx);

}  // namespace kernels

namespace ref {

void conf_conv_fwd(const Tensor& f, const Tensor& c, const Tensor& wf, const Tensor& wc_raw,
                   const Tensor& bias, int stride, Tensor& f_out, Tensor& c_out);
void max_conf_pool_fwd(const Tensor& f, const Tensor& c, Tensor& f_out, Tensor& c_out);
void nn_up2_fwd(const Tensor& x, Tensor& out);

}  // namespace ref

}  // namespace dlf
