#pragma once

#include "dlf/tensor.hpp"

// Dense data-parallel kernels behind the network graph. Same split as
// sparse_ops.hpp: dlf::kernels is the OpenMP path, dlf::ref the serial
// reference used by tests and the benchmark.
//
// All parallel loops gather into their own output cell with a fixed inner
// order, so results do not depend on the thread count.

namespace dlf {
namespace kernels {

// 'same' zero padding, stride in {1, 2}; x: (h,w,ci), w: (k,k,ci,co).
// Effective padding is dilation * (k / 2).
void conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int dilation,
                Tensor& out);
void conv2d_bwd(const Tensor& x, const Tensor& w, int stride, int dilation, const Tensor& g_out,
                Tensor& gx, Tensor& gw, Tensor& gbias);

// Bilinear sampling of f at p + flow(p); flow: (h,w,2) = (u, v) in pixels.
// Out-of-bounds taps read as zero.
void warp_fwd(const Tensor& f, const Tensor& flow, Tensor& out);
void warp_bwd(const Tensor& f, const Tensor& flow, const Tensor& g_out, Tensor& gf,
              Tensor& gflow);

// cost(p, o) = <a(p), b(p+o)> / c for all |o|_inf <= radius; out-of-bounds
// neighbors contribute zero. Channel index (oy+r)*(2r+1) + (ox+r).
void cost_volume_fwd(const Tensor& a, const Tensor& b, int radius, Tensor& out);
void cost_volume_bwd(const Tensor& a, const Tensor& b, int radius, const Tensor& g_out,
                     Tensor& ga, Tensor& gb);

// x2 bilinear upsampling, half-pixel centers, borders clamped.
void bilinear_up2_fwd(const Tensor& x, Tensor& out);
void bilinear_up2_bwd(const Tensor& x, const Tensor& g_out, Tensor& gx);

}  // namespace kernels

namespace ref {

void conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int dilation,
                Tensor& out);
void warp_fwd(const Tensor& f, const Tensor& flow, Tensor& out);
void cost_volume_fwd(const Tensor& a, const Tensor& b, int radius, Tensor& out);
void bilinear_up2_fwd(const Tensor& x, Tensor& out);

}  // namespace ref

}  // namespace dlf
