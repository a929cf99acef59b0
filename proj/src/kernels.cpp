#include "dlf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dlf {

namespace {
inline int out_size(int n, int stride) { return (n + stride - 1) / stride; }
}  // namespace

namespace kernels {

void conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int dilation,
                Tensor& out) {
  const int h = x.h(), ww = x.w(), ci = x.c();
  const int k = w.dim(0), co = w.dim(3), pad = dilation * (k / 2);
  assert(w.dim(2) == ci && bias.dim(0) == co);
  const int oh = out_size(h, stride), ow = out_size(ww, stride);
  out = Tensor::hwc(oh, ow, co);
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    std::vector<double> acc(co);
    for (int ox = 0; ox < ow; ++ox) {
      for (int o = 0; o < co; ++o) acc[o] = bias[o];
      for (int ky = 0; ky < k; ++ky) {
        const int y = oy * stride + ky * dilation - pad;
        if (y < 0 || y >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int xx = ox * stride + kx * dilation - pad;
          if (xx < 0 || xx >= ww) continue;
          for (int i = 0; i < ci; ++i) {
            const double xv = x.at(y, xx, i);
            if (xv == 0.0) continue;
            for (int o = 0; o < co; ++o) acc[o] += w.at4(ky, kx, i, o) * xv;
          }
        }
      }
      for (int o = 0; o < co; ++o) out.at(oy, ox, o) = acc[o];
    }
  }
}

void conv2d_bwd(const Tensor& x, const Tensor& w, int stride, int dilation, const Tensor& g_out,
                Tensor& gx, Tensor& gw, Tensor& gbias) {
  const int h = x.h(), ww = x.w(), ci = x.c();
  const int k = w.dim(0), co = w.dim(3), pad = dilation * (k / 2);
  const int oh = g_out.h(), ow = g_out.w();
  gx = x.like_zeros();
  gw = w.like_zeros();
  gbias = Tensor::vec(co);

  // gx: gather over contributing outputs.
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < ww; ++xx)
      for (int i = 0; i < ci; ++i) {
        double g = 0.0;
        for (int ky = 0; ky < k; ++ky) {
          const int t = y - ky * dilation + pad;
          if (t < 0 || t % stride) continue;
          const int oy = t / stride;
          if (oy >= oh) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int s = xx - kx * dilation + pad;
            if (s < 0 || s % stride) continue;
            const int ox = s / stride;
            if (ox >= ow) continue;
            for (int o = 0; o < co; ++o) g += g_out.at(oy, ox, o) * w.at4(ky, kx, i, o);
          }
        }
        gx.at(y, xx, i) = g;
      }

#pragma omp parallel for collapse(2) schedule(static)
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx)
      for (int i = 0; i < ci; ++i)
        for (int o = 0; o < co; ++o) {
          double g = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const int y = oy * stride + ky * dilation - pad;
            if (y < 0 || y >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int xx = ox * stride + kx * dilation - pad;
              if (xx < 0 || xx >= ww) continue;
              g += g_out.at(oy, ox, o) * x.at(y, xx, i);
            }
          }
          gw.at4(ky, kx, i, o) = g;
        }

  for (int o = 0; o < co; ++o) {
    double g = 0.0;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) g += g_out.at(oy, ox, o);
    gbias[o] = g;
  }
}

void warp_fwd(const Tensor& f, const Tensor& flow, Tensor& out) {
  const int h = f.h(), w = f.w(), c = f.c();
  assert(flow.h() == h && flow.w() == w && flow.c() == 2);
  out = Tensor::hwc(h, w, c);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double sx = x + flow.at(y, x, 0);
      const double sy = y + flow.at(y, x, 1);
      const int x0 = (int)std::floor(sx), y0 = (int)std::floor(sy);
      const double ax = sx - x0, ay = sy - y0;
      for (int i = 0; i < c; ++i) {
        double v = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int yy = y0 + dy, xx = x0 + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const double wgt = (dy ? ay : 1.0 - ay) * (dx ? ax : 1.0 - ax);
            v += wgt * f.at(yy, xx, i);
          }
        out.at(y, x, i) = v;
      }
    }
}

void warp_bwd(const Tensor& f, const Tensor& flow, const Tensor& g_out, Tensor& gf,
              Tensor& gflow) {
  const int h = f.h(), w = f.w(), c = f.c();
  gf = f.like_zeros();
  gflow = flow.like_zeros();
  // gflow gathers per pixel; gf is a scatter and stays serial to keep the
  // accumulation order fixed.
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double sx = x + flow.at(y, x, 0);
      const double sy = y + flow.at(y, x, 1);
      const int x0 = (int)std::floor(sx), y0 = (int)std::floor(sy);
      const double ax = sx - x0, ay = sy - y0;
      double gu = 0.0, gv = 0.0;
      for (int i = 0; i < c; ++i) {
        const double go = g_out.at(y, x, i);
        if (go == 0.0) continue;
        double f00 = 0, f01 = 0, f10 = 0, f11 = 0;
        if (y0 >= 0 && y0 < h) {
          if (x0 >= 0 && x0 < w) f00 = f.at(y0, x0, i);
          if (x0 + 1 >= 0 && x0 + 1 < w) f01 = f.at(y0, x0 + 1, i);
        }
        if (y0 + 1 >= 0 && y0 + 1 < h) {
          if (x0 >= 0 && x0 < w) f10 = f.at(y0 + 1, x0, i);
          if (x0 + 1 >= 0 && x0 + 1 < w) f11 = f.at(y0 + 1, x0 + 1, i);
        }
        gu += go * ((1.0 - ay) * (f01 - f00) + ay * (f11 - f10));
        gv += go * ((1.0 - ax) * (f10 - f00) + ax * (f11 - f01));
      }
      gflow.at(y, x, 0) = gu;
      gflow.at(y, x, 1) = gv;
    }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double sx = x + flow.at(y, x, 0);
      const double sy = y + flow.at(y, x, 1);
      const int x0 = (int)std::floor(sx), y0 = (int)std::floor(sy);
      const double ax = sx - x0, ay = sy - y0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int yy = y0 + dy, xx = x0 + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double wgt = (dy ? ay : 1.0 - ay) * (dx ? ax : 1.0 - ax);
          if (wgt == 0.0) continue;
          for (int i = 0; i < c; ++i) gf.at(yy, xx, i) += wgt * g_out.at(y, x, i);
        }
    }
}

void cost_volume_fwd(const Tensor& a, const Tensor& b, int radius, Tensor& out) {
  const int h = a.h(), w = a.w(), c = a.c();
  assert(b.same_shape(a));
  const int d = 2 * radius + 1;
  out = Tensor::hwc(h, w, d * d);
  const double inv_c = 1.0 / c;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int oy = -radius; oy <= radius; ++oy)
        for (int ox = -radius; ox <= radius; ++ox) {
          const int yy = y + oy, xx = x + ox;
          const int ch = (oy + radius) * d + (ox + radius);
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          double s = 0.0;
          for (int i = 0; i < c; ++i) s += a.at(y, x, i) * b.at(yy, xx, i);
          out.at(y, x, ch) = s * inv_c;
        }
}

void cost_volume_bwd(const Tensor& a, const Tensor& b, int radius, const Tensor& g_out,
                     Tensor& ga, Tensor& gb) {
  const int h = a.h(), w = a.w(), c = a.c();
  const int d = 2 * radius + 1;
  ga = a.like_zeros();
  gb = b.like_zeros();
  const double inv_c = 1.0 / c;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int oy = -radius; oy <= radius; ++oy)
        for (int ox = -radius; ox <= radius; ++ox) {
          const int ch = (oy + radius) * d + (ox + radius);
          // d cost(y,x,o) / d a(y,x,:)
          const int yy = y + oy, xx = x + ox;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w) {
            const double g1 = g_out.at(y, x, ch) * inv_c;
            if (g1 != 0.0)
              for (int i = 0; i < c; ++i) ga.at(y, x, i) += g1 * b.at(yy, xx, i);
          }
          // d cost(y2,x2,o) / d b(y,x,:) with (y,x) = (y2+oy, x2+ox)
          const int y2 = y - oy, x2 = x - ox;
          if (y2 >= 0 && y2 < h && x2 >= 0 && x2 < w) {
            const double g2 = g_out.at(y2, x2, ch) * inv_c;
            if (g2 != 0.0)
              for (int i = 0; i < c; ++i) gb.at(y, x, i) += g2 * a.at(y2, x2, i);
          }
        }
    }
}

void bilinear_up2_fwd(const Tensor& x, Tensor& out) {
  const int h = x.h(), w = x.w(), c = x.c();
  out = Tensor::hwc(2 * h, 2 * w, c);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < 2 * h; ++y)
    for (int xx = 0; xx < 2 * w; ++xx) {
      const double sy = (y + 0.5) * 0.5 - 0.5, sx = (xx + 0.5) * 0.5 - 0.5;
      const int y0 = (int)std::floor(sy), x0 = (int)std::floor(sx);
      const double ay = sy - y0, ax = sx - x0;
      const int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
      const int x0c = std::clamp(x0, 0, w - 1), x1c = std::clamp(x0 + 1, 0, w - 1);
      for (int i = 0; i < c; ++i)
        out.at(y, xx, i) = (1 - ay) * ((1 - ax) * x.at(y0c, x0c, i) + ax * x.at(y0c, x1c, i)) +
                           ay * ((1 - ax) * x.at(y1c, x0c, i) + ax * x.at(y1c, x1c, i));
    }
}

void bilinear_up2_bwd(const Tensor& x, const Tensor& g_out, Tensor& gx) {
  const int h = x.h(), w = x.w(), c = x.c();
  gx = x.like_zeros();
  for (int y = 0; y < 2 * h; ++y)
    for (int xx = 0; xx < 2 * w; ++xx) {
      const double sy = (y + 0.5) * 0.5 - 0.5, sx = (xx + 0.5) * 0.5 - 0.5;
      const int y0 = (int)std::floor(sy), x0 = (int)std::floor(sx);
      const double ay = sy - y0, ax = sx - x0;
      const int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
      const int x0c = std::clamp(x0, 0, w - 1), x1c = std::clamp(x0 + 1, 0, w - 1);
      for (int i = 0; i < c; ++i) {
        const double g = g_out.at(y, xx, i);
        if (g == 0.0) continue;
        gx.at(y0c, x0c, i) += g * (1 - ay) * (1 - ax);
        gx.at(y0c, x1c, i) += g * (1 - ay) * ax;
        gx.at(y1c, x0c, i) += g * ay * (1 - ax);
        gx.at(y1c, x1c, i) += g * ay * ax;
      }
    }
}

}  // namespace kernels

namespace ref {

void conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int dilation,
                Tensor& out) {
  const int h = x.h(), ww = x.w(), ci = x.c();
  const int k = w.dim(0), co = w.dim(3), pad = dilation * (k / 2);
  const int oh = out_size(h, stride), ow = out_size(ww, stride);
  out = Tensor::hwc(oh, ow, co);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int o = 0; o < co; ++o) {
        double acc = bias[o];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            for (int i = 0; i < ci; ++i) {
              const int y = oy * stride + ky * dilation - pad;
              const int xx = ox * stride + kx * dilation - pad;
              if (y < 0 || y >= h || xx < 0 || xx >= ww) continue;
              acc += w.at4(ky, kx, i, o) * x.at(y, xx, i);
            }
        out.at(oy, ox, o) = acc;
      }
}

void warp_fwd(const Tensor& f, const Tensor& flow, Tensor& out) {
  const int h = f.h(), w = f.w(), c = f.c();
  out = Tensor::hwc(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int i = 0; i < c; ++i) {
        const double sx = x + flow.at(y, x, 0);
        const double sy = y + flow.at(y, x, 1);
        const int x0 = (int)std::floor(sx), y0 = (int)std::floor(sy);
        double v = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int yy = y0 + dy, xx = x0 + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            v += (dy ? sy - y0 : 1.0 - (sy - y0)) * (dx ? sx - x0 : 1.0 - (sx - x0)) *
                 f.at(yy, xx, i);
          }
        out.at(y, x, i) = v;
      }
}

void cost_volume_fwd(const Tensor& a, const Tensor& b, int radius, Tensor& out) {
  const int h = a.h(), w = a.w(), c = a.c();
  const int d = 2 * radius + 1;
  out = Tensor::hwc(h, w, d * d);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int oy = -radius; oy <= radius; ++oy)
        for (int ox = -radius; ox <= radius; ++ox) {
          const int yy = y + oy, xx = x + ox;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          double s = 0.0;
          for (int i = 0; i < c; ++i) s += a.at(y, x, i) * b.at(yy, xx, i);
          out.at(y, x, (oy + radius) * d + (ox + radius)) = s / c;
        }
}

void bilinear_up2_fwd(const Tensor& x, Tensor& out) {
  const int h = x.h(), w = x.w(), c = x.c();
  out = Tensor::hwc(2 * h, 2 * w, c);
  for (int y = 0; y < 2 * h; ++y)
    for (int xx = 0; xx < 2 * w; ++xx)
      for (int i = 0; i < c; ++i) {
        const double sy = (y + 0.5) * 0.5 - 0.5, sx = (xx + 0.5) * 0.5 - 0.5;
        const int y0 = (int)std::floor(sy), x0 = (int)std::floor(sx);
        const double ay = sy - y0, ax = sx - x0;
        auto cl = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
        out.at(y, xx, i) =
            (1 - ay) * ((1 - ax) * x.at(cl(y0, h - 1), cl(x0, w - 1), i) +
                        ax * x.at(cl(y0, h - 1), cl(x0 + 1, w - 1), i)) +
            ay * ((1 - ax) * x.at(cl(y0 + 1, h - 1), cl(x0, w - 1), i) +
                  ax * x.at(cl(y0 + 1, h - 1), cl(x0 + 1, w - 1), i));
      }
}

}  // namespace ref

}  // namespace dlf
