#include "dlf/sparse_ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dlf {

namespace {

inline int out_size(int n, int stride) { return (n + stride - 1) / stride; }

// Selected input position for one pooling window, ties first in row-major.
// A padded cell winning reports (-1, -1) and contributes zeros.
inline void pool_argmax(const Tensor& c, int oy, int ox, int& by, int& bx) {
  const int h = c.h(), w = c.w();
  double best = -1.0;
  by = bx = -1;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const int y = 2 * oy + dy, x = 2 * ox + dx;
      const bool in = y < h && x < w;
      const double cv = in ? c.at(y, x, 0) : 0.0;
      if (cv > best) {
        best = cv;
        by = in ? y : -1;
        bx = in ? x : -1;
      }
    }
}

}  // namespace

namespace kernels {

void conf_conv_fwd(const Tensor& f, const Tensor& c, const Tensor& wf, const Tensor& wc_raw,
                   const Tensor& bias, int stride, Tensor& f_out, Tensor& c_out) {
  const int h = f.h(), w = f.w(), ci = f.c();
  const int k = wf.dim(0), co = wf.dim(3), pad = k / 2;
  assert(c.h() == h && c.w() == w && c.c() == 1);
  assert(wf.dim(2) == ci && bias.dim(0) == co && k % 2 == 1);
  const int oh = out_size(h, stride), ow = out_size(w, stride);
  f_out = Tensor::hwc(oh, ow, co);
  c_out = Tensor::hwc(oh, ow, 1);

  Tensor sp = Tensor::hw(k, k);
  for (std::size_t i = 0; i < sp.size(); ++i) sp[i] = softplus(wc_raw[i]);

#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    std::vector<double> acc(co);
    for (int ox = 0; ox < ow; ++ox) {
      std::fill(acc.begin(), acc.end(), 0.0);
      double denom = 0.0;
      // The confidence normalizer counts only in-bounds taps, so a full
      // confidence input maps to full confidence at the borders too.
      double sp_sum = 0.0;
      for (int ky = 0; ky < k; ++ky) {
        const int y = oy * stride + ky - pad;
        if (y < 0 || y >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int x = ox * stride + kx - pad;
          if (x < 0 || x >= w) continue;
          sp_sum += sp.at(ky, kx, 0);
          const double wc = sp.at(ky, kx, 0) * c.at(y, x, 0);
          if (wc == 0.0) continue;
          denom += wc;
          for (int o = 0; o < co; ++o) {
            double s = 0.0;
            for (int i = 0; i < ci; ++i) s += wf.at4(ky, kx, i, o) * f.at(y, x, i);
            acc[o] += wc * s;
          }
        }
      }
      c_out.at(oy, ox, 0) = denom / sp_sum;
      const double inv = 1.0 / (denom + kConfEps);
      for (int o = 0; o < co; ++o) f_out.at(oy, ox, o) = bias[o] + acc[o] * inv;
    }
  }
}

void conf_conv_bwd(const Tensor& f, const Tensor& c, const Tensor& wf, const Tensor& wc_raw,
                   const Tensor& bias, int stride, const Tensor& gf_out, const Tensor& gc_out,
                   Tensor& gf, Tensor& gc, Tensor& gwf, Tensor& gwc_raw, Tensor& gbias) {
  (void)bias;
  const int h = f.h(), w = f.w(), ci = f.c();
  const int k = wf.dim(0), co = wf.dim(3), pad = k / 2;
  const int oh = gf_out.h(), ow = gf_out.w();
  gf = f.like_zeros();
  gc = c.like_zeros();
  gwf = wf.like_zeros();
  gwc_raw = wc_raw.like_zeros();
  gbias = Tensor::vec(co);

  Tensor sp = Tensor::hw(k, k);
  for (std::size_t i = 0; i < sp.size(); ++i) sp[i] = softplus(wc_raw[i]);

  // Per-output-position normalizers and numerators, recomputed once.
  Tensor denom = Tensor::hw(oh, ow);
  Tensor spsum = Tensor::hw(oh, ow);
  Tensor numer = Tensor::hwc(oh, ow, co);
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      double d = 0.0, ss = 0.0;
      for (int ky = 0; ky < k; ++ky) {
        const int y = oy * stride + ky - pad;
        if (y < 0 || y >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int x = ox * stride + kx - pad;
          if (x < 0 || x >= w) continue;
          ss += sp.at(ky, kx, 0);
          const double wc = sp.at(ky, kx, 0) * c.at(y, x, 0);
          if (wc == 0.0) continue;
          d += wc;
          for (int o = 0; o < co; ++o) {
            double s = 0.0;
            for (int i = 0; i < ci; ++i) s += wf.at4(ky, kx, i, o) * f.at(y, x, i);
            numer.at(oy, ox, o) += wc * s;
          }
        }
      }
      denom.at(oy, ox, 0) = d;
      spsum.at(oy, ox, 0) = ss;
    }

  // Gradients to f and c: gather over the outputs each input cell feeds.
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double gcv = 0.0;
      std::vector<double> gfe(ci, 0.0);
      for (int ky = 0; ky < k; ++ky) {
        const int t = y - ky + pad;
        if (t < 0 || t % stride) continue;
        const int oy = t / stride;
        if (oy >= oh) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int s = x - kx + pad;
          if (s < 0 || s % stride) continue;
          const int ox = s / stride;
          if (ox >= ow) continue;
          const double spv = sp.at(ky, kx, 0);
          const double d = denom.at(oy, ox, 0);
          const double inv = 1.0 / (d + kConfEps);
          // d c_out / d c = sp / spsum(p)
          gcv += gc_out.at(oy, ox, 0) * spv / spsum.at(oy, ox, 0);
          for (int o = 0; o < co; ++o) {
            const double go = gf_out.at(oy, ox, o);
            if (go == 0.0) continue;
            // s(q,o) at this tap
            double sq = 0.0;
            for (int i = 0; i < ci; ++i) sq += wf.at4(ky, kx, i, o) * f.at(y, x, i);
            // quotient rule: dN/dc = sp*sq, dD/dc = sp
            gcv += go * spv * (sq * (d + kConfEps) - numer.at(oy, ox, o)) * inv * inv;
            // d f_out / d f(y,x,i) = sp * c * wf(q,i,o) / (d+eps)
            const double cf = spv * c.at(y, x, 0) * inv * go;
            for (int i = 0; i < ci; ++i) gfe[i] += cf * wf.at4(ky, kx, i, o);
          }
        }
      }
      gc.at(y, x, 0) = gcv;
      for (int i = 0; i < ci; ++i) gf.at(y, x, i) = gfe[i];
    }
  }

  // Gradients to the feature weights: gather over all output positions.
#pragma omp parallel for collapse(2) schedule(static)
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx)
      for (int o = 0; o < co; ++o)
        for (int i = 0; i < ci; ++i) {
          double g = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const int y = oy * stride + ky - pad;
            if (y < 0 || y >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int x = ox * stride + kx - pad;
              if (x < 0 || x >= w) continue;
              const double cv = c.at(y, x, 0);
              if (cv == 0.0) continue;
              g += gf_out.at(oy, ox, o) * sp.at(ky, kx, 0) * cv * f.at(y, x, i) /
                   (denom.at(oy, ox, 0) + kConfEps);
            }
          }
          gwf.at4(ky, kx, i, o) += g;
        }

  // Gradients to the raw propagation weights (through softplus).
#pragma omp parallel for collapse(2) schedule(static)
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx) {
      double g_sp = 0.0;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const int y = oy * stride + ky - pad;
          const int x = ox * stride + kx - pad;
          if (y < 0 || y >= h || x < 0 || x >= w) continue;  // tap not in the normalizer
          const double d = denom.at(oy, ox, 0);
          const double ss = spsum.at(oy, ox, 0);
          const double inv = 1.0 / (d + kConfEps);
          const double cv = c.at(y, x, 0);
          // c_out = d / spsum, both depend on this tap's sp
          g_sp += gc_out.at(oy, ox, 0) * (cv * ss - d) / (ss * ss);
          if (cv == 0.0) continue;
          for (int o = 0; o < co; ++o) {
            const double go = gf_out.at(oy, ox, o);
            if (go == 0.0) continue;
            double sq = 0.0;
            for (int i = 0; i < f.c(); ++i) sq += wf.at4(ky, kx, i, o) * f.at(y, x, i);
            g_sp += go * cv * (sq * (d + kConfEps) - numer.at(oy, ox, o)) * inv * inv;
          }
        }
      gwc_raw.at(ky, kx, 0) += g_sp * sigmoid(wc_raw.at(ky, kx, 0));
    }

  for (int o = 0; o < co; ++o) {
    double g = 0.0;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) g += gf_out.at(oy, ox, o);
    gbias[o] = g;
  }
}

void max_conf_pool_fwd(const Tensor& f, const Tensor& c, Tensor& f_out, Tensor& c_out) {
  const int h = f.h(), w = f.w(), ch = f.c();
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  f_out = Tensor::hwc(oh, ow, ch);
  c_out = Tensor::hwc(oh, ow, 1);
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      int by, bx;
      pool_argmax(c, oy, ox, by, bx);
      if (by < 0) continue;  // padded winner: zeros
      c_out.at(oy, ox, 0) = c.at(by, bx, 0);
      for (int i = 0; i < ch; ++i) f_out.at(oy, ox, i) = f.at(by, bx, i);
    }
}

void max_conf_pool_bwd(const Tensor& f, const Tensor& c, const Tensor& gf_out,
                       const Tensor& gc_out, Tensor& gf, Tensor& gc) {
  const int ch = f.c();
  const int oh = gf_out.h(), ow = gf_out.w();
  gf = f.like_zeros();
  gc = c.like_zeros();
  // Windows are disjoint, so scattering rows in parallel is race-free.
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      int by, bx;
      pool_argmax(c, oy, ox, by, bx);
      if (by < 0) continue;
      gc.at(by, bx, 0) += gc_out.at(oy, ox, 0);
      for (int i = 0; i < ch; ++i) gf.at(by, bx, i) += gf_out.at(oy, ox, i);
    }
}

void nn_up2_fwd(const Tensor& x, Tensor& out) {
  const int h = x.h(), w = x.w(), ch = x.c();
  out = Tensor::hwc(2 * h, 2 * w, ch);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < 2 * h; ++y)
    for (int x2 = 0; x2 < 2 * w; ++x2)
      for (int i = 0; i < ch; ++i) out.at(y, x2, i) = x.at(y / 2, x2 / 2, i);
}

void nn_up2_bwd(const Tensor& g_out, Tensor& gx) {
  const int oh = g_out.h(), ow = g_out.w(), ch = g_out.c();
  gx = Tensor::hwc(oh / 2, ow / 2, ch);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < oh / 2; ++y)
    for (int x = 0; x < ow / 2; ++x)
      for (int i = 0; i < ch; ++i)
        gx.at(y, x, i) = g_out.at(2 * y, 2 * x, i) + g_out.at(2 * y, 2 * x + 1, i) +
                         g_out.at(2 * y + 1, 2 * x, i) + g_out.at(2 * y + 1, 2 * x + 1, i);
}

}  // namespace kernels

namespace ref {

void conf_conv_fwd(const Tensor& f, const Tensor& c, const Tensor& wf, const Tensor& wc_raw,
                   const Tensor& bias, int stride, Tensor& f_out, Tensor& c_out) {
  const int h = f.h(), w = f.w(), ci = f.c();
  const int k = wf.dim(0), co = wf.dim(3), pad = k / 2;
  const int oh = out_size(h, stride), ow = out_size(w, stride);
  f_out = Tensor::hwc(oh, ow, co);
  c_out = Tensor::hwc(oh, ow, 1);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      double denom = 0.0, sp_sum = 0.0;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const int y = oy * stride + ky - pad, x = ox * stride + kx - pad;
          if (y < 0 || y >= h || x < 0 || x >= w) continue;
          sp_sum += softplus(wc_raw.at(ky, kx, 0));
          denom += softplus(wc_raw.at(ky, kx, 0)) * c.at(y, x, 0);
        }
      c_out.at(oy, ox, 0) = denom / sp_sum;
      for (int o = 0; o < co; ++o) {
        double num = 0.0;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int y = oy * stride + ky - pad, x = ox * stride + kx - pad;
            if (y < 0 || y >= h || x < 0 || x >= w) continue;
            double s = 0.0;
            for (int i = 0; i < ci; ++i) s += wf.at4(ky, kx, i, o) * f.at(y, x, i);
            num += softplus(wc_raw.at(ky, kx, 0)) * c.at(y, x, 0) * s;
          }
        f_out.at(oy, ox, o) = bias[o] + num / (denom + kConfEps);
      }
    }
}

void max_conf_pool_fwd(const Tensor& f, const Tensor& c, Tensor& f_out, Tensor& c_out) {
  const int h = f.h(), w = f.w(), ch = f.c();
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  f_out = Tensor::hwc(oh, ow, ch);
  c_out = Tensor::hwc(oh, ow, 1);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      double best = -1.0;
      int by = -1, bx = -1;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int y = 2 * oy + dy, x = 2 * ox + dx;
          const double cv = (y < h && x < w) ? c.at(y, x, 0) : 0.0;
          if (cv > best) {
            best = cv;
            by = (y < h && x < w) ? y : -1;
            bx = (y < h && x < w) ? x : -1;
          }
        }
      if (by < 0) continue;
      c_out.at(oy, ox, 0) = c.at(by, bx, 0);
      for (int i = 0; i < ch; ++i) f_out.at(oy, ox, i) = f.at(by, bx, i);
    }
}

void nn_up2_fwd(const Tensor& x, Tensor& out) {
  out = Tensor::hwc(2 * x.h(), 2 * x.w(), x.c());
  for (int y = 0; y < out.h(); ++y)
    for (int x2 = 0; x2 < out.w(); ++x2)
      for (int i = 0; i < out.c(); ++i) out.at(y, x2, i) = x.at(y / 2, x2 / 2, i);
}

}  // namespace ref

}  // namespace dlf
