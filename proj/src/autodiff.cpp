#include "dlf/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <unordered_set>

namespace dlf::ag {

namespace {

Var make(Tensor val, std::vector<Var> parents, std::function<void(Node&)> back, const char* op) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(back);
  n->op = op;
  return n;
}

void ensure_grad(const Var& v) {
  if (v->grad.size() != v->val.size()) v->grad = v->val.like_zeros();
}

void accum(const Var& p, const Tensor& g) {
  if (!p->requires_grad) return;
  ensure_grad(p);
  p->grad += g;
}

}  // namespace

Var leaf(Tensor t, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = requires_grad;
  return n;
}

void backward(const Var& root) {
  assert(root->val.size() == 1);
  // Iterative post-order DFS for topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad = n->val.like_zeros();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int dilation) {
  Tensor out;
  kernels::conv2d_fwd(x->val, w->val, b->val, stride, dilation, out);
  return make(
      std::move(out), {x, w, b},
      [stride, dilation](Node& n) {
        const Var &x = n.parents[0], &w = n.parents[1], &b = n.parents[2];
        Tensor gx, gw, gb;
        kernels::conv2d_bwd(x->val, w->val, stride, dilation, n.grad, gx, gw, gb);
        accum(x, gx);
        accum(w, gw);
        accum(b, gb);
      },
      "conv2d");
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out = x->val;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] < 0.0) out[i] *= slope;
  return make(
      std::move(out), {x},
      [slope](Node& n) {
        const Var& x = n.parents[0];
        Tensor g = n.grad;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x->val[i] < 0.0) g[i] *= slope;
        accum(x, g);
      },
      "leaky_relu");
}

std::pair<Var, Var> conf_conv(const Var& f, const Var& c, const Var& wf, const Var& wc_raw,
                              const Var& b, int stride) {
  Tensor fo, co;
  kernels::conf_conv_fwd(f->val, c->val, wf->val, wc_raw->val, b->val, stride, fo, co);
  // One joint node carries features plus confidence as the last channel, so
  // the (expensive) backward kernel runs once for both outputs.
  const int nco = fo.c();
  Tensor joint = Tensor::hwc(fo.h(), fo.w(), nco + 1);
  for (int y = 0; y < fo.h(); ++y)
    for (int x = 0; x < fo.w(); ++x) {
      for (int o = 0; o < nco; ++o) joint.at(y, x, o) = fo.at(y, x, o);
      joint.at(y, x, nco) = co.at(y, x, 0);
    }
  Var j = make(
      std::move(joint), {f, c, wf, wc_raw, b},
      [stride, nco](Node& n) {
        const Var &f = n.parents[0], &c = n.parents[1], &wf = n.parents[2], &wc = n.parents[3],
                  &b = n.parents[4];
        Tensor gfo = Tensor::hwc(n.grad.h(), n.grad.w(), nco);
        Tensor gco = Tensor::hwc(n.grad.h(), n.grad.w(), 1);
        for (int y = 0; y < n.grad.h(); ++y)
          for (int x = 0; x < n.grad.w(); ++x) {
            for (int o = 0; o < nco; ++o) gfo.at(y, x, o) = n.grad.at(y, x, o);
            gco.at(y, x, 0) = n.grad.at(y, x, nco);
          }
        Tensor gf, gc, gwf, gwc, gb;
        kernels::conf_conv_bwd(f->val, c->val, wf->val, wc->val, b->val, stride, gfo, gco, gf, gc,
                               gwf, gwc, gb);
        accum(f, gf);
        accum(c, gc);
        accum(wf, gwf);
        accum(wc, gwc);
        accum(b, gb);
      },
      "conf_conv");
  return {slice_c(j, 0, nco), slice_c(j, nco, nco + 1)};
}

std::pair<Var, Var> max_conf_pool(const Var& f, const Var& c) {
  Tensor fo, co;
  kernels::max_conf_pool_fwd(f->val, c->val, fo, co);
  const int nco = fo.c();
  Tensor joint = Tensor::hwc(fo.h(), fo.w(), nco + 1);
  for (int y = 0; y < fo.h(); ++y)
    for (int x = 0; x < fo.w(); ++x) {
      for (int o = 0; o < nco; ++o) joint.at(y, x, o) = fo.at(y, x, o);
      joint.at(y, x, nco) = co.at(y, x, 0);
    }
  Var j = make(
      std::move(joint), {f, c},
      [nco](Node& n) {
        const Var &f = n.parents[0], &c = n.parents[1];
        Tensor gfo = Tensor::hwc(n.grad.h(), n.grad.w(), nco);
        Tensor gco = Tensor::hwc(n.grad.h(), n.grad.w(), 1);
        for (int y = 0; y < n.grad.h(); ++y)
          for (int x = 0; x < n.grad.w(); ++x) {
            for (int o = 0; o < nco; ++o) gfo.at(y, x, o) = n.grad.at(y, x, o);
            gco.at(y, x, 0) = n.grad.at(y, x, nco);
          }
        Tensor gf, gc;
        kernels::max_conf_pool_bwd(f->val, c->val, gfo, gco, gf, gc);
        accum(f, gf);
        accum(c, gc);
      },
      "max_conf_pool");
  return {slice_c(j, 0, nco), slice_c(j, nco, nco + 1)};
}

Var nn_up2(const Var& x) {
  Tensor out;
  kernels::nn_up2_fwd(x->val, out);
  return make(
      std::move(out), {x},
      [](Node& n) {
        Tensor gx;
        kernels::nn_up2_bwd(n.grad, gx);
        accum(n.parents[0], gx);
      },
      "nn_up2");
}

Var warp(const Var& f, const Var& flow) {
  Tensor out;
  kernels::warp_fwd(f->val, flow->val, out);
  return make(
      std::move(out), {f, flow},
      [](Node& n) {
        const Var &f = n.parents[0], &flow = n.parents[1];
        Tensor gf, gflow;
        kernels::warp_bwd(f->val, flow->val, n.grad, gf, gflow);
        accum(f, gf);
        accum(flow, gflow);
      },
      "warp");
}

Var cost_volume(const Var& a, const Var& b, int radius) {
  Tensor out;
  kernels::cost_volume_fwd(a->val, b->val, radius, out);
  return make(
      std::move(out), {a, b},
      [radius](Node& n) {
        const Var &a = n.parents[0], &b = n.parents[1];
        Tensor ga, gb;
        kernels::cost_volume_bwd(a->val, b->val, radius, n.grad, ga, gb);
        accum(a, ga);
        accum(b, gb);
      },
      "cost_volume");
}

Var bilinear_up2(const Var& x) {
  Tensor out;
  kernels::bilinear_up2_fwd(x->val, out);
  return make(
      std::move(out), {x},
      [](Node& n) {
        Tensor gx;
        kernels::bilinear_up2_bwd(n.parents[0]->val, n.grad, gx);
        accum(n.parents[0], gx);
      },
      "bilinear_up2");
}

Var concat_c(const std::vector<Var>& xs) {
  assert(!xs.empty());
  const int h = xs[0]->val.h(), w = xs[0]->val.w();
  int ctot = 0;
  for (const auto& x : xs) {
    assert(x->val.h() == h && x->val.w() == w);
    ctot += x->val.c();
  }
  Tensor out = Tensor::hwc(h, w, ctot);
  int off = 0;
  for (const auto& x : xs) {
    const int c = x->val.c();
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int i = 0; i < c; ++i) out.at(y, xx, off + i) = x->val.at(y, xx, i);
    off += c;
  }
  return make(
      std::move(out), xs,
      [](Node& n) {
        int off = 0;
        for (const auto& p : n.parents) {
          const int c = p->val.c();
          if (p->requires_grad) {
            Tensor g = p->val.like_zeros();
            for (int y = 0; y < g.h(); ++y)
              for (int x = 0; x < g.w(); ++x)
                for (int i = 0; i < c; ++i) g.at(y, x, i) = n.grad.at(y, x, off + i);
            accum(p, g);
          }
          off += c;
        }
      },
      "concat_c");
}

Var slice_c(const Var& x, int c0, int c1) {
  const int h = x->val.h(), w = x->val.w();
  Tensor out = Tensor::hwc(h, w, c1 - c0);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int i = c0; i < c1; ++i) out.at(y, xx, i - c0) = x->val.at(y, xx, i);
  return make(
      std::move(out), {x},
      [c0, c1](Node& n) {
        const Var& x = n.parents[0];
        Tensor g = x->val.like_zeros();
        for (int y = 0; y < g.h(); ++y)
          for (int xx = 0; xx < g.w(); ++xx)
            for (int i = c0; i < c1; ++i) g.at(y, xx, i) = n.grad.at(y, xx, i - c0);
        accum(x, g);
      },
      "slice_c");
}

Var add(const Var& a, const Var& b) {
  assert(a->val.same_shape(b->val));
  Tensor out = a->val;
  out += b->val;
  return make(
      std::move(out), {a, b},
      [](Node& n) {
        accum(n.parents[0], n.grad);
        accum(n.parents[1], n.grad);
      },
      "add");
}

Var scale(const Var& x, double s) {
  Tensor out = x->val;
  out *= s;
  return make(
      std::move(out), {x},
      [s](Node& n) {
        Tensor g = n.grad;
        g *= s;
        accum(n.parents[0], g);
      },
      "scale");
}

Var emax(const Var& a, const Var& b) {
  assert(a->val.same_shape(b->val));
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a->val[i], b->val[i]);
  return make(
      std::move(out), {a, b},
      [](Node& n) {
        const Var &a = n.parents[0], &b = n.parents[1];
        Tensor ga = a->val.like_zeros(), gb = b->val.like_zeros();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          (a->val[i] >= b->val[i] ? ga[i] : gb[i]) = n.grad[i];
        accum(a, ga);
        accum(b, gb);
      },
      "emax");
}

Var sf_norm_loss(const Var& pred, const Tensor& gt, const Tensor& valid, bool robust) {
  const Tensor& p = pred->val;
  assert(p.same_shape(gt) && valid.h() == p.h() && valid.w() == p.w());
  const int h = p.h(), w = p.w(), c = p.c();
  double sum = 0.0;
  int n_valid = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (valid.at(y, x, 0) <= 0.0) continue;
      ++n_valid;
      double s = 0.0;
      for (int i = 0; i < c; ++i) {
        const double e = p.at(y, x, i) - gt.at(y, x, i);
        s += e * e;
      }
      const double t = std::sqrt(s);
      sum += robust ? std::pow(t + 0.01, 0.4) : t;
    }
  Tensor out = Tensor::scalar(n_valid ? sum / n_valid : 0.0);
  Tensor gt_copy = gt, valid_copy = valid;
  return make(
      std::move(out), {pred},
      [gt_copy, valid_copy, robust, n_valid](Node& n) {
        if (n_valid == 0) return;
        const Var& pred = n.parents[0];
        const Tensor& p = pred->val;
        const double g0 = n.grad[0] / n_valid;
        Tensor g = p.like_zeros();
        const int c = p.c();
        for (int y = 0; y < p.h(); ++y)
          for (int x = 0; x < p.w(); ++x) {
            if (valid_copy.at(y, x, 0) <= 0.0) continue;
            double s = 0.0;
            for (int i = 0; i < c; ++i) {
              const double e = p.at(y, x, i) - gt_copy.at(y, x, i);
              s += e * e;
            }
            const double t = std::sqrt(s);
            const double tg = std::max(t, 1e-12);
            const double drho = robust ? 0.4 * std::pow(t + 0.01, -0.6) : 1.0;
            for (int i = 0; i < c; ++i)
              g.at(y, x, i) = g0 * drho * (p.at(y, x, i) - gt_copy.at(y, x, i)) / tg;
          }
        accum(pred, g);
      },
      "sf_norm_loss");
}

}  // namespace dlf::ag
