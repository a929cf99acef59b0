#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "dlf/kernels.hpp"
#include "dlf/sparse_ops.hpp"
#include "dlf/tensor.hpp"

// Define-by-run reverse-mode differentiation. Every op builds a Node whose
// backprop closure accumulates into its parents' grads; backward() walks the
// graph in reverse topological order. Leaves marked requires_grad (parameters
// or probed inputs) end up with their gradient populated.

namespace dlf::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;  // allocated by backward() for nodes that need it
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;
  const char* op = "leaf";
};

Var leaf(Tensor t, bool requires_grad = false);

// Seeds root with grad 1 (scalar root) and propagates. Zeroes the grads of
// every reachable node first, so parameter grads are fresh per call.
void backward(const Var& root);

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int dilation = 1);
Var leaky_relu(const Var& x, double slope = 0.1);

// Confidence-carrying ops; each returns (features, confidence).
std::pair<Var, Var> conf_conv(const Var& f, const Var& c, const Var& wf, const Var& wc_raw,
                              const Var& b, int stride);
std::pair<Var, Var> max_conf_pool(const Var& f, const Var& c);
Var nn_up2(const Var& x);

Var warp(const Var& f, const Var& flow);
Var cost_volume(const Var& a, const Var& b, int radius);
Var bilinear_up2(const Var& x);

Var concat_c(const std::vector<Var>& xs);
Var slice_c(const Var& x, int c0, int c1);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var emax(const Var& a, const Var& b);

// Mean over valid cells of rho(|pred - gt|_2) with the 4-channel norm.
// robust selects rho(t) = (t + 0.01)^0.4, otherwise rho(t) = t.
// Zero valid cells yields value 0 with no gradient.
Var sf_norm_loss(const Var& pred, const Tensor& gt, const Tensor& valid, bool robust = false);

}  // namespace dlf::ag
