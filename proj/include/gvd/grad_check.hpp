#pragma once

#include <string>
#include <vector>

#include "gvd/tensor.hpp"

namespace gvd {

// Central-finite-difference oracle for the analytic backward passes. A random
// cotangent u is fixed, d<u, f(x)>/dx_j is compared entry by entry, and the
// max relative error over every input entry is returned. Ops without a
// backward raise "no-backward".
//
// Registered ops and their inputs:
//   softmax         x (vector)
//   linear          x (n,din), w (din,dout), b (dout)
//   mlp             x, w1, b1, w2, b2 (GELU between)
//   layer-norm      x (n,d), scale (d), shift (d)
//   attention       Q (nq,d), K (nk,d), V (nk,dv)
//   attention-bias  Q, K, V, bias (nk)
//   soft-gate       r (scalar)
//   stga            z (n,w), g (m,dg), gamma (scalar); seeded probe params
//   hard-gate       forward only, raises "no-backward"
double grad_check(const std::string& op_name, const std::vector<Tensor>& inputs, double h = 1e-5);

}  // namespace gvd
