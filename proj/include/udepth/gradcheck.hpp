#pragma once

#include <functional>

#include "udepth/tape.hpp"
#include "udepth/tensor.hpp"

namespace udepth {

// Builds a scalar loss from one input var. May create additional constants
// and leaves internally; only x is perturbed by the checker.
using GraphBuilder = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t worst_index = -1;
  double analytic = 0.0, numeric = 0.0;  // at the worst coordinate
};

// Central differences (f(x+h e_i) - f(x-h e_i)) / (2h) against the analytic
// gradient, coordinate by coordinate. The perturbed forward passes run on
// high-precision tapes (64-bit shadows) so the differences are not drowned by
// float32 rounding; the analytic side is the ordinary float32 backward pass.
// Relative error uses denominator max(|analytic|, |numeric|, 1e-6).
GradCheckResult gradient_check(const GraphBuilder& f, const Tensor& x0, double step = 1e-3);

double gradient_check_err(const GraphBuilder& f, const Tensor& x0, double step = 1e-3);

}  // namespace udepth
