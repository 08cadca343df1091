#include "udepth/gradcheck.hpp"

#include <cmath>

#include "udepth/error.hpp"

namespace udepth {

namespace {

double eval_f64(const GraphBuilder& f, const Tensor& x) {
  Tape t(true);
  Var in = t.leaf(x, false);
  Var loss = f(t, in);
  return t.scalar_value(loss);
}

}  // namespace

GradCheckResult gradient_check(const GraphBuilder& f, const Tensor& x0, double step) {
  if (!(step > 0)) throw ContractError("gradient_check: step must be positive");

  Tape t;
  Var x = t.leaf(x0, true);
  Var loss = f(t, x);
  if (t.value(loss).size() != 1)
    throw ContractError("gradient_check: builder must produce a scalar loss");
  t.backward(loss);
  const Tensor analytic = t.grad(x);
  if (analytic.empty())
    throw ContractError("gradient_check: no gradient reached the input");

  GradCheckResult res;
  for (std::int64_t i = 0; i < x0.size(); ++i) {
    Tensor xp = x0.clone();
    Tensor xm = x0.clone();
    xp[i] = static_cast<float>(static_cast<double>(xp[i]) + step);
    xm[i] = static_cast<float>(static_cast<double>(xm[i]) - step);
    // the step actually realized after float32 rounding of the endpoints
    const double h = static_cast<double>(xp[i]) - static_cast<double>(xm[i]);
    const double fp = eval_f64(f, xp);
    const double fm = eval_f64(f, xm);
    const double numeric = (fp - fm) / h;
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
      res.analytic = a;
      res.numeric = numeric;
    }
  }
  return res;
}

double gradient_check_err(const GraphBuilder& f, const Tensor& x0, double step) {
  return gradient_check(f, x0, step).max_rel_err;
}

}  // namespace udepth
