#include "udepth/losses.hpp"

#include <cmath>

#include "udepth/error.hpp"

namespace udepth {

void LossWeights::validate() const {
  if (!(alpha >= 0.f && alpha < 1.f)) throw ConfigError("alpha must be in [0,1)");
  if (lambda_ap1 < 0.f || lambda_ap2 < 0.f || lambda_ap3 < 0.f || lambda_ds < 0.f ||
      lambda_lr < 0.f)
    throw ConfigError("loss weights must be non-negative");
  if (!(charbonnier_eps > 0.f) || !(charbonnier_gamma > 0.f))
    throw ConfigError("charbonnier constants must be positive");
}

Var charbonnier(Var x, float eps, float gamma) {
  return vpow(add(mul(x, x), eps * eps), gamma);
}

double charbonnier_zero(double eps, double gamma) { return std::pow(eps * eps, gamma); }

Var ssim(Var a, Var b) {
  constexpr float c1 = 0.01f * 0.01f;
  constexpr float c2 = 0.03f * 0.03f;
  Var mu_a = box3x3(a);
  Var mu_b = box3x3(b);
  Var sigma_a = sub(box3x3(mul(a, a)), mul(mu_a, mu_a));
  Var sigma_b = sub(box3x3(mul(b, b)), mul(mu_b, mu_b));
  Var sigma_ab = sub(box3x3(mul(a, b)), mul(mu_a, mu_b));
  Var num = mul(add(mul(mul(mu_a, mu_b), 2.f), c1), add(mul(sigma_ab, 2.f), c2));
  Var den = mul(add(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1), add(add(sigma_a, sigma_b), c2));
  return reduce_mean(div(num, den), Axes::Channel);
}

Var appearance_loss(Var target, Var recon, float alpha, float eps, float gamma) {
  Var s = ssim(target, recon);
  Var ssim_term = reduce_mean(charbonnier(add(vneg(s), 1.f), eps, gamma), Axes::All);
  Var l1_term = reduce_mean(charbonnier(vabs(sub(target, recon)), eps, gamma), Axes::All);
  return add(mul(ssim_term, alpha), mul(l1_term, 1.f - alpha));
}

Var smoothness_loss(Var disparity_norm, Var image, float eps, float gamma) {
  ImageGrads gd = image_gradients(disparity_norm);
  ImageGrads gi = image_gradients(image);
  Var wx = vexp(vneg(reduce_mean(vabs(gi.dx), Axes::Channel)));
  Var wy = vexp(vneg(reduce_mean(vabs(gi.dy), Axes::Channel)));
  Var term = add(charbonnier(mul(gd.dx, wx), eps, gamma), charbonnier(mul(gd.dy, wy), eps, gamma));
  return reduce_mean(term, Axes::All);
}

Var lr_consistency_loss(Var d_left_px, Var d_right_px) {
  // right field read at x + d_l, then the mirrored direction
  Var r_at_l = disparity_warp(d_right_px, d_left_px, +1);
  Var t1 = reduce_mean(vabs(sub(d_left_px, r_at_l)), Axes::All);
  Var l_at_r = disparity_warp(d_left_px, d_right_px, -1);
  Var t2 = reduce_mean(vabs(sub(d_right_px, l_at_r)), Axes::All);
  return mul(add(t1, t2), 0.5f);
}

namespace {

Var or_zero(Tape& t, Var v) { return v.valid() ? v : t.scalar_const(0.f); }

Var sum2(Tape& t, Var a, Var b) {
  if (a.valid() && b.valid()) return add(a, b);
  if (a.valid()) return a;
  if (b.valid()) return b;
  return t.scalar_const(0.f);
}

}  // namespace

LossVars total_loss(Tape& t, const ScaleLossVars& parts, const LossWeights& w) {
  if (parts.scale != 1 && parts.scale != 2 && parts.scale != 4 && parts.scale != 8)
    throw ContractError("total_loss: scale must be one of 1,2,4,8");
  LossVars out;
  out.ap1 = mul(sum2(t, parts.ap_l, parts.ap_r), w.lambda_ap1);
  out.ap2 = mul(sum2(t, parts.ap_dis_l, parts.ap_dis_r), w.lambda_ap2);
  out.ap3 = mul(or_zero(t, parts.ap_temporal), w.lambda_ap3);
  out.ds = mul(sum2(t, parts.ds_l, parts.ds_r), w.lambda_ds * 0.1f / static_cast<float>(parts.scale));
  out.lr = mul(or_zero(t, parts.lr), w.lambda_lr);
  out.total = add(add(add(add(out.ap1, out.ap2), out.ap3), out.ds), out.lr);
  return out;
}

LossVars sum_scales(Tape& t, std::span<const LossVars> per_scale) {
  if (per_scale.empty()) throw ContractError("sum_scales: no scales");
  LossVars acc = per_scale[0];
  for (size_t i = 1; i < per_scale.size(); ++i) {
    acc.ap1 = add(acc.ap1, per_scale[i].ap1);
    acc.ap2 = add(acc.ap2, per_scale[i].ap2);
    acc.ap3 = add(acc.ap3, per_scale[i].ap3);
    acc.ds = add(acc.ds, per_scale[i].ds);
    acc.lr = add(acc.lr, per_scale[i].lr);
  }
  acc.total = add(add(add(add(acc.ap1, acc.ap2), acc.ap3), acc.ds), acc.lr);
  return acc;
}

LossBreakdown breakdown(const Tape& t, const LossVars& v) {
  LossBreakdown b;
  b.ap1 = static_cast<float>(t.scalar_value(v.ap1));
  b.ap2 = static_cast<float>(t.scalar_value(v.ap2));
  b.ap3 = static_cast<float>(t.scalar_value(v.ap3));
  b.ds = static_cast<float>(t.scalar_value(v.ds));
  b.lr = static_cast<float>(t.scalar_value(v.lr));
  b.total = static_cast<float>(t.scalar_value(v.total));
  return b;
}

}  // namespace udepth
