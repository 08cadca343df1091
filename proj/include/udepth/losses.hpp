#pragma once

#include <span>

#include "udepth/tape.hpp"

namespace udepth {

struct LossWeights {
  float alpha = 0.85f;  // SSIM share of the appearance mix, < 1
  float lambda_ap1 = 1.f;
  float lambda_ap2 = 1.f;
  float lambda_ap3 = 1.f;
  float lambda_ds = 1.f;  // multiplies the structural 0.1/scale factor
  float lambda_lr = 1.f;
  float charbonnier_eps = 1e-3f;
  float charbonnier_gamma = 0.45f;
  void validate() const;
};

struct LossBreakdown {
  float ap1 = 0.f, ap2 = 0.f, ap3 = 0.f, ds = 0.f, lr = 0.f, total = 0.f;
};

// rho(x) = (x^2 + eps^2)^gamma; smooth everywhere, rho'(0) = 0
Var charbonnier(Var x, float eps = 1e-3f, float gamma = 0.45f);
double charbonnier_zero(double eps = 1e-3, double gamma = 0.45);

// Per-pixel SSIM over 3x3 box windows with replicate padding, computed per
// channel and averaged: [N,C,H,W] x2 -> [N,1,H,W]. c1 = 0.01^2, c2 = 0.03^2.
Var ssim(Var a, Var b);

// mean over pixels of alpha*rho(1-SSIM) + (1-alpha)*rho(|target-recon|)
Var appearance_loss(Var target, Var recon, float alpha, float eps = 1e-3f, float gamma = 0.45f);

// Edge-aware smoothness: mean of rho(dx d * exp(-|dx I|)) + rho(dy d *
// exp(-|dy I|)), image gradient magnitudes averaged over channels. The
// disparity is expected in normalized (fraction-of-width) units.
Var smoothness_loss(Var disparity_norm, Var image, float eps = 1e-3f, float gamma = 0.45f);

// Cross-projected disparity agreement, both directions averaged; disparities
// in pixel units. Zero when both fields are equal constants.
Var lr_consistency_loss(Var d_left_px, Var d_right_px);

// Loss terms gathered at one pyramid scale. Invalid vars count as zero
// (disabled branches).
struct ScaleLossVars {
  int scale = 1;  // 1, 2, 4 or 8
  Var ap_l, ap_r;            // bilinear-sampler reconstructions
  Var ap_dis_l, ap_dis_r;    // deep-sampler reconstructions
  Var ap_temporal;           // pose-driven reconstruction, full scale only
  Var ds_l, ds_r;
  Var lr;
};

struct LossVars {
  Var ap1, ap2, ap3, ds, lr, total;
};

// Applies the weights at one scale; smoothness gets lambda_ds * 0.1/scale.
LossVars total_loss(Tape& t, const ScaleLossVars& parts, const LossWeights& w);
// Sums weighted per-scale terms into the multi-scale objective.
LossVars sum_scales(Tape& t, std::span<const LossVars> per_scale);
LossBreakdown breakdown(const Tape& t, const LossVars& v);

}  // namespace udepth
