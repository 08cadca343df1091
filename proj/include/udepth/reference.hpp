#pragma once

#include "udepth/geometry.hpp"
#include "udepth/tensor.hpp"

// Plain serial implementations written independently of the production
// kernels. Tests compare the fast paths against these, and the benchmark tool
// reports the speed difference. Everything here favors obviousness: nested
// loops, double accumulation, no padding tricks.
namespace udepth::ref {

// quadruple-loop convolution, zero "same" padding, odd kernels
Tensor conv2d_naive(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride);

Tensor matmul_naive(const Tensor& a, const Tensor& b);  // [N,F] x [F,G]

// one clamped bilinear read from a single-channel plane
double bilinear_at(const float* plane, int h, int w, double u, double v);

Tensor disparity_warp_naive(const Tensor& source, const Tensor& disparity, int direction);

Tensor projective_warp_naive(const Tensor& source, const Tensor& depth, const Pose6& pose,
                             const CameraRig& rig);

Tensor box3x3_naive(const Tensor& x);

}  // namespace udepth::ref
