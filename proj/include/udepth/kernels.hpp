#pragma once

#include <cstdint>

// Low-level compute kernels behind the tape ops. Every parallel loop here is
// map-style: one thread owns each output element and performs any inner
// accumulation serially in a fixed order, so results are bit-identical
// whether threading is on or off and whatever the thread count. Scatter-style
// adjoints (bilinear warps, box filter written the obvious way) stay serial.
//
// Forward kernels are templated on the scalar type: float is the production
// path, double backs the high-precision shadow pass used by the gradient
// checker. Backward kernels exist in float only.
namespace udepth::kernels {

void set_parallel(bool on);
bool parallel_enabled();

enum class Binary { Add, Sub, Mul, Div, Min, Max };
enum class Unary { Abs, Exp, Sqrt, Neg, Relu, Sigmoid };

inline constexpr double kDivEps = 1e-12;   // added to divisors / radicands
inline constexpr float kDepthEpsPx = 1e-3f;

// The guard defaults to on; with it off, division by zero produces inf/nan
// which the tape's finite checks report as a numeric error.
void set_div_guard(bool on);
double div_eps();

template <typename T>
void binary_ew(Binary op, const T* a, const T* b, T* y, std::int64_t n);
template <typename T>
void binary_ew_scalar(Binary op, const T* a, T s, T* y, std::int64_t n);
template <typename T>
void unary_ew(Unary op, const T* x, T* y, std::int64_t n);
template <typename T>
void pow_ew(const T* x, T e, T* y, std::int64_t n);
template <typename T>
void clamp_ew(const T* x, T lo, T hi, T* y, std::int64_t n);

// adjoints; gy is the upstream gradient, outputs accumulate (+=)
void binary_ew_backward(Binary op, const float* a, const float* b, const float* y,
                        const float* gy, float* ga, float* gb, std::int64_t n);
void binary_ew_scalar_backward(Binary op, const float* a, float s, const float* y,
                               const float* gy, float* ga, std::int64_t n);
void unary_ew_backward(Unary op, const float* x, const float* y, const float* gy, float* gx,
                       std::int64_t n);
void pow_ew_backward(const float* x, float e, const float* gy, float* gx, std::int64_t n);
void clamp_ew_backward(const float* x, float lo, float hi, const float* gy, float* gx,
                       std::int64_t n);

struct Conv2dShape {
  int n, cin, h, w;     // input
  int cout, k, stride;  // weight [cout, cin, k, k], stride 1 or 2
  int pad, oh, ow;      // pad = (k-1)/2, oh = ceil(h/stride)
};
Conv2dShape make_conv2d_shape(int n, int cin, int h, int w, int cout, int k, int stride);

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, const Conv2dShape& s);
void conv2d_backward_input(const float* w, const float* gy, float* gx, const Conv2dShape& s);
void conv2d_backward_weight(const float* x, const float* gy, float* gw, const Conv2dShape& s);
void conv2d_backward_bias(const float* gy, float* gb, const Conv2dShape& s);

template <typename T>
void fc_forward(const T* x, const T* w, const T* b, T* y, int n, int f, int g);
void fc_backward(const float* x, const float* w, const float* gy, float* gx, float* gw, float* gb,
                 int n, int f, int g);

template <typename T>
void upsample2x_forward(const T* x, T* y, int n, int c, int h, int w);
void upsample2x_backward(const float* gy, float* gx, int n, int c, int h, int w);

template <typename T>
void downsample2x_forward(const T* x, T* y, int n, int c, int h, int w);
void downsample2x_backward(const float* gy, float* gx, int n, int c, int h, int w);

enum class Reduce { All, Spatial, Channel };
template <typename T>
void reduce_mean_forward(Reduce kind, const T* x, T* y, int n, int c, int h, int w);
void reduce_mean_backward(Reduce kind, const float* gy, float* gx, int n, int c, int h, int w);

// 3x3 box mean with replicate padding
template <typename T>
void box3x3_forward(const T* x, T* y, int n, int c, int h, int w);
void box3x3_backward(const float* gy, float* gx, int n, int c, int h, int w);

// forward differences, last column (resp. row) zero
template <typename T>
void image_grad_forward(bool horizontal, const T* x, T* y, int n, int c, int h, int w);
void image_grad_backward(bool horizontal, const float* gy, float* gx, int n, int c, int h, int w);

// out(x,y) = bilinear sample of src at (x + dir * disp(x,y), y), edge-clamped.
// disp has a single channel; coordinates are computed in double.
template <typename T>
void disparity_warp_forward(const T* src, const T* disp, T* y, int n, int c, int h, int w, int dir);
void disparity_warp_backward(const float* src, const float* disp, const float* gy, float* gsrc,
                             float* gdisp, int n, int c, int h, int w, int dir);

struct Intrinsics {
  float fx, fy, cx, cy;
};

// Back-project each target pixel with depth, move it by the 6-dof pose
// (rx,ry,rz,tx,ty,tz per sample), re-project, sample src bilinearly.
// mask (optional, may be null) gets 1 where the sample landed in frame with
// positive forward depth, else 0.
template <typename T>
void projective_warp_forward(const T* src, const T* depth, const T* pose, T* y, float* mask,
                             int n, int c, int h, int w, const Intrinsics& K);
void projective_warp_backward(const float* src, const float* depth, const float* pose,
                              const float* gy, float* gsrc, float* gdepth, float* gpose,
                              int n, int c, int h, int w, const Intrinsics& K);

void cast_to_float(const double* x, float* y, std::int64_t n);

}  // namespace udepth::kernels
