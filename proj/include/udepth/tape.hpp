#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "udepth/geometry.hpp"
#include "udepth/kernels.hpp"
#include "udepth/tensor.hpp"

namespace udepth {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  int id = -1;
  Tape* tape = nullptr;
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class OpKind : std::uint8_t {
  Leaf, Constant,
  Add, Sub, Mul, Div, Min, Max,          // binary, tensor-tensor or tensor-scalar
  Abs, Exp, Sqrt, Neg, Relu, Sigmoid,
  Pow, Clamp,
  Conv2d, FullyConnected,
  Upsample2x, Downsample2x,
  Concat, Slice, Reshape,
  ReduceMean, Box3x3, GradX, GradY,
  DisparityWarp, ProjectiveWarp,
};

const char* op_name(OpKind k);

struct Node {
  OpKind op = OpKind::Leaf;
  std::vector<int> in;
  Tensor value;
  Tensor grad;                 // persistent accumulator, filled by backward()
  std::vector<double> shadow;  // 64-bit forward values, high-precision mode only
  bool needs_grad = false;
  bool has_scalar = false;     // binary op with scalar rhs (in s0)
  float s0 = 0.f, s1 = 0.f;    // scalar operand / pow exponent / clamp bounds
  int i0 = 0, i1 = 0;          // stride, warp direction, slice range, reduce kind
  kernels::Intrinsics intr{1.f, 1.f, 0.f, 0.f};
};

// Define-by-run tape: ops execute eagerly and append one node each, so node
// order is a topological order by construction. backward() sweeps it in
// reverse with fresh per-call adjoints and then adds them into the persistent
// per-node accumulators, so calling backward() twice doubles every gradient.
//
// A tape belongs to one thread. In high-precision mode every forward op also
// keeps a float64 shadow of its result (the float32 values become rounded
// copies); the finite-difference checker uses this to evaluate perturbed
// passes at 64-bit.
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool high_precision) : hp_(high_precision) {}

  Var leaf(const Tensor& t);                        // requires_grad taken from the tensor
  Var leaf(const Tensor& t, bool requires_grad);
  Var constant(const Tensor& t);
  Var scalar_const(float v) { return constant(Tensor::scalar(v)); }

  const Tensor& value(Var v) const;
  double scalar_value(Var v) const;                 // size-1 nodes; shadow if available
  Tensor grad(Var v) const;                         // empty if no gradient accumulated
  void backward(Var loss);
  void zero_grads();

  std::size_t size() const { return nodes_.size(); }
  bool high_precision() const { return hp_; }

  // op-builder internals
  // deque storage: appending never moves existing nodes, so references held
  // by op builders stay valid while they allocate their output
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  Var alloc(Node n, std::vector<int> out_shape);    // appends, allocates value/shadow
  void finish(Var v);                               // hp: shadow -> value; finite check
  const float* fdata(Var v) const { return node(v.id).value.data(); }
  const double* ddata(Var v) const { return node(v.id).shadow.data(); }

  // scans every op output for non-finite values when enabled (off by default
  // in optimized builds)
  static void set_finite_checks(bool on);
  static bool finite_checks();

 private:
  std::deque<Node> nodes_;
  bool hp_ = false;
};

// ---- elementwise ----------------------------------------------------------

enum class EwOp { Add, Sub, Mul, Div, Abs, Exp, Sqrt, Pow, Min, Max, Clamp };

Var elementwise(EwOp op, Var a, Var b);                      // binary kinds
Var elementwise(EwOp op, Var a, float s0, float s1 = 0.f);   // scalar rhs / unary kinds

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add(Var a, float s);
Var sub(Var a, float s);
Var mul(Var a, float s);
Var div(Var a, float s);
Var vmin(Var a, Var b);
Var vmax(Var a, Var b);
Var vmin(Var a, float s);
Var vmax(Var a, float s);
Var vabs(Var a);
Var vexp(Var a);
Var vsqrt(Var a);
Var vneg(Var a);
Var vpow(Var a, float exponent);
Var vclamp(Var a, float lo, float hi);
Var relu(Var a);
Var sigmoid(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator+(Var a, float s) { return add(a, s); }
inline Var operator-(Var a, float s) { return sub(a, s); }
inline Var operator*(Var a, float s) { return mul(a, s); }
inline Var operator/(Var a, float s) { return div(a, s); }
inline Var operator*(float s, Var a) { return mul(a, s); }
inline Var operator-(Var a) { return vneg(a); }

// ---- structure ------------------------------------------------------------

// input NCHW, weight [out_ch, in_ch, k, k], bias [out_ch]; stride 1 or 2,
// zero "same" padding so the output is ceil(input/stride)
Var conv2d(Var input, Var weight, Var bias, int stride);
// input [N,F], weight [F,G], bias [G]
Var fully_connected(Var input, Var weight, Var bias);
Var upsample2x(Var x);        // nearest-neighbor
Var downsample2x(Var x);      // 2x2 box average; spatial dims must be even
Var concat_channels(std::span<const Var> parts);
Var concat_channels(std::initializer_list<Var> parts);
Var slice_channels(Var x, int c0, int c1);  // half-open along axis 1
Var reshape(Var x, std::vector<int> shape);

enum class Axes { All, Spatial, Channel };
Var reduce_mean(Var x, Axes axes);

// ---- image ----------------------------------------------------------------

Var box3x3(Var x);  // 3x3 mean, replicate padding
struct ImageGrads {
  Var dx, dy;
};
// forward differences; last column (resp. row) is zero
ImageGrads image_gradients(Var x);

// out(x,y) = src sampled at (x + direction*disp(x,y), y); disparity in pixels
Var disparity_warp(Var source, Var disparity, int direction);
// D = baseline * fx / max(d, 1e-3 px)
Var depth_from_disparity(Var disparity_px, const CameraRig& rig);
// pose is a [N,6] (or [6]) node: rx,ry,rz,tx,ty,tz
Var projective_warp(Var source, Var depth, Var pose, const CameraRig& rig);
// 1 where the reprojected sample lands in-frame with positive depth
Tensor projective_valid_mask(const Tensor& depth, const Tensor& pose, const CameraRig& rig);

}  // namespace udepth
