#include "udepth/tape.hpp"

#include <algorithm>
#include <cmath>

#include "udepth/error.hpp"

namespace udepth {

namespace {

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an invalid var");
  return *a.tape;
}

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("vars belong to different tapes");
}

std::vector<int> shp(Var a) { return a.tape->value(a).shape(); }

void require_rank4(Var a, const char* what) {
  if (shp(a).size() != 4)
    throw DimensionError(std::string(what) + " expects an NCHW tensor, got " + shape_str(shp(a)));
}

struct Dims4 {
  int n, c, h, w;
};

Dims4 dims4(Var a) {
  const auto& s = shp(a);
  return {s[0], s[1], s[2], s[3]};
}

}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Min: return "min";
    case OpKind::Max: return "max";
    case OpKind::Abs: return "abs";
    case OpKind::Exp: return "exp";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Neg: return "neg";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Pow: return "pow";
    case OpKind::Clamp: return "clamp";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::FullyConnected: return "fully_connected";
    case OpKind::Upsample2x: return "upsample2x";
    case OpKind::Downsample2x: return "downsample2x";
    case OpKind::Concat: return "concat_channels";
    case OpKind::Slice: return "slice_channels";
    case OpKind::Reshape: return "reshape";
    case OpKind::ReduceMean: return "reduce_mean";
    case OpKind::Box3x3: return "box3x3";
    case OpKind::GradX: return "image_grad_x";
    case OpKind::GradY: return "image_grad_y";
    case OpKind::DisparityWarp: return "disparity_warp";
    case OpKind::ProjectiveWarp: return "projective_warp";
  }
  return "?";
}

void Tape::set_finite_checks(bool on) { g_finite_checks = on; }
bool Tape::finite_checks() { return g_finite_checks; }

Var Tape::leaf(const Tensor& t) { return leaf(t, t.requires_grad); }

Var Tape::leaf(const Tensor& t, bool requires_grad) {
  if (t.empty()) throw ContractError("cannot put an empty tensor on the tape");
  Node n;
  n.op = OpKind::Leaf;
  n.value = t;
  n.needs_grad = requires_grad;
  if (hp_) {
    n.shadow.resize(static_cast<size_t>(t.size()));
    const float* p = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i) n.shadow[static_cast<size_t>(i)] = p[i];
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Var Tape::constant(const Tensor& t) {
  Var v = leaf(t, false);
  node(v.id).op = OpKind::Constant;
  return v;
}

const Tensor& Tape::value(Var v) const {
  if (!v.valid() || v.tape != this) throw ContractError("var does not belong to this tape");
  return node(v.id).value;
}

double Tape::scalar_value(Var v) const {
  const Node& n = node(v.id);
  if (n.value.size() != 1)
    throw ContractError("scalar_value on tensor of shape " + shape_str(n.value.shape()));
  return n.shadow.empty() ? static_cast<double>(n.value[0]) : n.shadow[0];
}

Tensor Tape::grad(Var v) const {
  if (!v.valid() || v.tape != this) throw ContractError("var does not belong to this tape");
  return node(v.id).grad;
}

void Tape::zero_grads() {
  for (auto& n : nodes_) n.grad = Tensor();
}

Var Tape::alloc(Node n, std::vector<int> out_shape) {
  if (n.op != OpKind::Leaf && n.op != OpKind::Constant) {
    n.needs_grad = false;
    for (int id : n.in) n.needs_grad = n.needs_grad || node(id).needs_grad;
  }
  n.value = Tensor(std::move(out_shape));
  if (hp_) n.shadow.resize(static_cast<size_t>(n.value.size()));
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

void Tape::finish(Var v) {
  Node& n = node(v.id);
  if (hp_) kernels::cast_to_float(n.shadow.data(), n.value.data(), n.value.size());
  if (g_finite_checks && !n.value.all_finite())
    throw NumericError(std::string("non-finite values in output of ") + op_name(n.op));
}

// ---------------------------------------------------------------------------
// backward

namespace {

// lazily allocated per-call adjoints; nullptr for inputs that don't need grad
float* adj_ptr(Tape& t, std::vector<Tensor>& adj, int id) {
  Node& n = t.node(id);
  if (!n.needs_grad) return nullptr;
  Tensor& a = adj[static_cast<size_t>(id)];
  if (a.empty()) a = Tensor(n.value.shape());
  return a.data();
}

}  // namespace

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.tape != this) throw ContractError("loss var does not belong to this tape");
  if (node(loss.id).value.size() != 1)
    throw ContractError("backward() expects a scalar loss, got shape " +
                        shape_str(node(loss.id).value.shape()));
  if (!node(loss.id).needs_grad) return;

  std::vector<Tensor> adj(nodes_.size());
  adj[static_cast<size_t>(loss.id)] = Tensor::scalar(1.f);

  for (int i = loss.id; i >= 0; --i) {
    Node& nd = nodes_[static_cast<size_t>(i)];
    Tensor& gy_t = adj[static_cast<size_t>(i)];
    if (gy_t.empty() || !nd.needs_grad) continue;
    const float* gy = gy_t.data();

    switch (nd.op) {
      case OpKind::Leaf:
      case OpKind::Constant:
        break;

      case OpKind::Add:
      case OpKind::Sub:
      case OpKind::Mul:
      case OpKind::Div:
      case OpKind::Min:
      case OpKind::Max: {
        const kernels::Binary bk =
            nd.op == OpKind::Add   ? kernels::Binary::Add
            : nd.op == OpKind::Sub ? kernels::Binary::Sub
            : nd.op == OpKind::Mul ? kernels::Binary::Mul
            : nd.op == OpKind::Div ? kernels::Binary::Div
            : nd.op == OpKind::Min ? kernels::Binary::Min
                                   : kernels::Binary::Max;
        const Node& a = node(nd.in[0]);
        if (nd.has_scalar) {
          kernels::binary_ew_scalar_backward(bk, a.value.data(), nd.s0, nd.value.data(), gy,
                                             adj_ptr(*this, adj, nd.in[0]), a.value.size());
        } else {
          const Node& b = node(nd.in[1]);
          kernels::binary_ew_backward(bk, a.value.data(), b.value.data(), nd.value.data(), gy,
                                      adj_ptr(*this, adj, nd.in[0]),
                                      adj_ptr(*this, adj, nd.in[1]), a.value.size());
        }
        break;
      }

      case OpKind::Abs:
      case OpKind::Exp:
      case OpKind::Sqrt:
      case OpKind::Neg:
      case OpKind::Relu:
      case OpKind::Sigmoid: {
        const kernels::Unary uk =
            nd.op == OpKind::Abs    ? kernels::Unary::Abs
            : nd.op == OpKind::Exp  ? kernels::Unary::Exp
            : nd.op == OpKind::Sqrt ? kernels::Unary::Sqrt
            : nd.op == OpKind::Neg  ? kernels::Unary::Neg
            : nd.op == OpKind::Relu ? kernels::Unary::Relu
                                    : kernels::Unary::Sigmoid;
        const Node& a = node(nd.in[0]);
        kernels::unary_ew_backward(uk, a.value.data(), nd.value.data(), gy,
                                   adj_ptr(*this, adj, nd.in[0]), a.value.size());
        break;
      }

      case OpKind::Pow: {
        const Node& a = node(nd.in[0]);
        kernels::pow_ew_backward(a.value.data(), nd.s0, gy, adj_ptr(*this, adj, nd.in[0]),
                                 a.value.size());
        break;
      }

      case OpKind::Clamp: {
        const Node& a = node(nd.in[0]);
        kernels::clamp_ew_backward(a.value.data(), nd.s0, nd.s1, gy,
                                   adj_ptr(*this, adj, nd.in[0]), a.value.size());
        break;
      }

      case OpKind::Conv2d: {
        const Node& x = node(nd.in[0]);
        const Node& w = node(nd.in[1]);
        const auto cs = kernels::make_conv2d_shape(x.value.dim(0), x.value.dim(1), x.value.dim(2),
                                                   x.value.dim(3), w.value.dim(0), w.value.dim(2),
                                                   nd.i0);
        if (float* gx = adj_ptr(*this, adj, nd.in[0]))
          kernels::conv2d_backward_input(w.value.data(), gy, gx, cs);
        if (float* gw = adj_ptr(*this, adj, nd.in[1]))
          kernels::conv2d_backward_weight(x.value.data(), gy, gw, cs);
        if (float* gb = adj_ptr(*this, adj, nd.in[2])) kernels::conv2d_backward_bias(gy, gb, cs);
        break;
      }

      case OpKind::FullyConnected: {
        const Node& x = node(nd.in[0]);
        const Node& w = node(nd.in[1]);
        kernels::fc_backward(x.value.data(), w.value.data(), gy, adj_ptr(*this, adj, nd.in[0]),
                             adj_ptr(*this, adj, nd.in[1]), adj_ptr(*this, adj, nd.in[2]),
                             x.value.dim(0), x.value.dim(1), w.value.dim(1));
        break;
      }

      case OpKind::Upsample2x: {
        const Node& x = node(nd.in[0]);
        if (float* gx = adj_ptr(*this, adj, nd.in[0]))
          kernels::upsample2x_backward(gy, gx, x.value.dim(0), x.value.dim(1), x.value.dim(2),
                                       x.value.dim(3));
        break;
      }

      case OpKind::Downsample2x: {
        const Node& x = node(nd.in[0]);
        if (float* gx = adj_ptr(*this, adj, nd.in[0]))
          kernels::downsample2x_backward(gy, gx, x.value.dim(0), x.value.dim(1), x.value.dim(2),
                                         x.value.dim(3));
        break;
      }

      case OpKind::Concat: {
        const int d0 = nd.value.dim(0);
        const int ctot = nd.value.dim(1);
        std::int64_t rest = 1;
        for (int k = 2; k < nd.value.rank(); ++k) rest *= nd.value.dim(k);
        int off = 0;
        for (int pi : nd.in) {
          const Node& part = node(pi);
          const int ck = part.value.dim(1);
          if (float* gp = adj_ptr(*this, adj, pi)) {
            for (int b = 0; b < d0; ++b)
              for (int c = 0; c < ck; ++c)
                for (std::int64_t r = 0; r < rest; ++r)
                  gp[(std::int64_t(b) * ck + c) * rest + r] +=
                      gy[(std::int64_t(b) * ctot + off + c) * rest + r];
          }
          off += ck;
        }
        break;
      }

      case OpKind::Slice: {
        const Node& x = node(nd.in[0]);
        if (float* gx = adj_ptr(*this, adj, nd.in[0])) {
          const int d0 = x.value.dim(0);
          const int ctot = x.value.dim(1);
          const int c0 = nd.i0, c1 = nd.i1;
          std::int64_t rest = 1;
          for (int k = 2; k < x.value.rank(); ++k) rest *= x.value.dim(k);
          for (int b = 0; b < d0; ++b)
            for (int c = c0; c < c1; ++c)
              for (std::int64_t r = 0; r < rest; ++r)
                gx[(std::int64_t(b) * ctot + c) * rest + r] +=
                    gy[(std::int64_t(b) * (c1 - c0) + (c - c0)) * rest + r];
        }
        break;
      }

      case OpKind::Reshape: {
        const Node& x = node(nd.in[0]);
        if (float* gx = adj_ptr(*this, adj, nd.in[0]))
          for (std::int64_t k = 0; k < x.value.size(); ++k) gx[k] += gy[k];
        break;
      }

      case OpKind::ReduceMean: {
        const Node& x = node(nd.in[0]);
        if (float* gx = adj_ptr(*this, adj, nd.in[0])) {
          int n = 1, c = 1, h = 1, w = 1;
          if (x.value.rank() == 4) {
            n = x.value.dim(0); c = x.value.dim(1); h = x.value.dim(2); w = x.value.dim(3);
          } else {
            n = 1; c = 1; h = 1; w = static_cast<int>(x.value.size());
          }
          kernels::reduce_mean_backward(static_cast<kernels::Reduce>(nd.i0), gy, gx, n, c, h, w);
        }
        break;
      }

      case OpKind::Box3x3: {
        const Node& x = node(nd.in[0]);
        if (float* gx = adj_ptr(*this, adj, nd.in[0]))
          kernels::box3x3_backward(gy, gx, x.value.dim(0), x.value.dim(1), x.value.dim(2),
                                   x.value.dim(3));
        break;
      }

      case OpKind::GradX:
      case OpKind::GradY: {
        const Node& x = node(nd.in[0]);
        if (float* gx = adj_ptr(*this, adj, nd.in[0]))
          kernels::image_grad_backward(nd.op == OpKind::GradX, gy, gx, x.value.dim(0),
                                       x.value.dim(1), x.value.dim(2), x.value.dim(3));
        break;
      }

      case OpKind::DisparityWarp: {
        const Node& src = node(nd.in[0]);
        const Node& disp = node(nd.in[1]);
        kernels::disparity_warp_backward(src.value.data(), disp.value.data(), gy,
                                         adj_ptr(*this, adj, nd.in[0]),
                                         adj_ptr(*this, adj, nd.in[1]), src.value.dim(0),
                                         src.value.dim(1), src.value.dim(2), src.value.dim(3),
                                         nd.i0);
        break;
      }

      case OpKind::ProjectiveWarp: {
        const Node& src = node(nd.in[0]);
        const Node& depth = node(nd.in[1]);
        const Node& pose = node(nd.in[2]);
        kernels::projective_warp_backward(src.value.data(), depth.value.data(), pose.value.data(),
                                          gy, adj_ptr(*this, adj, nd.in[0]),
                                          adj_ptr(*this, adj, nd.in[1]),
                                          adj_ptr(*this, adj, nd.in[2]), src.value.dim(0),
                                          src.value.dim(1), src.value.dim(2), src.value.dim(3),
                                          nd.intr);
        break;
      }
    }
  }

  // fold this call's adjoints into the persistent accumulators
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (adj[i].empty() || !nodes_[i].needs_grad) continue;
    Node& nd = nodes_[i];
    if (nd.grad.empty()) nd.grad = Tensor(nd.value.shape());
    float* g = nd.grad.data();
    const float* a = adj[i].data();
    for (std::int64_t k = 0; k < nd.grad.size(); ++k) g[k] += a[k];
  }
}

// ---------------------------------------------------------------------------
// elementwise builders

namespace {

Var binary_op(OpKind k, kernels::Binary bk, Var a, Var b) {
  Tape& t = tape_of(a);
  same_tape(a, b);
  if (shp(a) != shp(b))
    throw DimensionError(std::string(op_name(k)) + ": shape mismatch " + shape_str(shp(a)) +
                         " vs " + shape_str(shp(b)));
  Node n;
  n.op = k;
  n.in = {a.id, b.id};
  Var out = t.alloc(std::move(n), shp(a));
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::binary_ew<double>(bk, t.ddata(a), t.ddata(b), nd.shadow.data(), nd.value.size());
  else
    kernels::binary_ew<float>(bk, t.fdata(a), t.fdata(b), nd.value.data(), nd.value.size());
  t.finish(out);
  return out;
}

Var binary_op_scalar(OpKind k, kernels::Binary bk, Var a, float s) {
  Tape& t = tape_of(a);
  Node n;
  n.op = k;
  n.in = {a.id};
  n.has_scalar = true;
  n.s0 = s;
  Var out = t.alloc(std::move(n), shp(a));
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::binary_ew_scalar<double>(bk, t.ddata(a), double(s), nd.shadow.data(), nd.value.size());
  else
    kernels::binary_ew_scalar<float>(bk, t.fdata(a), s, nd.value.data(), nd.value.size());
  t.finish(out);
  return out;
}

Var unary_op(OpKind k, kernels::Unary uk, Var a) {
  Tape& t = tape_of(a);
  Node n;
  n.op = k;
  n.in = {a.id};
  Var out = t.alloc(std::move(n), shp(a));
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::unary_ew<double>(uk, t.ddata(a), nd.shadow.data(), nd.value.size());
  else
    kernels::unary_ew<float>(uk, t.fdata(a), nd.value.data(), nd.value.size());
  t.finish(out);
  return out;
}

}  // namespace

Var add(Var a, Var b) { return binary_op(OpKind::Add, kernels::Binary::Add, a, b); }
Var sub(Var a, Var b) { return binary_op(OpKind::Sub, kernels::Binary::Sub, a, b); }
Var mul(Var a, Var b) { return binary_op(OpKind::Mul, kernels::Binary::Mul, a, b); }
Var div(Var a, Var b) { return binary_op(OpKind::Div, kernels::Binary::Div, a, b); }
Var vmin(Var a, Var b) { return binary_op(OpKind::Min, kernels::Binary::Min, a, b); }
Var vmax(Var a, Var b) { return binary_op(OpKind::Max, kernels::Binary::Max, a, b); }
Var add(Var a, float s) { return binary_op_scalar(OpKind::Add, kernels::Binary::Add, a, s); }
Var sub(Var a, float s) { return binary_op_scalar(OpKind::Sub, kernels::Binary::Sub, a, s); }
Var mul(Var a, float s) { return binary_op_scalar(OpKind::Mul, kernels::Binary::Mul, a, s); }
Var div(Var a, float s) { return binary_op_scalar(OpKind::Div, kernels::Binary::Div, a, s); }
Var vmin(Var a, float s) { return binary_op_scalar(OpKind::Min, kernels::Binary::Min, a, s); }
Var vmax(Var a, float s) { return binary_op_scalar(OpKind::Max, kernels::Binary::Max, a, s); }
Var vabs(Var a) { return unary_op(OpKind::Abs, kernels::Unary::Abs, a); }
Var vexp(Var a) { return unary_op(OpKind::Exp, kernels::Unary::Exp, a); }
Var vsqrt(Var a) { return unary_op(OpKind::Sqrt, kernels::Unary::Sqrt, a); }
Var vneg(Var a) { return unary_op(OpKind::Neg, kernels::Unary::Neg, a); }
Var relu(Var a) { return unary_op(OpKind::Relu, kernels::Unary::Relu, a); }
Var sigmoid(Var a) { return unary_op(OpKind::Sigmoid, kernels::Unary::Sigmoid, a); }

Var vpow(Var a, float exponent) {
  Tape& t = tape_of(a);
  Node n;
  n.op = OpKind::Pow;
  n.in = {a.id};
  n.s0 = exponent;
  Var out = t.alloc(std::move(n), shp(a));
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::pow_ew<double>(t.ddata(a), double(exponent), nd.shadow.data(), nd.value.size());
  else
    kernels::pow_ew<float>(t.fdata(a), exponent, nd.value.data(), nd.value.size());
  t.finish(out);
  return out;
}

Var vclamp(Var a, float lo, float hi) {
  Tape& t = tape_of(a);
  Node n;
  n.op = OpKind::Clamp;
  n.in = {a.id};
  n.s0 = lo;
  n.s1 = hi;
  Var out = t.alloc(std::move(n), shp(a));
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::clamp_ew<double>(t.ddata(a), double(lo), double(hi), nd.shadow.data(),
                              nd.value.size());
  else
    kernels::clamp_ew<float>(t.fdata(a), lo, hi, nd.value.data(), nd.value.size());
  t.finish(out);
  return out;
}

Var elementwise(EwOp op, Var a, Var b) {
  switch (op) {
    case EwOp::Add: return add(a, b);
    case EwOp::Sub: return sub(a, b);
    case EwOp::Mul: return mul(a, b);
    case EwOp::Div: return div(a, b);
    case EwOp::Min: return vmin(a, b);
    case EwOp::Max: return vmax(a, b);
    default: throw ContractError("elementwise: op takes no tensor rhs");
  }
}

Var elementwise(EwOp op, Var a, float s0, float s1) {
  switch (op) {
    case EwOp::Add: return add(a, s0);
    case EwOp::Sub: return sub(a, s0);
    case EwOp::Mul: return mul(a, s0);
    case EwOp::Div: return div(a, s0);
    case EwOp::Min: return vmin(a, s0);
    case EwOp::Max: return vmax(a, s0);
    case EwOp::Abs: return vabs(a);
    case EwOp::Exp: return vexp(a);
    case EwOp::Sqrt: return vsqrt(a);
    case EwOp::Pow: return vpow(a, s0);
    case EwOp::Clamp: return vclamp(a, s0, s1);
  }
  throw ContractError("elementwise: unknown op");
}

// ---------------------------------------------------------------------------
// structural ops

Var conv2d(Var input, Var weight, Var bias, int stride) {
  Tape& t = tape_of(input);
  same_tape(input, weight);
  same_tape(input, bias);
  require_rank4(input, "conv2d");
  if (shp(weight).size() != 4)
    throw DimensionError("conv2d: weight must be [out,in,k,k], got " + shape_str(shp(weight)));
  if (shp(bias).size() != 1 || shp(bias)[0] != shp(weight)[0])
    throw DimensionError("conv2d: bias must be [out_channels]");
  if (shp(weight)[2] != shp(weight)[3]) throw DimensionError("conv2d: kernel must be square");
  if (shp(weight)[1] != shp(input)[1])
    throw DimensionError("conv2d: input has " + std::to_string(shp(input)[1]) +
                         " channels, weight expects " + std::to_string(shp(weight)[1]));
  if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
  if (shp(weight)[2] % 2 == 0) throw ContractError("conv2d: kernel size must be odd");

  const auto d = dims4(input);
  const auto cs = kernels::make_conv2d_shape(d.n, d.c, d.h, d.w, shp(weight)[0], shp(weight)[2],
                                             stride);
  Node n;
  n.op = OpKind::Conv2d;
  n.in = {input.id, weight.id, bias.id};
  n.i0 = stride;
  Var out = t.alloc(std::move(n), {cs.n, cs.cout, cs.oh, cs.ow});
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::conv2d_forward<double>(t.ddata(input), t.ddata(weight), t.ddata(bias),
                                    nd.shadow.data(), cs);
  else
    kernels::conv2d_forward<float>(t.fdata(input), t.fdata(weight), t.fdata(bias),
                                   nd.value.data(), cs);
  t.finish(out);
  return out;
}

Var fully_connected(Var input, Var weight, Var bias) {
  Tape& t = tape_of(input);
  same_tape(input, weight);
  same_tape(input, bias);
  if (shp(input).size() != 2) throw DimensionError("fully_connected: input must be [N,F]");
  if (shp(weight).size() != 2 || shp(weight)[0] != shp(input)[1])
    throw DimensionError("fully_connected: weight must be [F,G] with F=" +
                         std::to_string(shp(input)[1]) + ", got " + shape_str(shp(weight)));
  if (shp(bias).size() != 1 || shp(bias)[0] != shp(weight)[1])
    throw DimensionError("fully_connected: bias must be [G]");
  const int N = shp(input)[0], F = shp(input)[1], G = shp(weight)[1];
  Node n;
  n.op = OpKind::FullyConnected;
  n.in = {input.id, weight.id, bias.id};
  Var out = t.alloc(std::move(n), {N, G});
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::fc_forward<double>(t.ddata(input), t.ddata(weight), t.ddata(bias), nd.shadow.data(),
                                N, F, G);
  else
    kernels::fc_forward<float>(t.fdata(input), t.fdata(weight), t.fdata(bias), nd.value.data(), N,
                               F, G);
  t.finish(out);
  return out;
}

Var upsample2x(Var x) {
  Tape& t = tape_of(x);
  require_rank4(x, "upsample2x");
  const auto d = dims4(x);
  Node n;
  n.op = OpKind::Upsample2x;
  n.in = {x.id};
  Var out = t.alloc(std::move(n), {d.n, d.c, 2 * d.h, 2 * d.w});
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::upsample2x_forward<double>(t.ddata(x), nd.shadow.data(), d.n, d.c, d.h, d.w);
  else
    kernels::upsample2x_forward<float>(t.fdata(x), nd.value.data(), d.n, d.c, d.h, d.w);
  t.finish(out);
  return out;
}

Var downsample2x(Var x) {
  Tape& t = tape_of(x);
  require_rank4(x, "downsample2x");
  const auto d = dims4(x);
  if (d.h % 2 || d.w % 2)
    throw DimensionError("downsample2x: spatial dims must be even, got " + shape_str(shp(x)));
  Node n;
  n.op = OpKind::Downsample2x;
  n.in = {x.id};
  Var out = t.alloc(std::move(n), {d.n, d.c, d.h / 2, d.w / 2});
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::downsample2x_forward<double>(t.ddata(x), nd.shadow.data(), d.n, d.c, d.h, d.w);
  else
    kernels::downsample2x_forward<float>(t.fdata(x), nd.value.data(), d.n, d.c, d.h, d.w);
  t.finish(out);
  return out;
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::vector<int> s0 = shp(parts[0]);
  if (s0.size() < 2) throw DimensionError("concat_channels: inputs must have rank >= 2");
  int ctot = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const std::vector<int> s = shp(p);
    if (s.size() != s0.size() || s[0] != s0[0])
      throw DimensionError("concat_channels: rank/batch mismatch");
    for (size_t k = 2; k < s.size(); ++k)
      if (s[k] != s0[k])
        throw DimensionError("concat_channels: spatial mismatch " + shape_str(s) + " vs " +
                             shape_str(s0));
    ctot += s[1];
  }
  std::vector<int> os = s0;
  os[1] = ctot;
  Node n;
  n.op = OpKind::Concat;
  for (const Var& p : parts) n.in.push_back(p.id);
  Var out = t.alloc(std::move(n), os);
  Node& nd = t.node(out.id);
  const int d0 = s0[0];
  std::int64_t rest = 1;
  for (size_t k = 2; k < s0.size(); ++k) rest *= s0[k];
  int off = 0;
  for (const Var& p : parts) {
    const int ck = shp(p)[1];
    for (int b = 0; b < d0; ++b) {
      if (t.high_precision()) {
        const double* sp = t.ddata(p) + std::int64_t(b) * ck * rest;
        double* dp = nd.shadow.data() + (std::int64_t(b) * ctot + off) * rest;
        std::copy(sp, sp + std::int64_t(ck) * rest, dp);
      } else {
        const float* sp = t.fdata(p) + std::int64_t(b) * ck * rest;
        float* dp = nd.value.data() + (std::int64_t(b) * ctot + off) * rest;
        std::copy(sp, sp + std::int64_t(ck) * rest, dp);
      }
    }
    off += ck;
  }
  t.finish(out);
  return out;
}

Var concat_channels(std::initializer_list<Var> parts) {
  return concat_channels(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_channels(Var x, int c0, int c1) {
  Tape& t = tape_of(x);
  const std::vector<int> s = shp(x);
  if (s.size() < 2) throw DimensionError("slice_channels: input must have rank >= 2");
  if (c0 < 0 || c1 <= c0 || c1 > s[1])
    throw DimensionError("slice_channels: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") out of " + std::to_string(s[1]) + " channels");
  std::vector<int> os = s;
  os[1] = c1 - c0;
  Node n;
  n.op = OpKind::Slice;
  n.in = {x.id};
  n.i0 = c0;
  n.i1 = c1;
  Var out = t.alloc(std::move(n), os);
  Node& nd = t.node(out.id);
  const int d0 = s[0], ctot = s[1], ck = c1 - c0;
  std::int64_t rest = 1;
  for (size_t k = 2; k < s.size(); ++k) rest *= s[k];
  for (int b = 0; b < d0; ++b) {
    if (t.high_precision()) {
      const double* sp = t.ddata(x) + (std::int64_t(b) * ctot + c0) * rest;
      std::copy(sp, sp + std::int64_t(ck) * rest, nd.shadow.data() + std::int64_t(b) * ck * rest);
    } else {
      const float* sp = t.fdata(x) + (std::int64_t(b) * ctot + c0) * rest;
      std::copy(sp, sp + std::int64_t(ck) * rest, nd.value.data() + std::int64_t(b) * ck * rest);
    }
  }
  t.finish(out);
  return out;
}

Var reshape(Var x, std::vector<int> shape) {
  Tape& t = tape_of(x);
  if (shape_size(shape) != t.value(x).size())
    throw DimensionError("reshape: size mismatch, " + shape_str(shp(x)) + " -> " +
                         shape_str(shape));
  Node n;
  n.op = OpKind::Reshape;
  n.in = {x.id};
  Var out = t.alloc(std::move(n), shape);
  Node& nd = t.node(out.id);
  if (t.high_precision())
    std::copy(t.ddata(x), t.ddata(x) + nd.value.size(), nd.shadow.data());
  else
    std::copy(t.fdata(x), t.fdata(x) + nd.value.size(), nd.value.data());
  t.finish(out);
  return out;
}

Var reduce_mean(Var x, Axes axes) {
  Tape& t = tape_of(x);
  int n = 1, c = 1, h = 1, w = 1;
  if (shp(x).size() == 4) {
    const auto d = dims4(x);
    n = d.n; c = d.c; h = d.h; w = d.w;
  } else if (axes == Axes::All) {
    w = static_cast<int>(t.value(x).size());
  } else {
    throw DimensionError("reduce_mean: spatial/channel reduction needs an NCHW tensor");
  }
  std::vector<int> os;
  switch (axes) {
    case Axes::All: os = {1}; break;
    case Axes::Spatial: os = {n, c, 1, 1}; break;
    case Axes::Channel: os = {n, 1, h, w}; break;
  }
  Node nn;
  nn.op = OpKind::ReduceMean;
  nn.in = {x.id};
  nn.i0 = static_cast<int>(axes);
  Var out = t.alloc(std::move(nn), os);
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::reduce_mean_forward<double>(static_cast<kernels::Reduce>(nd.i0), t.ddata(x),
                                         nd.shadow.data(), n, c, h, w);
  else
    kernels::reduce_mean_forward<float>(static_cast<kernels::Reduce>(nd.i0), t.fdata(x),
                                        nd.value.data(), n, c, h, w);
  t.finish(out);
  return out;
}

// ---------------------------------------------------------------------------
// image ops

Var box3x3(Var x) {
  Tape& t = tape_of(x);
  require_rank4(x, "box3x3");
  const auto d = dims4(x);
  Node n;
  n.op = OpKind::Box3x3;
  n.in = {x.id};
  Var out = t.alloc(std::move(n), shp(x));
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::box3x3_forward<double>(t.ddata(x), nd.shadow.data(), d.n, d.c, d.h, d.w);
  else
    kernels::box3x3_forward<float>(t.fdata(x), nd.value.data(), d.n, d.c, d.h, d.w);
  t.finish(out);
  return out;
}

namespace {
Var image_grad(Var x, bool horizontal) {
  Tape& t = tape_of(x);
  require_rank4(x, "image_gradients");
  const auto d = dims4(x);
  if (d.h < 2 || d.w < 2) throw DimensionError("image_gradients: needs H,W >= 2");
  Node n;
  n.op = horizontal ? OpKind::GradX : OpKind::GradY;
  n.in = {x.id};
  Var out = t.alloc(std::move(n), shp(x));
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::image_grad_forward<double>(horizontal, t.ddata(x), nd.shadow.data(), d.n, d.c, d.h,
                                        d.w);
  else
    kernels::image_grad_forward<float>(horizontal, t.fdata(x), nd.value.data(), d.n, d.c, d.h,
                                       d.w);
  t.finish(out);
  return out;
}
}  // namespace

ImageGrads image_gradients(Var x) { return {image_grad(x, true), image_grad(x, false)}; }

Var disparity_warp(Var source, Var disparity, int direction) {
  Tape& t = tape_of(source);
  same_tape(source, disparity);
  require_rank4(source, "disparity_warp");
  require_rank4(disparity, "disparity_warp");
  const auto d = dims4(source);
  const auto dd = dims4(disparity);
  if (dd.c != 1) throw DimensionError("disparity_warp: disparity must have one channel");
  if (dd.n != d.n || dd.h != d.h || dd.w != d.w)
    throw DimensionError("disparity_warp: spatial mismatch " + shape_str(shp(source)) + " vs " +
                         shape_str(shp(disparity)));
  if (direction != 1 && direction != -1)
    throw ContractError("disparity_warp: direction must be +1 or -1");
  Node n;
  n.op = OpKind::DisparityWarp;
  n.in = {source.id, disparity.id};
  n.i0 = direction;
  Var out = t.alloc(std::move(n), shp(source));
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::disparity_warp_forward<double>(t.ddata(source), t.ddata(disparity), nd.shadow.data(),
                                            d.n, d.c, d.h, d.w, direction);
  else
    kernels::disparity_warp_forward<float>(t.fdata(source), t.fdata(disparity), nd.value.data(),
                                           d.n, d.c, d.h, d.w, direction);
  t.finish(out);
  return out;
}

Var depth_from_disparity(Var disparity_px, const CameraRig& rig) {
  rig.validate();
  return mul(vpow(vmax(disparity_px, kernels::kDepthEpsPx), -1.f), rig.baseline_m * rig.fx);
}

Var projective_warp(Var source, Var depth, Var pose, const CameraRig& rig) {
  Tape& t = tape_of(source);
  same_tape(source, depth);
  same_tape(source, pose);
  rig.validate();
  require_rank4(source, "projective_warp");
  require_rank4(depth, "projective_warp");
  const Dims4 d = dims4(source);
  const Dims4 dd = dims4(depth);
  if (dd.c != 1) throw DimensionError("projective_warp: depth must have one channel");
  if (dd.n != d.n || dd.h != d.h || dd.w != d.w)
    throw DimensionError("projective_warp: spatial mismatch " + shape_str(shp(source)) + " vs " +
                         shape_str(shp(depth)));
  const std::vector<int> ps = shp(pose);
  const std::int64_t pose_elems = t.value(pose).size();
  if (pose_elems != std::int64_t(d.n) * 6 || ps.back() != 6)
    throw DimensionError("projective_warp: pose must be [N,6], got " + shape_str(ps));
  Node n;
  n.op = OpKind::ProjectiveWarp;
  n.in = {source.id, depth.id, pose.id};
  n.intr = {rig.fx, rig.fy, rig.cx, rig.cy};
  Var out = t.alloc(std::move(n), shp(source));
  Node& nd = t.node(out.id);
  if (t.high_precision())
    kernels::projective_warp_forward<double>(t.ddata(source), t.ddata(depth), t.ddata(pose),
                                             nd.shadow.data(), nullptr, d.n, d.c, d.h, d.w,
                                             nd.intr);
  else
    kernels::projective_warp_forward<float>(t.fdata(source), t.fdata(depth), t.fdata(pose),
                                            nd.value.data(), nullptr, d.n, d.c, d.h, d.w, nd.intr);
  t.finish(out);
  return out;
}

Tensor projective_valid_mask(const Tensor& depth, const Tensor& pose, const CameraRig& rig) {
  if (depth.rank() != 4 || depth.dim(1) != 1)
    throw DimensionError("projective_valid_mask: depth must be [N,1,H,W]");
  const int n = depth.dim(0), h = depth.dim(2), w = depth.dim(3);
  if (pose.size() != std::int64_t(n) * 6)
    throw DimensionError("projective_valid_mask: pose must be [N,6]");
  Tensor src({n, 1, h, w});
  Tensor scratch({n, 1, h, w});
  Tensor mask({n, 1, h, w});
  kernels::Intrinsics intr{rig.fx, rig.fy, rig.cx, rig.cy};
  kernels::projective_warp_forward<float>(src.data(), depth.data(), pose.data(), scratch.data(),
                                          mask.data(), n, 1, h, w, intr);
  return mask;
}

}  // namespace udepth
