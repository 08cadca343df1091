#include "udepth/reference.hpp"

#include <cmath>

#include "udepth/error.hpp"

namespace udepth::ref {

Tensor conv2d_naive(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride) {
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int O = weight.dim(0), K = weight.dim(2);
  const int pad = (K - 1) / 2;
  const int OH = (H + stride - 1) / stride;
  const int OW = (W + stride - 1) / stride;
  Tensor out({N, O, OH, OW});
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      for (int oh = 0; oh < OH; ++oh) {
        for (int ow = 0; ow < OW; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int c = 0; c < C; ++c)
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw) {
                const int ih = oh * stride - pad + kh;
                const int iw = ow * stride - pad + kw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += double(input.at4(n, c, ih, iw)) * double(weight.at4(o, c, kh, kw));
              }
          out[out.index4(n, o, oh, ow)] = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

Tensor matmul_naive(const Tensor& a, const Tensor& b) {
  const int N = a.dim(0), F = a.dim(1), G = b.dim(1);
  Tensor out({N, G});
  for (int n = 0; n < N; ++n)
    for (int g = 0; g < G; ++g) {
      double acc = 0.0;
      for (int f = 0; f < F; ++f) acc += double(a[n * F + f]) * double(b[f * G + g]);
      out[n * G + g] = static_cast<float>(acc);
    }
  return out;
}

double bilinear_at(const float* plane, int h, int w, double u, double v) {
  if (u < 0) u = 0;
  if (u > w - 1) u = w - 1;
  if (v < 0) v = 0;
  if (v > h - 1) v = h - 1;
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fu = u - x0, fv = v - y0;
  const double top = (1.0 - fu) * plane[y0 * w + x0] + fu * plane[y0 * w + x1];
  const double bot = (1.0 - fu) * plane[y1 * w + x0] + fu * plane[y1 * w + x1];
  return (1.0 - fv) * top + fv * bot;
}

Tensor disparity_warp_naive(const Tensor& source, const Tensor& disparity, int direction) {
  const int N = source.dim(0), C = source.dim(1), H = source.dim(2), W = source.dim(3);
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        const float* plane = source.data() + source.index4(n, c, 0, 0);
        for (int x = 0; x < W; ++x) {
          const double u = x + double(direction) * disparity.at4(n, 0, y, x);
          out[out.index4(n, c, y, x)] =
              static_cast<float>(bilinear_at(plane, H, W, u, double(y)));
        }
      }
  return out;
}

Tensor projective_warp_naive(const Tensor& source, const Tensor& depth, const Pose6& pose,
                             const CameraRig& rig) {
  const int N = source.dim(0), C = source.dim(1), H = source.dim(2), W = source.dim(3);
  if (N != 1) throw ContractError("projective_warp_naive handles one sample at a time");
  const SE3 M = pose_to_matrix(pose);
  Tensor out({N, C, H, W});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double D = depth.at4(0, 0, y, x);
      const std::array<double, 3> p = {D * (x - double(rig.cx)) / rig.fx,
                                       D * (y - double(rig.cy)) / rig.fy, D};
      const auto q = M.apply(p);
      const double qz = std::max(q[2], 1e-6);
      const double u = rig.fx * q[0] / qz + rig.cx;
      const double v = rig.fy * q[1] / qz + rig.cy;
      for (int c = 0; c < C; ++c) {
        const float* plane = source.data() + source.index4(0, c, 0, 0);
        out[out.index4(0, c, y, x)] = static_cast<float>(bilinear_at(plane, H, W, u, v));
      }
    }
  }
  return out;
}

Tensor box3x3_naive(const Tensor& x) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({N, C, H, W});
  auto cl = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          double acc = 0.0;
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
              acc += x.at4(n, c, cl(i + di, H - 1), cl(j + dj, W - 1));
          out[out.index4(n, c, i, j)] = static_cast<float>(acc / 9.0);
        }
  return out;
}

}  // namespace udepth::ref
