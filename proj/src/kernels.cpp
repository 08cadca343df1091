#include "udepth/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "udepth/error.hpp"
#include "udepth/geometry.hpp"

namespace udepth::kernels {

namespace {

bool g_parallel = true;
double g_div_eps = kDivEps;

template <typename T>
inline T clampv(T v, T lo, T hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

template <typename T>
inline T sigmoid_stable(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

void set_parallel(bool on) { g_parallel = on; }

void set_div_guard(bool on) { g_div_eps = on ? kDivEps : 0.0; }

double div_eps() { return g_div_eps; }

bool parallel_enabled() {
#ifdef _OPENMP
  return g_parallel;
#else
  return false;
#endif
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
void binary_ew(Binary op, const T* a, const T* b, T* y, std::int64_t n) {
  const bool par = parallel_enabled();
  switch (op) {
    case Binary::Add:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
      break;
    case Binary::Sub:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
      break;
    case Binary::Mul:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
      break;
    case Binary::Div: {
      const T eps = T(div_eps());
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] / (b[i] + eps);
      break;
    }
    case Binary::Min:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] <= b[i] ? a[i] : b[i];
      break;
    case Binary::Max:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] >= b[i] ? a[i] : b[i];
      break;
  }
}

template <typename T>
void binary_ew_scalar(Binary op, const T* a, T s, T* y, std::int64_t n) {
  const bool par = parallel_enabled();
  switch (op) {
    case Binary::Add:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + s;
      break;
    case Binary::Sub:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] - s;
      break;
    case Binary::Mul:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] * s;
      break;
    case Binary::Div: {
      const T d = s + T(div_eps());
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] / d;
      break;
    }
    case Binary::Min:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] <= s ? a[i] : s;
      break;
    case Binary::Max:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] >= s ? a[i] : s;
      break;
  }
}

template <typename T>
void unary_ew(Unary op, const T* x, T* y, std::int64_t n) {
  const bool par = parallel_enabled();
  switch (op) {
    case Unary::Abs:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = std::abs(x[i]);
      break;
    case Unary::Exp:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
      break;
    case Unary::Sqrt: {
      const T eps = T(div_eps());
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = std::sqrt(x[i] + eps);
      break;
    }
    case Unary::Neg:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = -x[i];
      break;
    case Unary::Relu:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Unary::Sigmoid:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) y[i] = sigmoid_stable(x[i]);
      break;
  }
}

template <typename T>
void pow_ew(const T* x, T e, T* y, std::int64_t n) {
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t i = 0; i < n; ++i) y[i] = std::pow(x[i], e);
}

template <typename T>
void clamp_ew(const T* x, T lo, T hi, T* y, std::int64_t n) {
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t i = 0; i < n; ++i) y[i] = clampv(x[i], lo, hi);
}

void binary_ew_backward(Binary op, const float* a, const float* b, const float* y,
                        const float* gy, float* ga, float* gb, std::int64_t n) {
  (void)y;
  const bool par = parallel_enabled();
  switch (op) {
    case Binary::Add:
      if (ga) {
#pragma omp parallel for if (par)
        for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i];
      }
      if (gb) {
#pragma omp parallel for if (par)
        for (std::int64_t i = 0; i < n; ++i) gb[i] += gy[i];
      }
      break;
    case Binary::Sub:
      if (ga) {
#pragma omp parallel for if (par)
        for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i];
      }
      if (gb) {
#pragma omp parallel for if (par)
        for (std::int64_t i = 0; i < n; ++i) gb[i] -= gy[i];
      }
      break;
    case Binary::Mul:
      if (ga) {
#pragma omp parallel for if (par)
        for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i] * b[i];
      }
      if (gb) {
#pragma omp parallel for if (par)
        for (std::int64_t i = 0; i < n; ++i) gb[i] += gy[i] * a[i];
      }
      break;
    case Binary::Div: {
      const float eps = float(div_eps());
      if (ga) {
#pragma omp parallel for if (par)
        for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i] / (b[i] + eps);
      }
      if (gb) {
#pragma omp parallel for if (par)
        for (std::int64_t i = 0; i < n; ++i) {
          const float d = b[i] + eps;
          gb[i] -= gy[i] * a[i] / (d * d);
        }
      }
      break;
    }
    case Binary::Min:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) {
        if (a[i] <= b[i]) {
          if (ga) ga[i] += gy[i];
        } else if (gb) {
          gb[i] += gy[i];
        }
      }
      break;
    case Binary::Max:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) {
        if (a[i] >= b[i]) {
          if (ga) ga[i] += gy[i];
        } else if (gb) {
          gb[i] += gy[i];
        }
      }
      break;
  }
}

void binary_ew_scalar_backward(Binary op, const float* a, float s, const float* y,
                               const float* gy, float* ga, std::int64_t n) {
  (void)y;
  if (!ga) return;
  const bool par = parallel_enabled();
  switch (op) {
    case Binary::Add:
    case Binary::Sub:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i];
      break;
    case Binary::Mul:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i] * s;
      break;
    case Binary::Div: {
      const float d = s + float(div_eps());
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i] / d;
      break;
    }
    case Binary::Min:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i)
        if (a[i] <= s) ga[i] += gy[i];
      break;
    case Binary::Max:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i)
        if (a[i] >= s) ga[i] += gy[i];
      break;
  }
}

void unary_ew_backward(Unary op, const float* x, const float* y, const float* gy, float* gx,
                       std::int64_t n) {
  if (!gx) return;
  const bool par = parallel_enabled();
  switch (op) {
    case Unary::Abs:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i)
        gx[i] += x[i] > 0.f ? gy[i] : (x[i] < 0.f ? -gy[i] : 0.f);
      break;
    case Unary::Exp:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * y[i];
      break;
    case Unary::Sqrt:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * 0.5f / y[i];
      break;
    case Unary::Neg:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) gx[i] -= gy[i];
      break;
    case Unary::Relu:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i)
        if (x[i] > 0.f) gx[i] += gy[i];
      break;
    case Unary::Sigmoid:
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * y[i] * (1.f - y[i]);
      break;
  }
}

void pow_ew_backward(const float* x, float e, const float* gy, float* gx, std::int64_t n) {
  if (!gx) return;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * e * std::pow(x[i], e - 1.f);
}

void clamp_ew_backward(const float* x, float lo, float hi, const float* gy, float* gx,
                       std::int64_t n) {
  if (!gx) return;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t i = 0; i < n; ++i)
    if (x[i] > lo && x[i] < hi) gx[i] += gy[i];
}

// ---------------------------------------------------------------------------
// conv2d, "same" padding for odd kernels: pad = (k-1)/2, out = ceil(in/stride)

Conv2dShape make_conv2dShape_impl(int n, int cin, int h, int w, int cout, int k, int stride) {
  Conv2dShape s;
  s.n = n;
  s.cin = cin;
  s.h = h;
  s.w = w;
  s.cout = cout;
  s.k = k;
  s.stride = stride;
  s.pad = (k - 1) / 2;
  s.oh = (h + stride - 1) / stride;
  s.ow = (w + stride - 1) / stride;
  return s;
}

Conv2dShape make_conv2d_shape(int n, int cin, int h, int w, int cout, int k, int stride) {
  return make_conv2dShape_impl(n, cin, h, w, cout, k, stride);
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, const Conv2dShape& s) {
  const std::int64_t total = std::int64_t(s.n) * s.cout * s.oh * s.ow;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t idx = 0; idx < total; ++idx) {
    const int ow = static_cast<int>(idx % s.ow);
    const int oh = static_cast<int>((idx / s.ow) % s.oh);
    const int co = static_cast<int>((idx / (std::int64_t(s.ow) * s.oh)) % s.cout);
    const int n = static_cast<int>(idx / (std::int64_t(s.ow) * s.oh * s.cout));
    T acc = b ? b[co] : T(0);
    const int ih0 = oh * s.stride - s.pad;
    const int iw0 = ow * s.stride - s.pad;
    for (int ci = 0; ci < s.cin; ++ci) {
      const T* xp = x + (std::int64_t(n) * s.cin + ci) * s.h * s.w;
      const T* wp = w + ((std::int64_t(co) * s.cin + ci) * s.k) * s.k;
      for (int kh = 0; kh < s.k; ++kh) {
        const int ih = ih0 + kh;
        if (ih < 0 || ih >= s.h) continue;
        for (int kw = 0; kw < s.k; ++kw) {
          const int iw = iw0 + kw;
          if (iw < 0 || iw >= s.w) continue;
          acc += xp[std::int64_t(ih) * s.w + iw] * wp[kh * s.k + kw];
        }
      }
    }
    y[idx] = acc;
  }
}

void conv2d_backward_input(const float* w, const float* gy, float* gx, const Conv2dShape& s) {
  const std::int64_t total = std::int64_t(s.n) * s.cin * s.h * s.w;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t idx = 0; idx < total; ++idx) {
    const int iw = static_cast<int>(idx % s.w);
    const int ih = static_cast<int>((idx / s.w) % s.h);
    const int ci = static_cast<int>((idx / (std::int64_t(s.w) * s.h)) % s.cin);
    const int n = static_cast<int>(idx / (std::int64_t(s.w) * s.h * s.cin));
    float acc = 0.f;
    for (int co = 0; co < s.cout; ++co) {
      const float* gp = gy + (std::int64_t(n) * s.cout + co) * s.oh * s.ow;
      const float* wp = w + ((std::int64_t(co) * s.cin + ci) * s.k) * s.k;
      for (int kh = 0; kh < s.k; ++kh) {
        const int t = ih + s.pad - kh;
        if (t < 0 || t % s.stride != 0) continue;
        const int oh = t / s.stride;
        if (oh >= s.oh) continue;
        for (int kw = 0; kw < s.k; ++kw) {
          const int u = iw + s.pad - kw;
          if (u < 0 || u % s.stride != 0) continue;
          const int ow = u / s.stride;
          if (ow >= s.ow) continue;
          acc += gp[std::int64_t(oh) * s.ow + ow] * wp[kh * s.k + kw];
        }
      }
    }
    gx[idx] += acc;
  }
}

void conv2d_backward_weight(const float* x, const float* gy, float* gw, const Conv2dShape& s) {
  const std::int64_t total = std::int64_t(s.cout) * s.cin * s.k * s.k;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t idx = 0; idx < total; ++idx) {
    const int kw = static_cast<int>(idx % s.k);
    const int kh = static_cast<int>((idx / s.k) % s.k);
    const int ci = static_cast<int>((idx / (s.k * s.k)) % s.cin);
    const int co = static_cast<int>(idx / (std::int64_t(s.k) * s.k * s.cin));
    float acc = 0.f;
    for (int n = 0; n < s.n; ++n) {
      const float* xp = x + (std::int64_t(n) * s.cin + ci) * s.h * s.w;
      const float* gp = gy + (std::int64_t(n) * s.cout + co) * s.oh * s.ow;
      for (int oh = 0; oh < s.oh; ++oh) {
        const int ih = oh * s.stride - s.pad + kh;
        if (ih < 0 || ih >= s.h) continue;
        for (int ow = 0; ow < s.ow; ++ow) {
          const int iw = ow * s.stride - s.pad + kw;
          if (iw < 0 || iw >= s.w) continue;
          acc += xp[std::int64_t(ih) * s.w + iw] * gp[std::int64_t(oh) * s.ow + ow];
        }
      }
    }
    gw[idx] += acc;
  }
}

void conv2d_backward_bias(const float* gy, float* gb, const Conv2dShape& s) {
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (int co = 0; co < s.cout; ++co) {
    float acc = 0.f;
    for (int n = 0; n < s.n; ++n) {
      const float* gp = gy + (std::int64_t(n) * s.cout + co) * s.oh * s.ow;
      for (std::int64_t i = 0; i < std::int64_t(s.oh) * s.ow; ++i) acc += gp[i];
    }
    gb[co] += acc;
  }
}

// ---------------------------------------------------------------------------
// fully connected: y[n,g] = b[g] + sum_f x[n,f] w[f,g]

template <typename T>
void fc_forward(const T* x, const T* w, const T* b, T* y, int n, int f, int g) {
  const std::int64_t total = std::int64_t(n) * g;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t idx = 0; idx < total; ++idx) {
    const int col = static_cast<int>(idx % g);
    const int row = static_cast<int>(idx / g);
    T acc = b ? b[col] : T(0);
    const T* xp = x + std::int64_t(row) * f;
    for (int i = 0; i < f; ++i) acc += xp[i] * w[std::int64_t(i) * g + col];
    y[idx] = acc;
  }
}

void fc_backward(const float* x, const float* w, const float* gy, float* gx, float* gw, float* gb,
                 int n, int f, int g) {
  const bool par = parallel_enabled();
  if (gx) {
#pragma omp parallel for if (par)
    for (std::int64_t idx = 0; idx < std::int64_t(n) * f; ++idx) {
      const int i = static_cast<int>(idx % f);
      const int row = static_cast<int>(idx / f);
      float acc = 0.f;
      const float* gp = gy + std::int64_t(row) * g;
      const float* wp = w + std::int64_t(i) * g;
      for (int col = 0; col < g; ++col) acc += gp[col] * wp[col];
      gx[idx] += acc;
    }
  }
  if (gw) {
#pragma omp parallel for if (par)
    for (std::int64_t idx = 0; idx < std::int64_t(f) * g; ++idx) {
      const int col = static_cast<int>(idx % g);
      const int i = static_cast<int>(idx / g);
      float acc = 0.f;
      for (int row = 0; row < n; ++row)
        acc += x[std::int64_t(row) * f + i] * gy[std::int64_t(row) * g + col];
      gw[idx] += acc;
    }
  }
  if (gb) {
#pragma omp parallel for if (par)
    for (int col = 0; col < g; ++col) {
      float acc = 0.f;
      for (int row = 0; row < n; ++row) acc += gy[std::int64_t(row) * g + col];
      gb[col] += acc;
    }
  }
}

// ---------------------------------------------------------------------------
// resampling

template <typename T>
void upsample2x_forward(const T* x, T* y, int n, int c, int h, int w) {
  const int H = 2 * h, W = 2 * w;
  const std::int64_t planes = std::int64_t(n) * c;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* xp = x + p * h * w;
    T* yp = y + p * std::int64_t(H) * W;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) yp[std::int64_t(i) * W + j] = xp[std::int64_t(i / 2) * w + j / 2];
  }
}

void upsample2x_backward(const float* gy, float* gx, int n, int c, int h, int w) {
  const int W = 2 * w;
  const std::int64_t planes = std::int64_t(n) * c;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* gp = gy + p * std::int64_t(2 * h) * W;
    float* xp = gx + p * h * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        float acc = 0.f;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) acc += gp[std::int64_t(2 * i + di) * W + 2 * j + dj];
        xp[std::int64_t(i) * w + j] += acc;
      }
  }
}

template <typename T>
void downsample2x_forward(const T* x, T* y, int n, int c, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  const std::int64_t planes = std::int64_t(n) * c;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* xp = x + p * std::int64_t(h) * w;
    T* yp = y + p * std::int64_t(oh) * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const T s = xp[std::int64_t(2 * i) * w + 2 * j] + xp[std::int64_t(2 * i) * w + 2 * j + 1] +
                    xp[std::int64_t(2 * i + 1) * w + 2 * j] +
                    xp[std::int64_t(2 * i + 1) * w + 2 * j + 1];
        yp[std::int64_t(i) * ow + j] = s * T(0.25);
      }
  }
}

void downsample2x_backward(const float* gy, float* gx, int n, int c, int h, int w) {
  const int ow = w / 2;
  const std::int64_t planes = std::int64_t(n) * c;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* gp = gy + p * std::int64_t(h / 2) * ow;
    float* xp = gx + p * std::int64_t(h) * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        xp[std::int64_t(i) * w + j] += 0.25f * gp[std::int64_t(i / 2) * ow + j / 2];
  }
}

// ---------------------------------------------------------------------------
// reductions (fixed accumulation order: row-major sweep)

template <typename T>
void reduce_mean_forward(Reduce kind, const T* x, T* y, int n, int c, int h, int w) {
  const std::int64_t hw = std::int64_t(h) * w;
  const bool par = parallel_enabled();
  switch (kind) {
    case Reduce::All: {
      T acc = T(0);
      const std::int64_t total = std::int64_t(n) * c * hw;
      for (std::int64_t i = 0; i < total; ++i) acc += x[i];
      y[0] = acc / T(total);
      break;
    }
    case Reduce::Spatial: {
#pragma omp parallel for if (par)
      for (std::int64_t p = 0; p < std::int64_t(n) * c; ++p) {
        T acc = T(0);
        const T* xp = x + p * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += xp[i];
        y[p] = acc / T(hw);
      }
      break;
    }
    case Reduce::Channel: {
#pragma omp parallel for if (par)
      for (std::int64_t idx = 0; idx < std::int64_t(n) * hw; ++idx) {
        const std::int64_t pix = idx % hw;
        const std::int64_t b = idx / hw;
        T acc = T(0);
        for (int ch = 0; ch < c; ++ch) acc += x[(b * c + ch) * hw + pix];
        y[idx] = acc / T(c);
      }
      break;
    }
  }
}

void reduce_mean_backward(Reduce kind, const float* gy, float* gx, int n, int c, int h, int w) {
  const std::int64_t hw = std::int64_t(h) * w;
  const std::int64_t total = std::int64_t(n) * c * hw;
  const bool par = parallel_enabled();
  switch (kind) {
    case Reduce::All: {
      const float g = gy[0] / static_cast<float>(total);
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < total; ++i) gx[i] += g;
      break;
    }
    case Reduce::Spatial: {
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < total; ++i) {
        const std::int64_t p = i / hw;
        gx[i] += gy[p] / static_cast<float>(hw);
      }
      break;
    }
    case Reduce::Channel: {
#pragma omp parallel for if (par)
      for (std::int64_t i = 0; i < total; ++i) {
        const std::int64_t pix = i % hw;
        const std::int64_t b = i / (hw * c);
        gx[i] += gy[b * hw + pix] / static_cast<float>(c);
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// 3x3 box mean, replicate padding

template <typename T>
void box3x3_forward(const T* x, T* y, int n, int c, int h, int w) {
  const std::int64_t planes = std::int64_t(n) * c;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* xp = x + p * std::int64_t(h) * w;
    T* yp = y + p * std::int64_t(h) * w;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        T acc = T(0);
        for (int di = -1; di <= 1; ++di) {
          const int ii = clampv(i + di, 0, h - 1);
          for (int dj = -1; dj <= 1; ++dj) {
            const int jj = clampv(j + dj, 0, w - 1);
            acc += xp[std::int64_t(ii) * w + jj];
          }
        }
        yp[std::int64_t(i) * w + j] = acc / T(9);
      }
    }
  }
}

namespace {
// number of taps of the replicate-padded window at k that land on index i
inline int box_tap_count(int k, int i, int n) {
  int cnt = 0;
  for (int d = -1; d <= 1; ++d) {
    int p = k + d;
    p = p < 0 ? 0 : (p >= n ? n - 1 : p);
    if (p == i) ++cnt;
  }
  return cnt;
}
}  // namespace

void box3x3_backward(const float* gy, float* gx, int n, int c, int h, int w) {
  const std::int64_t planes = std::int64_t(n) * c;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* gp = gy + p * std::int64_t(h) * w;
    float* xp = gx + p * std::int64_t(h) * w;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        float acc = 0.f;
        for (int k = std::max(0, i - 1); k <= std::min(h - 1, i + 1); ++k) {
          const int wy = box_tap_count(k, i, h);
          if (!wy) continue;
          for (int l = std::max(0, j - 1); l <= std::min(w - 1, j + 1); ++l) {
            const int wx = box_tap_count(l, j, w);
            if (!wx) continue;
            acc += static_cast<float>(wy * wx) * gp[std::int64_t(k) * w + l];
          }
        }
        xp[std::int64_t(i) * w + j] += acc / 9.f;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// forward-difference image gradients

template <typename T>
void image_grad_forward(bool horizontal, const T* x, T* y, int n, int c, int h, int w) {
  const std::int64_t planes = std::int64_t(n) * c;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* xp = x + p * std::int64_t(h) * w;
    T* yp = y + p * std::int64_t(h) * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const std::int64_t at = std::int64_t(i) * w + j;
        if (horizontal)
          yp[at] = j < w - 1 ? xp[at + 1] - xp[at] : T(0);
        else
          yp[at] = i < h - 1 ? xp[at + w] - xp[at] : T(0);
      }
  }
}

void image_grad_backward(bool horizontal, const float* gy, float* gx, int n, int c, int h, int w) {
  const std::int64_t planes = std::int64_t(n) * c;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* gp = gy + p * std::int64_t(h) * w;
    float* xp = gx + p * std::int64_t(h) * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const std::int64_t at = std::int64_t(i) * w + j;
        float acc = 0.f;
        if (horizontal) {
          if (j > 0) acc += gp[at - 1];
          if (j < w - 1) acc -= gp[at];
        } else {
          if (i > 0) acc += gp[at - w];
          if (i < h - 1) acc -= gp[at];
        }
        xp[at] += acc;
      }
  }
}

// ---------------------------------------------------------------------------
// horizontal disparity warp

template <typename T>
void disparity_warp_forward(const T* src, const T* disp, T* y, int n, int c, int h, int w,
                            int dir) {
  const std::int64_t pix = std::int64_t(h) * w;
  const bool par = parallel_enabled();
#pragma omp parallel for if (par)
  for (std::int64_t idx = 0; idx < std::int64_t(n) * pix; ++idx) {
    const int b = static_cast<int>(idx / pix);
    const int i = static_cast<int>((idx % pix) / w);
    const int j = static_cast<int>(idx % w);
    const double d = static_cast<double>(disp[std::int64_t(b) * pix + std::int64_t(i) * w + j]);
    double u = static_cast<double>(j) + dir * d;
    u = u < 0.0 ? 0.0 : (u > double(w - 1) ? double(w - 1) : u);
    // integer taps are clamped so a non-finite coordinate propagates NaN
    // through the weights instead of indexing out of bounds
    const int x0 = clampv(static_cast<int>(std::floor(u)), 0, w - 1);
    const int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
    const double f = u - x0;
    for (int ch = 0; ch < c; ++ch) {
      const T* sp = src + (std::int64_t(b) * c + ch) * pix + std::int64_t(i) * w;
      y[(std::int64_t(b) * c + ch) * pix + std::int64_t(i) * w + j] =
          static_cast<T>((1.0 - f) * static_cast<double>(sp[x0]) + f * static_cast<double>(sp[x1]));
    }
  }
}

void disparity_warp_backward(const float* src, const float* disp, const float* gy, float* gsrc,
                             float* gdisp, int n, int c, int h, int w, int dir) {
  // scatter into gsrc: serial to keep accumulation order fixed
  const std::int64_t pix = std::int64_t(h) * w;
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const std::int64_t at = std::int64_t(b) * pix + std::int64_t(i) * w + j;
        const double d = static_cast<double>(disp[at]);
        double u = static_cast<double>(j) + dir * d;
        const bool interior = u > 0.0 && u < double(w - 1);
        u = u < 0.0 ? 0.0 : (u > double(w - 1) ? double(w - 1) : u);
        const int x0 = clampv(static_cast<int>(std::floor(u)), 0, w - 1);
        const int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
        const float f = static_cast<float>(u - x0);
        float gu = 0.f;
        for (int ch = 0; ch < c; ++ch) {
          const std::int64_t row = (std::int64_t(b) * c + ch) * pix + std::int64_t(i) * w;
          const float g = gy[row + j];
          if (gsrc) {
            gsrc[row + x0] += g * (1.f - f);
            gsrc[row + x1] += g * f;
          }
          gu += g * (src[row + x1] - src[row + x0]);
        }
        if (gdisp && interior) gdisp[at] += static_cast<float>(dir) * gu;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// projective warp

namespace {

struct WarpGeom {
  double u, v;       // projected source coordinates
  double q[3];       // point in the source camera frame
  double m[3];       // d q / d depth = R * ray
  bool in_front;
};

inline WarpGeom project_pixel(int j, int i, double depth, const double* R, const double* t,
                              const Intrinsics& K) {
  WarpGeom g;
  const double nx = (double(j) - K.cx) / K.fx;
  const double ny = (double(i) - K.cy) / K.fy;
  for (int r = 0; r < 3; ++r) g.m[r] = R[r * 3 + 0] * nx + R[r * 3 + 1] * ny + R[r * 3 + 2];
  for (int r = 0; r < 3; ++r) g.q[r] = depth * g.m[r] + t[r];
  g.in_front = g.q[2] > 1e-6;
  const double qz = g.in_front ? g.q[2] : 1e-6;
  g.u = K.fx * g.q[0] / qz + K.cx;
  g.v = K.fy * g.q[1] / qz + K.cy;
  return g;
}

}  // namespace

template <typename T>
void projective_warp_forward(const T* src, const T* depth, const T* pose, T* y, float* mask,
                             int n, int c, int h, int w, const Intrinsics& K) {
  const std::int64_t pix = std::int64_t(h) * w;
  for (int b = 0; b < n; ++b) {
    double R[9], t[3];
    const T* p = pose + std::int64_t(b) * 6;
    rotation_zyx(double(p[0]), double(p[1]), double(p[2]), R);
    for (int r = 0; r < 3; ++r) t[r] = double(p[3 + r]);
    const bool par = parallel_enabled();
#pragma omp parallel for if (par)
    for (std::int64_t pi = 0; pi < pix; ++pi) {
      const int i = static_cast<int>(pi / w);
      const int j = static_cast<int>(pi % w);
      const double D = static_cast<double>(depth[std::int64_t(b) * pix + pi]);
      const WarpGeom g = project_pixel(j, i, D, R, t, K);
      const bool inside =
          g.in_front && g.u >= 0.0 && g.u <= double(w - 1) && g.v >= 0.0 && g.v <= double(h - 1);
      if (mask) mask[std::int64_t(b) * pix + pi] = inside ? 1.f : 0.f;
      double u = clampv(g.u, 0.0, double(w - 1));
      double v = clampv(g.v, 0.0, double(h - 1));
      const int x0 = clampv(static_cast<int>(std::floor(u)), 0, w - 1);
      const int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
      const int y0 = clampv(static_cast<int>(std::floor(v)), 0, h - 1);
      const int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
      const double fu = u - x0, fv = v - y0;
      for (int ch = 0; ch < c; ++ch) {
        const T* sp = src + (std::int64_t(b) * c + ch) * pix;
        const double v00 = static_cast<double>(sp[std::int64_t(y0) * w + x0]);
        const double v01 = static_cast<double>(sp[std::int64_t(y0) * w + x1]);
        const double v10 = static_cast<double>(sp[std::int64_t(y1) * w + x0]);
        const double v11 = static_cast<double>(sp[std::int64_t(y1) * w + x1]);
        y[(std::int64_t(b) * c + ch) * pix + pi] = static_cast<T>(
            (1.0 - fv) * ((1.0 - fu) * v00 + fu * v01) + fv * ((1.0 - fu) * v10 + fu * v11));
      }
    }
  }
}

void projective_warp_backward(const float* src, const float* depth, const float* pose,
                              const float* gy, float* gsrc, float* gdepth, float* gpose,
                              int n, int c, int h, int w, const Intrinsics& K) {
  const std::int64_t pix = std::int64_t(h) * w;
  for (int b = 0; b < n; ++b) {
    double R[9], dR[3][9], t[3];
    const float* p = pose + std::int64_t(b) * 6;
    rotation_zyx(double(p[0]), double(p[1]), double(p[2]), R);
    for (int k = 0; k < 3; ++k) rotation_zyx_deriv(double(p[0]), double(p[1]), double(p[2]), k, dR[k]);
    for (int r = 0; r < 3; ++r) t[r] = double(p[3 + r]);
    double gp[6] = {0, 0, 0, 0, 0, 0};
    for (std::int64_t pi = 0; pi < pix; ++pi) {  // serial: scatter + pose reduction
      const int i = static_cast<int>(pi / w);
      const int j = static_cast<int>(pi % w);
      const double D = static_cast<double>(depth[std::int64_t(b) * pix + pi]);
      const WarpGeom g = project_pixel(j, i, D, R, t, K);
      const bool uin = g.u > 0.0 && g.u < double(w - 1);
      const bool vin = g.v > 0.0 && g.v < double(h - 1);
      const double u = clampv(g.u, 0.0, double(w - 1));
      const double v = clampv(g.v, 0.0, double(h - 1));
      const int x0 = clampv(static_cast<int>(std::floor(u)), 0, w - 1);
      const int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
      const int y0 = clampv(static_cast<int>(std::floor(v)), 0, h - 1);
      const int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
      const double fu = u - x0, fv = v - y0;
      double gu = 0.0, gv = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const std::int64_t base = (std::int64_t(b) * c + ch) * pix;
        const float gg = gy[base + pi];
        const float v00 = src[base + std::int64_t(y0) * w + x0];
        const float v01 = src[base + std::int64_t(y0) * w + x1];
        const float v10 = src[base + std::int64_t(y1) * w + x0];
        const float v11 = src[base + std::int64_t(y1) * w + x1];
        if (gsrc) {
          gsrc[base + std::int64_t(y0) * w + x0] += gg * static_cast<float>((1 - fv) * (1 - fu));
          gsrc[base + std::int64_t(y0) * w + x1] += gg * static_cast<float>((1 - fv) * fu);
          gsrc[base + std::int64_t(y1) * w + x0] += gg * static_cast<float>(fv * (1 - fu));
          gsrc[base + std::int64_t(y1) * w + x1] += gg * static_cast<float>(fv * fu);
        }
        gu += gg * ((1 - fv) * (v01 - v00) + fv * (v11 - v10));
        gv += gg * ((1 - fu) * (v10 - v00) + fu * (v11 - v01));
      }
      if (!uin) gu = 0.0;
      if (!vin) gv = 0.0;
      if (gu == 0.0 && gv == 0.0) continue;
      // chain through projection; qz derivative vanishes when the guard is active
      const double qz = g.in_front ? g.q[2] : 1e-6;
      const double zpass = g.in_front ? 1.0 : 0.0;
      double gq[3];
      gq[0] = gu * K.fx / qz;
      gq[1] = gv * K.fy / qz;
      gq[2] = -(gu * K.fx * g.q[0] + gv * K.fy * g.q[1]) / (qz * qz) * zpass;
      if (gdepth)
        gdepth[std::int64_t(b) * pix + pi] +=
            static_cast<float>(gq[0] * g.m[0] + gq[1] * g.m[1] + gq[2] * g.m[2]);
      if (gpose) {
        const double nx = (double(j) - K.cx) / K.fx;
        const double ny = (double(i) - K.cy) / K.fy;
        for (int k = 0; k < 3; ++k) {
          double dq[3];
          for (int r = 0; r < 3; ++r)
            dq[r] = D * (dR[k][r * 3 + 0] * nx + dR[k][r * 3 + 1] * ny + dR[k][r * 3 + 2]);
          gp[k] += gq[0] * dq[0] + gq[1] * dq[1] + gq[2] * dq[2];
        }
        for (int r = 0; r < 3; ++r) gp[3 + r] += gq[r];
      }
    }
    if (gpose)
      for (int k = 0; k < 6; ++k) gpose[std::int64_t(b) * 6 + k] += static_cast<float>(gp[k]);
  }
}

void cast_to_float(const double* x, float* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = static_cast<float>(x[i]);
}

// explicit instantiations: float is the production path, double the shadow
#define UDEPTH_INSTANTIATE(T)                                                                     \
  template void binary_ew<T>(Binary, const T*, const T*, T*, std::int64_t);                       \
  template void binary_ew_scalar<T>(Binary, const T*, T, T*, std::int64_t);                       \
  template void unary_ew<T>(Unary, const T*, T*, std::int64_t);                                   \
  template void pow_ew<T>(const T*, T, T*, std::int64_t);                                         \
  template void clamp_ew<T>(const T*, T, T, T*, std::int64_t);                                    \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*, const Conv2dShape&);          \
  template void fc_forward<T>(const T*, const T*, const T*, T*, int, int, int);                   \
  template void upsample2x_forward<T>(const T*, T*, int, int, int, int);                          \
  template void downsample2x_forward<T>(const T*, T*, int, int, int, int);                        \
  template void reduce_mean_forward<T>(Reduce, const T*, T*, int, int, int, int);                 \
  template void box3x3_forward<T>(const T*, T*, int, int, int, int);                              \
  template void image_grad_forward<T>(bool, const T*, T*, int, int, int, int);                    \
  template void disparity_warp_forward<T>(const T*, const T*, T*, int, int, int, int, int);       \
  template void projective_warp_forward<T>(const T*, const T*, const T*, T*, float*, int, int,    \
                                           int, int, const Intrinsics&);

UDEPTH_INSTANTIATE(float)
UDEPTH_INSTANTIATE(double)
#undef UDEPTH_INSTANTIATE

}  // namespace udepth::kernels
