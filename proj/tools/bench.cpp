// Times the OpenMP kernels against the serial reference implementations and
// checks they agree. Run with no arguments; add --threads N to pin the team.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "udepth/kernels.hpp"
#include "udepth/reference.hpp"
#include "udepth/rng.hpp"
#include "udepth/tape.hpp"

using namespace udepth;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, float lo = 0.f, float hi = 1.f) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_f(lo, hi);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

template <typename F>
double time_ms(F&& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double fast_ms, double ref_ms, double err) {
  std::printf("%-18s %9.3f ms   reference %9.3f ms   speedup %5.2fx   max|diff| %.2e\n", name,
              fast_ms, ref_ms, ref_ms / fast_ms, err);
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--threads") == 0 && i + 1 < argc) {
#ifdef _OPENMP
      omp_set_num_threads(std::atoi(argv[i + 1]));
#endif
      ++i;
    } else if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc) {
      reps = std::atoi(argv[i + 1]);
      ++i;
    }
  }
#ifdef _OPENMP
  std::printf("openmp enabled, max threads %d\n", omp_get_max_threads());
#else
  std::printf("built without openmp\n");
#endif

  // conv2d on a mid-pyramid shape
  {
    const Tensor x = random_tensor({2, 32, 64, 128}, 1);
    const Tensor w = random_tensor({32, 32, 3, 3}, 2, -0.1f, 0.1f);
    const Tensor b = random_tensor({32}, 3, -0.1f, 0.1f);
    const auto cs = kernels::make_conv2d_shape(2, 32, 64, 128, 32, 3, 1);
    Tensor y({cs.n, cs.cout, cs.oh, cs.ow});
    const double fast = time_ms(
        [&] { kernels::conv2d_forward<float>(x.data(), w.data(), b.data(), y.data(), cs); }, reps);
    Tensor yref;
    const double slow = time_ms([&] { yref = ref::conv2d_naive(x, w, b, 1); }, 1);
    report("conv2d 32x64x128", fast, slow, max_abs_diff(y, yref));
  }

  // disparity warp at full training resolution
  {
    const Tensor src = random_tensor({2, 3, 256, 512}, 4);
    const Tensor disp = random_tensor({2, 1, 256, 512}, 5, 0.f, 20.f);
    Tensor y({2, 3, 256, 512});
    const double fast = time_ms(
        [&] {
          kernels::disparity_warp_forward<float>(src.data(), disp.data(), y.data(), 2, 3, 256,
                                                 512, +1);
        },
        reps);
    Tensor yref;
    const double slow = time_ms([&] { yref = ref::disparity_warp_naive(src, disp, +1); }, 1);
    report("disparity_warp", fast, slow, max_abs_diff(y, yref));
  }

  // 3x3 box filter (the SSIM workhorse)
  {
    const Tensor x = random_tensor({2, 3, 256, 512}, 6);
    Tensor y({2, 3, 256, 512});
    const double fast =
        time_ms([&] { kernels::box3x3_forward<float>(x.data(), y.data(), 2, 3, 256, 512); }, reps);
    Tensor yref;
    const double slow = time_ms([&] { yref = ref::box3x3_naive(x); }, 1);
    report("box3x3", fast, slow, max_abs_diff(y, yref));
  }

  // projective warp, one sample
  {
    const Tensor src = random_tensor({1, 3, 256, 512}, 7);
    Tensor depth = Tensor::full({1, 1, 256, 512}, 10.f);
    Tensor pose({1, 6}, {0.01f, -0.02f, 0.005f, 0.1f, -0.05f, 0.02f});
    CameraRig rig{400.f, 400.f, 255.5f, 127.5f, 0.5f};
    kernels::Intrinsics K{rig.fx, rig.fy, rig.cx, rig.cy};
    Tensor y({1, 3, 256, 512});
    const double fast = time_ms(
        [&] {
          kernels::projective_warp_forward<float>(src.data(), depth.data(), pose.data(), y.data(),
                                                  nullptr, 1, 3, 256, 512, K);
        },
        reps);
    Pose6 p;
    p.r = {0.01, -0.02, 0.005};
    p.t = {0.1, -0.05, 0.02};
    Tensor yref;
    const double slow = time_ms([&] { yref = ref::projective_warp_naive(src, depth, p, rig); }, 1);
    report("projective_warp", fast, slow, max_abs_diff(y, yref));
  }

  // serial toggle sanity: parallel off must reproduce parallel on bit-exactly
  {
    const Tensor x = random_tensor({2, 16, 64, 128}, 8);
    const Tensor w = random_tensor({16, 16, 3, 3}, 9, -0.1f, 0.1f);
    const Tensor b = random_tensor({16}, 10, -0.1f, 0.1f);
    const auto cs = kernels::make_conv2d_shape(2, 16, 64, 128, 16, 3, 1);
    Tensor y_par({cs.n, cs.cout, cs.oh, cs.ow}), y_ser({cs.n, cs.cout, cs.oh, cs.ow});
    kernels::set_parallel(true);
    kernels::conv2d_forward<float>(x.data(), w.data(), b.data(), y_par.data(), cs);
    kernels::set_parallel(false);
    kernels::conv2d_forward<float>(x.data(), w.data(), b.data(), y_ser.data(), cs);
    kernels::set_parallel(true);
    std::printf("threaded/serial bitwise equal: %s\n",
                max_abs_diff(y_par, y_ser) == 0.0 ? "yes" : "NO");
  }
  return 0;
}
