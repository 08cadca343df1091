#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace udepth {

// mt19937 output is bit-exact per the standard; std distributions are not,
// so all scaling from raw draws is done by hand to keep runs reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : eng_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

  std::uint32_t next_u32() { return eng_(); }

  // uniform in [lo, hi)
  double uniform(double lo = 0.0, double hi = 1.0) {
    const double u = (static_cast<double>(eng_()) + 0.5) * (1.0 / 4294967296.0);
    return lo + u * (hi - lo);
  }

  float uniform_f(float lo = 0.f, float hi = 1.f) {
    return static_cast<float>(uniform(lo, hi));
  }

  bool bernoulli(double p) { return uniform() < p; }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(uniform(0.0, double(hi - lo) + 1.0));
  }

  // Box-Muller, one value per call (the spare is kept).
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  // Resamples until within two standard deviations.
  double truncated_normal(double stddev) {
    for (;;) {
      const double x = normal(0.0, stddev);
      if (std::abs(x) <= 2.0 * stddev) return x;
    }
  }

 private:
  std::mt19937 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64; used to derive independent stream seeds from (seed, index)
// so the data pipeline is stateless and checkpoint resume is exact.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace udepth
