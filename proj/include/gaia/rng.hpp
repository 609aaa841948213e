#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string_view>
#include <vector>

#include "gaia/common.hpp"

namespace gaia {

// ---------------------------------------------------------------------------
// Counter-based splittable PRNG (the "gaia counter generator").
//
// output(i) = splitmix64_mix(key + i * GOLDEN). The key is derived from the
// seed and a chain of split labels, so any (seed, label...) pair names a
// stream that can be regenerated without replaying prior draws. This is what
// makes checkpoint resume and parallel generation exactly reproducible.
// ---------------------------------------------------------------------------
struct Rng {
  uint64_t key = 0;
  uint64_t ctr = 0;

  static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static Rng from_seed(uint64_t seed) { return Rng{mix(seed + kGolden), 0}; }

  Rng split(uint64_t salt) const { return Rng{mix(key ^ mix(salt + kGolden)), 0}; }

  Rng split(std::string_view label) const {
    // FNV-1a over the label keeps streams stable across builds.
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : label) {
      h ^= c;
      h *= 0x100000001B3ull;
    }
    return split(h);
  }

  uint64_t next_u64() { return mix(key + (ctr++) * kGolden); }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    check(n > 0, "Rng::next_below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Standard normal via Box-Muller (no cached second value).
  double next_normal() {
    double u1 = next_unit();
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Normal(0, std) truncated to [-2 std, 2 std] by rejection.
  double next_trunc_normal(double std_dev) {
    double z = next_normal();
    while (std::abs(z) > 2.0) z = next_normal();
    return z * std_dev;
  }

  template <class T>
  void fill_trunc_normal(Mat<T>& m, double std_dev) {
    for (auto& x : m.v) x = T(next_trunc_normal(std_dev));
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      int j = int(next_below(uint64_t(i) + 1));
      std::swap(p[i], p[j]);
    }
    return p;
  }

  // k distinct values from [0, n), in random order.
  std::vector<int> sample_without_replacement(int n, int k) {
    check(0 <= k && k <= n, "sample_without_replacement: k=", k, " n=", n);
    std::vector<int> p = permutation(n);
    p.resize(size_t(k));
    return p;
  }
};

}  // namespace gaia
