#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace genlab {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ with hand-rolled distributions. All simulation randomness in
// the library goes through this type so results are identical across
// toolchains and runs for a given seed.
class rng_stream {
 public:
  explicit rng_stream(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  // Independent stream for replicate `index` of a master seed. Used by all
  // parallel drivers so results do not depend on worker count or scheduling.
  static rng_stream for_replicate(std::uint64_t master_seed, std::uint64_t index) {
    std::uint64_t sm = master_seed ^ (0x7db5ecb6d3277a4bULL * (index + 1));
    return rng_stream(splitmix64(sm));
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform on (0,1); never returns 0 or 1, safe under log()
  double uniform01() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  double exponential(double rate) { return -std::log(uniform01()) / rate; }

  // uniform integer in [0, n)
  std::uint64_t uniform_below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection
    std::uint64_t x = next();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // index drawn proportionally to nonnegative weights (linear CDF walk)
  std::size_t discrete(std::span<const double> weights, double total) {
    double u = uniform01() * total;
    double acc = 0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  std::size_t discrete(std::span<const double> weights) {
    double total = 0;
    for (double w : weights) total += w;
    return discrete(weights, total);
  }

  std::uint64_t poisson(double mean) {
    if (mean <= 0) return 0;
    if (mean > 400) {
      // split to keep exp(-mean) in range; exact by superposition
      std::uint64_t half = poisson(mean / 2);
      return half + poisson(mean / 2);
    }
    const double threshold = std::exp(-mean);
    std::uint64_t k = 0;
    double prod = uniform01();
    while (prod > threshold) {
      ++k;
      prod *= uniform01();
    }
    return k;
  }

 private:
  static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
  std::uint64_t s_[4];
};

}  // namespace genlab
