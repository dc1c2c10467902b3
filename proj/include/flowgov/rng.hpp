#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace flowgov {

// splitmix64 finalizer; used to derive decorrelated stream seeds and
// counter-based noise without consuming engine state.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = mix64(base);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return h;
}

// Map 64 random bits to [0,1).
inline double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Counter-based uniform in [0,1); pure function of its inputs.
inline double unit_hash(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                        std::uint64_t c = 0) {
  return to_unit(derive_seed(base, a, b, c));
}

// Deterministic RNG built on std::mt19937_64 (the engine's output sequence is
// pinned by the standard). Distributions are hand-rolled: the std::
// distribution adapters are implementation-defined and would break
// bit-for-bit replay across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  double uniform() { return to_unit(eng_()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller without caching; two draws per call keeps the stream layout obvious.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Knuth's product method; fine for the small per-tick means used here.
  int poisson(double mean) {
    if (mean < 0.0) throw std::invalid_argument("poisson: negative mean");
    if (mean == 0.0) return 0;
    const double limit = std::exp(-mean);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  // Geometric-with-mean sampler used by the stochastic controller service
  // model: support {0,1,2,...}, mean = m (success prob 1/(1+m)).
  int geometric_mean(double m) {
    if (m <= 0.0) return 0;
    const double p = 1.0 / (1.0 + m);
    double u = uniform();
    if (u >= 1.0) u = 1.0 - 0x1.0p-53;
    return static_cast<int>(std::floor(std::log1p(-u) / std::log1p(-p)));
  }

  int categorical(const std::vector<double>& probs) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace flowgov
