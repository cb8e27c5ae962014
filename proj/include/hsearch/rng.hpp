#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hs {

// Stateless 64-bit mixer, used to derive independent stream seeds from a base
// seed plus a stream tag. splitmix64 finalizer.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic RNG. Distributions are implemented here rather than taken
// from <random> because the library's distribution algorithms are not pinned
// by the standard; the raw mt19937_64 stream is.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n). Rejection sampling, no modulo bias.
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return v % n;
  }

  // Standard normal via the polar method. No state is cached; the second
  // root of each pair is discarded to keep the stream position obvious.
  double normal() {
    for (;;) {
      double u = 2.0 * next_double() - 1.0;
      double v = 2.0 * next_double() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // Marsaglia-Tsang gamma; the alpha < 1 case is boosted through alpha + 1.
  double gamma(double alpha) {
    if (alpha < 1.0) {
      double u = next_double();
      while (u <= 0.0) u = next_double();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = next_double();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::vector<double> dirichlet(const std::vector<double>& alpha) {
    std::vector<double> g(alpha.size());
    double sum = 0.0;
    for (size_t i = 0; i < alpha.size(); ++i) {
      g[i] = gamma(alpha[i]);
      sum += g[i];
    }
    if (sum <= 0.0) {
      // All-zero draw is possible only for degenerate alphas; fall back to uniform.
      for (auto& v : g) v = 1.0 / static_cast<double>(g.size());
      return g;
    }
    for (auto& v : g) v /= sum;
    return g;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), in increasing order.
  std::vector<uint32_t> sample_indices(uint32_t n, uint32_t k) {
    if (k >= n) {
      std::vector<uint32_t> all(n);
      for (uint32_t i = 0; i < n; ++i) all[i] = i;
      return all;
    }
    // Floyd's algorithm.
    std::vector<uint32_t> picked;
    picked.reserve(k);
    for (uint32_t j = n - k; j < n; ++j) {
      uint32_t t = static_cast<uint32_t>(below(j + 1));
      bool seen = false;
      for (uint32_t p : picked) {
        if (p == t) {
          seen = true;
          break;
        }
      }
      picked.push_back(seen ? j : t);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace hs
