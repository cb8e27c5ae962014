#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "hsearch/common.hpp"
#include "hsearch/parallel.hpp"
#include "hsearch/rng.hpp"

namespace hs {

struct KMeansOpts {
  uint32_t max_iter = 100;
  double tol = 1e-6;       // max centroid shift (Euclidean) to declare convergence
  uint32_t workers = 1;
};

struct KMeansResult {
  uint32_t k = 0;                       // effective k after distinct-point reduction
  std::vector<double> centroids;        // k * dim
  std::vector<uint32_t> assignment;     // n
  uint32_t iterations = 0;
  std::vector<double> wcss_history;     // within-cluster sum of squares per iteration
};

namespace detail {

inline double sq_dist(const double* a, const double* b, size_t dim) {
  double s = 0.0;
  for (size_t i = 0; i < dim; ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline uint32_t count_distinct(const std::vector<double>& data, size_t n, size_t dim) {
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](uint32_t a, uint32_t b) {
    const double* pa = data.data() + static_cast<size_t>(a) * dim;
    const double* pb = data.data() + static_cast<size_t>(b) * dim;
    return std::lexicographical_compare(pa, pa + dim, pb, pb + dim);
  };
  std::sort(order.begin(), order.end(), less);
  uint32_t distinct = n > 0 ? 1 : 0;
  for (size_t i = 1; i < n; ++i) {
    const double* pa = data.data() + static_cast<size_t>(order[i - 1]) * dim;
    const double* pb = data.data() + static_cast<size_t>(order[i]) * dim;
    if (!std::equal(pa, pa + dim, pb)) ++distinct;
  }
  return distinct;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Fixed regime: squared-Euclidean
// assignment with lowest-index tie break, empty clusters reseeded to the
// point farthest from its assigned centroid, k reduced to the number of
// distinct points. Deterministic for a given (data, k, seed).
inline KMeansResult kmeans(const std::vector<double>& data, size_t n, size_t dim,
                           uint32_t k, uint64_t seed, const KMeansOpts& opts = {}) {
  if (n == 0 || dim == 0) throw UsageError("kmeans: empty input");
  if (data.size() != n * dim) throw UsageError("kmeans: data size mismatch");
  if (k == 0) throw UsageError("kmeans: k must be positive");

  k = std::min<uint32_t>(k, detail::count_distinct(data, n, dim));

  KMeansResult res;
  res.k = k;
  res.centroids.resize(static_cast<size_t>(k) * dim);
  res.assignment.assign(n, 0);

  const double* pts = data.data();
  Rng rng(seed);

  // k-means++ seeding.
  {
    size_t first = static_cast<size_t>(rng.below(n));
    std::copy_n(pts + first * dim, dim, res.centroids.begin());
    std::vector<double> d2(n);
    for (size_t i = 0; i < n; ++i)
      d2[i] = detail::sq_dist(pts + i * dim, res.centroids.data(), dim);
    for (uint32_t c = 1; c < k; ++c) {
      double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      size_t pick = 0;
      if (total > 0.0) {
        double r = rng.next_double() * total;
        double acc = 0.0;
        pick = n - 1;
        for (size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc > r) {
            pick = i;
            break;
          }
        }
      } else {
        // All mass at existing centroids; k was reduced to distinct count, so
        // a fresh point must exist. Take the first not yet chosen.
        for (size_t i = 0; i < n; ++i) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
      double* cent = res.centroids.data() + static_cast<size_t>(c) * dim;
      std::copy_n(pts + pick * dim, dim, cent);
      for (size_t i = 0; i < n; ++i) {
        double d = detail::sq_dist(pts + i * dim, cent, dim);
        if (d < d2[i]) d2[i] = d;
      }
    }
  }

  std::vector<double> next(static_cast<size_t>(k) * dim);
  std::vector<uint64_t> counts(k);
  std::vector<double> point_d2(n);

  for (uint32_t iter = 0; iter < opts.max_iter; ++iter) {
    ++res.iterations;

    // Assignment step.
    parallel_for(n, opts.workers, [&](size_t i) {
      const double* p = pts + i * dim;
      uint32_t best = 0;
      double best_d = detail::sq_dist(p, res.centroids.data(), dim);
      for (uint32_t c = 1; c < k; ++c) {
        double d = detail::sq_dist(p, res.centroids.data() + static_cast<size_t>(c) * dim, dim);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      res.assignment[i] = best;
      point_d2[i] = best_d;
    });
    res.wcss_history.push_back(std::accumulate(point_d2.begin(), point_d2.end(), 0.0));

    // Update step.
    std::fill(next.begin(), next.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (size_t i = 0; i < n; ++i) {
      uint32_t c = res.assignment[i];
      ++counts[c];
      double* acc = next.data() + static_cast<size_t>(c) * dim;
      const double* p = pts + i * dim;
      for (size_t j = 0; j < dim; ++j) acc[j] += p[j];
    }

    // Empty clusters grab the point farthest from its assigned centroid.
    std::vector<bool> taken(n, false);
    for (uint32_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      size_t far = SIZE_MAX;
      double far_d = -1.0;
      for (size_t i = 0; i < n; ++i) {
        if (taken[i] || counts[res.assignment[i]] <= 1) continue;
        if (point_d2[i] > far_d) {
          far_d = point_d2[i];
          far = i;
        }
      }
      if (far == SIZE_MAX) continue;
      taken[far] = true;
      uint32_t old = res.assignment[far];
      const double* p = pts + far * dim;
      double* acc_old = next.data() + static_cast<size_t>(old) * dim;
      for (size_t j = 0; j < dim; ++j) acc_old[j] -= p[j];
      --counts[old];
      double* acc = next.data() + static_cast<size_t>(c) * dim;
      std::copy_n(p, dim, acc);
      counts[c] = 1;
      res.assignment[far] = c;
      point_d2[far] = 0.0;
    }

    double max_shift2 = 0.0;
    for (uint32_t c = 0; c < k; ++c) {
      double* cent = res.centroids.data() + static_cast<size_t>(c) * dim;
      const double* acc = next.data() + static_cast<size_t>(c) * dim;
      double shift2 = 0.0;
      for (size_t j = 0; j < dim; ++j) {
        double v = counts[c] > 0 ? acc[j] / static_cast<double>(counts[c]) : cent[j];
        double d = v - cent[j];
        shift2 += d * d;
        cent[j] = v;
      }
      max_shift2 = std::max(max_shift2, shift2);
    }
    if (std::sqrt(max_shift2) < opts.tol) break;
  }

  // Final assignment against the converged centroids.
  parallel_for(n, opts.workers, [&](size_t i) {
    const double* p = pts + i * dim;
    uint32_t best = 0;
    double best_d = detail::sq_dist(p, res.centroids.data(), dim);
    for (uint32_t c = 1; c < k; ++c) {
      double d = detail::sq_dist(p, res.centroids.data() + static_cast<size_t>(c) * dim, dim);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    res.assignment[i] = best;
  });

  return res;
}

}  // namespace hs
