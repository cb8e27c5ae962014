#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "hsearch/kmeans.hpp"

using namespace hs;

namespace {

// Exact best WCSS over every 2-partition of small 1-d inputs.
double best_two_cluster_wcss(const std::vector<double>& pts) {
  size_t n = pts.size();
  double best = std::numeric_limits<double>::infinity();
  for (uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
    double sum[2] = {0, 0}, sq[2] = {0, 0};
    int cnt[2] = {0, 0};
    for (size_t i = 0; i < n; ++i) {
      int g = (mask >> i) & 1;
      sum[g] += pts[i];
      sq[g] += pts[i] * pts[i];
      ++cnt[g];
    }
    double wcss = 0.0;
    for (int g = 0; g < 2; ++g)
      if (cnt[g]) wcss += sq[g] - sum[g] * sum[g] / cnt[g];
    best = std::min(best, wcss);
  }
  return best;
}

double result_wcss(const std::vector<double>& pts, const KMeansResult& res) {
  double wcss = 0.0;
  for (size_t i = 0; i < pts.size(); ++i) {
    double d = pts[i] - res.centroids[res.assignment[i]];
    wcss += d * d;
  }
  return wcss;
}

}  // namespace

TEST_CASE("two clusters on separated 1-d data reach the exhaustive optimum") {
  std::vector<double> pts{0.0, 0.1, 0.25, 0.3, 10.0, 10.1, 10.3, 10.45};
  double oracle = best_two_cluster_wcss(pts);
  for (uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
    auto res = kmeans(pts, pts.size(), 1, 2, seed);
    REQUIRE(res.k == 2);
    REQUIRE(result_wcss(pts, res) == Catch::Approx(oracle).margin(1e-9));
  }
}

TEST_CASE("kmeans output does not depend on the worker count") {
  Rng rng(4242);
  const size_t n = 300, dim = 8;
  std::vector<double> data(n * dim);
  for (auto& v : data) v = rng.normal();
  KMeansOpts a, b;
  a.workers = 1;
  b.workers = 4;
  auto ra = kmeans(data, n, dim, 16, 7, a);
  auto rb = kmeans(data, n, dim, 16, 7, b);
  REQUIRE(ra.assignment == rb.assignment);
  REQUIRE(ra.centroids == rb.centroids);
  REQUIRE(ra.iterations == rb.iterations);
}

TEST_CASE("k collapses to the number of distinct points") {
  std::vector<double> data{1.0, 1.0, 1.0, 2.0, 2.0, 3.0};
  auto res = kmeans(data, 6, 1, 5, 0);
  REQUIRE(res.k == 3);
  std::vector<double> cents(res.centroids);
  std::sort(cents.begin(), cents.end());
  REQUIRE(cents == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("objective history never increases") {
  Rng rng(8);
  const size_t n = 200, dim = 4;
  std::vector<double> data(n * dim);
  for (auto& v : data) v = rng.normal() * 3.0;
  auto res = kmeans(data, n, dim, 10, 5);
  for (size_t i = 1; i < res.wcss_history.size(); ++i)
    REQUIRE(res.wcss_history[i] <= res.wcss_history[i - 1] + 1e-9);
}

TEST_CASE("kmeans rejects empty or inconsistent input") {
  std::vector<double> data{1.0, 2.0};
  REQUIRE_THROWS_AS(kmeans({}, 0, 1, 2, 0), UsageError);
  REQUIRE_THROWS_AS(kmeans(data, 3, 1, 2, 0), UsageError);
  REQUIRE_THROWS_AS(kmeans(data, 2, 1, 0, 0), UsageError);
}

TEST_CASE("every cluster owns at least one point") {
  Rng rng(15);
  const size_t n = 64, dim = 2;
  std::vector<double> data(n * dim);
  for (auto& v : data) v = rng.next_double();
  auto res = kmeans(data, n, dim, 8, 3);
  std::vector<int> owned(res.k, 0);
  for (uint32_t a : res.assignment) {
    REQUIRE(a < res.k);
    ++owned[a];
  }
  for (int c : owned) REQUIRE(c > 0);
}
