#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "hsearch/encoding.hpp"

using namespace hs;

TEST_CASE("minmax barcode marks strictly increasing steps") {
  // Frozen example: differences (+0.3, -0.4, 0.0) -> bits 1,0,0.
  Barcode b = minmax_barcode(std::vector<double>{0.2, 0.5, 0.1, 0.1});
  REQUIRE(b.bits == 3);
  REQUIRE(b.get(0));
  REQUIRE(!b.get(1));
  REQUIRE(!b.get(2));
  REQUIRE(b.tail_clean());

  REQUIRE_THROWS_AS(minmax_barcode(std::vector<double>{1.0}), UsageError);
}

TEST_CASE("hamming distance counts differing bits") {
  Barcode a = Barcode::zeros(70), b = Barcode::zeros(70);
  a.set(0);
  a.set(63);
  a.set(69);
  b.set(63);
  b.set(68);
  REQUIRE(a.hamming(b) == 3);
  REQUIRE(a.hamming(a) == 0);
}

TEST_CASE("tail_clean spots stray bits past the declared width") {
  Barcode b = Barcode::zeros(67);
  b.set(66);
  REQUIRE(b.tail_clean());
  b.words[1] |= 1ull << 10;  // bit 74, outside the 67-bit code
  REQUIRE(!b.tail_clean());
}

TEST_CASE("dictionary assignment matches brute-force nearest centroid") {
  Rng rng(21);
  const uint32_t dim = 6, k = 12;
  std::vector<float> train(400 * dim);
  for (auto& v : train) v = static_cast<float>(rng.normal());
  VisualDictionary dict = build_dictionary(train, 400, dim, k, 3);
  REQUIRE(dict.k() == k);
  REQUIRE(dict.dim == dim);

  for (int probe = 0; probe < 50; ++probe) {
    std::vector<float> q(dim);
    for (auto& v : q) v = static_cast<float>(rng.normal());
    uint32_t got = dict.nearest(q.data());
    uint32_t best = 0;
    double best_d = 1e300;
    for (uint32_t c = 0; c < k; ++c) {
      double d = 0.0;
      for (uint32_t j = 0; j < dim; ++j) {
        double t = static_cast<double>(q[j]) - dict.centroids[c * dim + j];
        d += t * t;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    REQUIRE(got == best);
  }
}

TEST_CASE("nearest centroid breaks exact ties toward the lower index") {
  VisualDictionary d;
  d.dim = 1;
  d.centroids = {0.0f, 2.0f};
  float q = 1.0f;
  REQUIRE(d.nearest(&q) == 0);
}

TEST_CASE("bovw histogram counts every word once") {
  VisualDictionary d;
  d.dim = 1;
  d.centroids = {0.0f, 10.0f, 20.0f};
  std::vector<std::vector<float>> words{{1.0f}, {9.0f}, {11.0f}, {21.0f}, {0.5f}};
  WordHistogram h = encode_bovw(d, words);
  REQUIRE(h.total == 5);
  REQUIRE(h.counts == std::vector<uint32_t>{2, 2, 1});
  auto norm = h.normalized();
  REQUIRE(norm[0] + norm[1] + norm[2] == Catch::Approx(1.0));

  REQUIRE_THROWS_AS(encode_bovw(d, {{1.0f, 2.0f}}), UsageError);
}

TEST_CASE("dictionary persistence is lossless") {
  Rng rng(5);
  std::vector<float> train(50 * 4);
  for (auto& v : train) v = static_cast<float>(rng.normal());
  VisualDictionary d = build_dictionary(train, 50, 4, 8, 1);
  VisualDictionary r = parse_dictionary(serialize_dictionary(d));
  REQUIRE(r.dim == d.dim);
  REQUIRE(r.centroids == d.centroids);

  REQUIRE_THROWS_AS(parse_dictionary("garbage"), FormatError);
  std::string bytes = serialize_dictionary(d);
  bytes += 'x';
  REQUIRE_THROWS_AS(parse_dictionary(bytes), FormatError);
}

TEST_CASE("codebook thresholds are per-band ascending quantiles") {
  Rng rng(13);
  std::vector<std::vector<float>> train;
  for (int i = 0; i < 200; ++i) {
    std::vector<float> f(8);
    for (auto& v : f) v = static_cast<float>(rng.normal());
    train.push_back(std::move(f));
  }
  PoolingCodebook cb = fit_pooling_codebook(train, 8, 4, 3);
  REQUIRE(cb.universe_bits() == 12);
  REQUIRE(cb.levels() == 8);
  for (uint32_t b = 0; b < cb.bands; ++b) {
    const float* th = cb.band_thresholds(b);
    for (uint32_t i = 1; i + 1 < cb.levels(); ++i) REQUIRE(th[i - 1] <= th[i]);
  }
  for (const auto& f : train) REQUIRE(integer_code(cb, f) < cb.universe());

  REQUIRE_THROWS_AS(fit_pooling_codebook({{1.0f}, {2.0f}}, 1, 2, 4), DataError);
  REQUIRE_THROWS_AS(fit_pooling_codebook(train, 8, 16, 4), UsageError);
}

TEST_CASE("integer code quantizes band means against the thresholds") {
  // dim 4, 2 bands of width 2, 1 bit per band: a single median threshold.
  std::vector<std::vector<float>> train;
  for (int i = 0; i < 8; ++i)
    train.push_back({static_cast<float>(i), static_cast<float>(i),
                     static_cast<float>(-i), static_cast<float>(-i)});
  PoolingCodebook cb = fit_pooling_codebook(train, 4, 2, 1);
  // Band 0 means are 0..7 (median 3.5); band 1 means are 0..-7 (median -3.5).
  uint64_t hi_lo = integer_code(cb, std::vector<float>{7, 7, -7, -7});
  REQUIRE(hi_lo == 1);  // band0 above threshold, band1 below
  uint64_t lo_hi = integer_code(cb, std::vector<float>{0, 0, 0, 0});
  REQUIRE(lo_hi == 2);  // band0 below, band1 above
  REQUIRE_THROWS_AS(integer_code(cb, std::vector<float>{1.0f}), UsageError);
}

TEST_CASE("codebook persistence is lossless") {
  Rng rng(17);
  std::vector<std::vector<float>> train;
  for (int i = 0; i < 64; ++i) {
    std::vector<float> f(10);
    for (auto& v : f) v = static_cast<float>(rng.normal());
    train.push_back(std::move(f));
  }
  PoolingCodebook cb = fit_pooling_codebook(train, 10, 5, 4);
  PoolingCodebook r = parse_codebook(serialize_codebook(cb));
  REQUIRE(r.bands == cb.bands);
  REQUIRE(r.bits_per_band == cb.bits_per_band);
  REQUIRE(r.dim == cb.dim);
  REQUIRE(r.thresholds == cb.thresholds);
  for (const auto& f : train) REQUIRE(integer_code(r, f) == integer_code(cb, f));

  // Kind bytes are not interchangeable between the two HSDC payloads.
  REQUIRE_THROWS_AS(parse_dictionary(serialize_codebook(cb)), FormatError);
}

TEST_CASE("dictionary fit is reproducible and f32-stable") {
  Rng rng(33);
  std::vector<float> train(300 * 5);
  for (auto& v : train) v = static_cast<float>(rng.normal());
  VisualDictionary a = build_dictionary(train, 300, 5, 16, 9, 1);
  VisualDictionary b = build_dictionary(train, 300, 5, 16, 9, 4);
  REQUIRE(a.centroids == b.centroids);  // worker count must not matter
}
