#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hsearch/common.hpp"
#include "hsearch/kmeans.hpp"
#include "hsearch/parallel.hpp"
#include "hsearch/rng.hpp"

namespace hs {

// ---------------------------------------------------------------------------
// MinMax barcodes: bit i set iff f[i+1] > f[i]. Length dim-1, packed into
// 64-bit words.
// ---------------------------------------------------------------------------

struct Barcode {
  uint32_t bits = 0;
  std::vector<uint64_t> words;

  static Barcode zeros(uint32_t bits) {
    Barcode b;
    b.bits = bits;
    b.words.assign((bits + 63) / 64, 0);
    return b;
  }

  bool get(uint32_t i) const { return (words[i >> 6] >> (i & 63)) & 1; }
  void set(uint32_t i) { words[i >> 6] |= 1ull << (i & 63); }

  uint32_t hamming(const Barcode& other) const {
    uint32_t d = 0;
    for (size_t w = 0; w < words.size(); ++w)
      d += static_cast<uint32_t>(std::popcount(words[w] ^ other.words[w]));
    return d;
  }

  bool operator==(const Barcode& other) const {
    return bits == other.bits && words == other.words;
  }

  // True when no bit beyond `bits` is set in the last word.
  bool tail_clean() const {
    uint32_t used = bits & 63;
    if (used == 0 || words.empty()) return true;
    return (words.back() & ~((1ull << used) - 1)) == 0;
  }
};

template <typename T>
inline Barcode minmax_barcode(const std::vector<T>& f) {
  if (f.size() < 2) throw UsageError("minmax barcode needs at least 2 dimensions");
  Barcode b = Barcode::zeros(static_cast<uint32_t>(f.size() - 1));
  for (uint32_t i = 0; i + 1 < f.size(); ++i)
    if (f[i + 1] > f[i]) b.set(i);  // ties stay 0
  return b;
}

// ---------------------------------------------------------------------------
// Visual dictionary for bag-of-visual-words.
// ---------------------------------------------------------------------------

struct VisualDictionary {
  uint32_t dim = 0;
  std::vector<float> centroids;  // k * dim, row-major

  uint32_t k() const {
    return dim == 0 ? 0 : static_cast<uint32_t>(centroids.size() / dim);
  }

  // Nearest centroid by squared Euclidean distance; ties resolve to the
  // lowest centroid index.
  uint32_t nearest(const float* f) const {
    uint32_t kk = k();
    uint32_t best = 0;
    double best_d = 0.0;
    for (uint32_t c = 0; c < kk; ++c) {
      const float* cent = centroids.data() + static_cast<size_t>(c) * dim;
      double d = 0.0;
      for (uint32_t j = 0; j < dim; ++j) {
        double t = static_cast<double>(f[j]) - cent[j];
        d += t * t;
      }
      if (c == 0 || d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  }
};

// Centroids are rounded to f32 when fitted, so a dictionary behaves
// identically before and after a save/load round trip.
inline VisualDictionary build_dictionary(const std::vector<float>& words, size_t n,
                                         size_t dim, uint32_t k, uint64_t seed,
                                         uint32_t workers = 1,
                                         uint32_t max_iter = 100) {
  if (n == 0) throw DataError("dictionary: no training words");
  std::vector<double> flat(words.begin(), words.begin() + n * dim);
  KMeansOpts opts;
  opts.workers = workers;
  opts.max_iter = max_iter;
  KMeansResult km = kmeans(flat, n, dim, k, seed, opts);
  VisualDictionary d;
  d.dim = static_cast<uint32_t>(dim);
  d.centroids.resize(km.centroids.size());
  for (size_t i = 0; i < km.centroids.size(); ++i)
    d.centroids[i] = static_cast<float>(km.centroids[i]);
  return d;
}

// Integer word counts plus a normalized view. chi-squared matching runs on
// the normalized form; persistence keeps the exact counts.
struct WordHistogram {
  std::vector<uint32_t> counts;
  uint64_t total = 0;

  std::vector<double> normalized() const {
    std::vector<double> h(counts.size(), 0.0);
    if (total == 0) return h;
    for (size_t i = 0; i < counts.size(); ++i)
      h[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
    return h;
  }
};

inline WordHistogram encode_bovw(const VisualDictionary& dict,
                                 const std::vector<std::vector<float>>& words) {
  WordHistogram h;
  h.counts.assign(dict.k(), 0);
  for (const auto& w : words) {
    if (w.size() != dict.dim) throw UsageError("encode_bovw: word dimension mismatch");
    ++h.counts[dict.nearest(w.data())];
    ++h.total;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Pooling codebook: band means quantized against empirical quantile
// thresholds, yielding keys below 2^(bands * bits_per_band).
// ---------------------------------------------------------------------------

struct PoolingCodebook {
  uint32_t bands = 10;
  uint32_t bits_per_band = 5;
  uint32_t dim = 0;
  std::vector<float> thresholds;  // bands * (2^bits_per_band - 1), ascending per band

  uint32_t levels() const { return 1u << bits_per_band; }
  uint32_t universe_bits() const { return bands * bits_per_band; }
  uint64_t universe() const { return 1ull << universe_bits(); }

  const float* band_thresholds(uint32_t b) const {
    return thresholds.data() + static_cast<size_t>(b) * (levels() - 1);
  }
};

// Contiguous band means; if dim does not divide evenly the last band is
// padded by repeating the final entry.
inline std::vector<double> band_means(const float* f, uint32_t dim, uint32_t bands) {
  uint32_t width = (dim + bands - 1) / bands;
  std::vector<double> means(bands, 0.0);
  for (uint32_t b = 0; b < bands; ++b) {
    double acc = 0.0;
    for (uint32_t j = 0; j < width; ++j) {
      uint32_t idx = b * width + j;
      acc += f[idx < dim ? idx : dim - 1];
    }
    means[b] = acc / width;
  }
  return means;
}

namespace detail {

// Linear-interpolated empirical quantile of sorted values.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.size() == 1) return sorted[0];
  double pos = p * static_cast<double>(sorted.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

// Number of thresholds strictly below v. Degenerate (all-equal) thresholds
// therefore map everything at or below them to code 0.
inline uint32_t quantize_band(const float* th, uint32_t nth, double v) {
  uint32_t code = 0;
  while (code < nth && static_cast<double>(th[code]) < v) ++code;
  return code;
}

}  // namespace detail

inline PoolingCodebook fit_pooling_codebook(const std::vector<std::vector<float>>& train,
                                            uint32_t dim, uint32_t bands = 10,
                                            uint32_t bits_per_band = 5) {
  if (bands == 0 || bits_per_band == 0 || bands * bits_per_band > 63)
    throw UsageError("codebook: bad band geometry");
  uint32_t levels = 1u << bits_per_band;
  if (train.size() < static_cast<size_t>(levels))
    throw DataError("codebook: need at least " + std::to_string(levels) + " training vectors");

  PoolingCodebook cb;
  cb.bands = bands;
  cb.bits_per_band = bits_per_band;
  cb.dim = dim;
  cb.thresholds.resize(static_cast<size_t>(bands) * (levels - 1));

  std::vector<double> vals(train.size());
  for (uint32_t b = 0; b < bands; ++b) {
    for (size_t i = 0; i < train.size(); ++i) {
      if (train[i].size() != dim) throw UsageError("codebook: training dimension mismatch");
      vals[i] = band_means(train[i].data(), dim, bands)[b];
    }
    std::sort(vals.begin(), vals.end());
    float* th = cb.thresholds.data() + static_cast<size_t>(b) * (levels - 1);
    for (uint32_t q = 1; q < levels; ++q) {
      double p = static_cast<double>(q) / static_cast<double>(levels);
      th[q - 1] = static_cast<float>(detail::quantile_sorted(vals, p));
    }
    std::sort(th, th + (levels - 1));  // guard against f32 rounding inversions
  }
  return cb;
}

inline uint64_t integer_code(const PoolingCodebook& cb, const float* f, uint32_t dim) {
  if (dim != cb.dim) throw UsageError("integer_code: dimension mismatch");
  std::vector<double> means = band_means(f, dim, cb.bands);
  uint64_t key = 0;
  for (uint32_t b = 0; b < cb.bands; ++b) {
    uint64_t q = detail::quantize_band(cb.band_thresholds(b), cb.levels() - 1, means[b]);
    key |= q << (b * cb.bits_per_band);
  }
  return key;
}

inline uint64_t integer_code(const PoolingCodebook& cb, const std::vector<float>& f) {
  return integer_code(cb, f.data(), static_cast<uint32_t>(f.size()));
}

// ---------------------------------------------------------------------------
// Persistence: "HSDC", u8 kind (1 dictionary, 2 codebook), u8 version,
// u16 reserved, dims, f32 payload. Little-endian throughout.
// ---------------------------------------------------------------------------

inline constexpr char kDictMagic[4] = {'H', 'S', 'D', 'C'};

inline std::string serialize_dictionary(const VisualDictionary& d) {
  ByteWriter w;
  w.bytes(kDictMagic, 4);
  w.u8(1);
  w.u8(1);
  w.u16(0);
  w.u32(d.k());
  w.u32(d.dim);
  for (float v : d.centroids) w.f32(v);
  return w.take();
}

inline std::string serialize_codebook(const PoolingCodebook& cb) {
  ByteWriter w;
  w.bytes(kDictMagic, 4);
  w.u8(2);
  w.u8(1);
  w.u16(0);
  w.u32(cb.bands);
  w.u32(cb.bits_per_band);
  w.u32(cb.dim);
  for (float v : cb.thresholds) w.f32(v);
  return w.take();
}

namespace detail {

inline void check_hsdc_header(ByteReader& r, uint8_t want_kind) {
  char magic[4];
  for (auto& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kDictMagic, 4) != 0) throw FormatError("HSDC: bad magic");
  uint8_t kind = r.u8();
  if (kind != want_kind) throw FormatError("HSDC: wrong artifact kind");
  if (r.u8() != 1) throw FormatError("HSDC: unsupported version");
  r.u16();
}

}  // namespace detail

inline VisualDictionary parse_dictionary(const std::string& bytes) {
  ByteReader r(bytes);
  detail::check_hsdc_header(r, 1);
  uint32_t k = r.u32();
  VisualDictionary d;
  d.dim = r.u32();
  if (d.dim == 0 || k == 0) throw FormatError("HSDC: empty dictionary");
  d.centroids.resize(static_cast<size_t>(k) * d.dim);
  for (auto& v : d.centroids) v = r.f32();
  if (r.remaining() != 0) throw FormatError("HSDC: trailing bytes");
  return d;
}

inline PoolingCodebook parse_codebook(const std::string& bytes) {
  ByteReader r(bytes);
  detail::check_hsdc_header(r, 2);
  PoolingCodebook cb;
  cb.bands = r.u32();
  cb.bits_per_band = r.u32();
  cb.dim = r.u32();
  if (cb.bands == 0 || cb.bits_per_band == 0 || cb.bands * cb.bits_per_band > 63)
    throw FormatError("HSDC: bad band geometry");
  cb.thresholds.resize(static_cast<size_t>(cb.bands) * (cb.levels() - 1));
  for (auto& v : cb.thresholds) v = r.f32();
  if (r.remaining() != 0) throw FormatError("HSDC: trailing bytes");
  return cb;
}

}  // namespace hs
