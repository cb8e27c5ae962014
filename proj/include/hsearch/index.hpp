#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hsearch/archive.hpp"
#include "hsearch/common.hpp"
#include "hsearch/encoding.hpp"
#include "hsearch/veb.hpp"

namespace hs {

inline constexpr char kIndexMagic[4] = {'H', 'S', 'I', 'X'};

enum class IndexKind : uint8_t {
  flat_barcode = 1,  // per-patch barcodes, exhaustive Hamming scan
  veb_patch = 2,     // integer-keyed patches behind a vEB tree
  cosine = 3,        // raw feature vectors, cosine similarity scan
  histogram = 4,     // one word histogram per WSI
};

// Operation tallies filled in by the distance loops, for contract checks.
struct OpCounts {
  uint64_t hamming = 0;
  uint64_t cosine = 0;
  uint64_t chi2 = 0;
};

// Numeric patch identity used inside indexes; WSI ids live in a string table.
struct PatchEntry {
  uint32_t wsi = 0;
  uint32_t grid_x = 0;
  uint32_t grid_y = 0;
  uint32_t patch_px = 0;
  double magnification = 0.0;
};

namespace detail {

inline void write_index_header(ByteWriter& w, IndexKind kind) {
  w.bytes(kIndexMagic, 4);
  w.u8(static_cast<uint8_t>(kind));
  w.u8(1);  // version
  w.u16(0);
}

inline void check_index_header(ByteReader& r, IndexKind kind) {
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kIndexMagic, 4) != 0)
    throw FormatError("index: bad magic");
  uint8_t k = r.u8();
  if (k != static_cast<uint8_t>(kind)) throw FormatError("index: wrong kind");
  if (r.u8() != 1) throw FormatError("index: unsupported version");
  r.u16();
}

inline void write_string_table(ByteWriter& w, const std::vector<std::string>& ids) {
  w.u32(static_cast<uint32_t>(ids.size()));
  for (const auto& id : ids) w.str(id);
}

inline std::vector<std::string> read_string_table(ByteReader& r) {
  uint32_t n = r.u32();
  std::vector<std::string> ids;
  ids.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    std::string id = r.str();
    if (!safe_id(id)) throw FormatError("index: malformed WSI id");
    ids.push_back(std::move(id));
  }
  return ids;
}

inline void write_patch_entry(ByteWriter& w, const PatchEntry& e) {
  w.u32(e.wsi);
  w.u32(e.grid_x);
  w.u32(e.grid_y);
  w.u32(e.patch_px);
  w.f64(e.magnification);
}

inline PatchEntry read_patch_entry(ByteReader& r, uint32_t n_wsis) {
  PatchEntry e;
  e.wsi = r.u32();
  e.grid_x = r.u32();
  e.grid_y = r.u32();
  e.patch_px = r.u32();
  e.magnification = r.f64();
  if (e.wsi >= n_wsis) throw FormatError("index: entry references unknown WSI");
  return e;
}

}  // namespace detail

// Registry of WSI ids shared by the index classes. Insertion order is the
// on-disk order, so look-ups by position stay stable across round trips.
class WsiTable {
 public:
  uint32_t add(const std::string& wsi_id) {
    auto it = lookup_.find(wsi_id);
    if (it != lookup_.end())
      throw UsageError("index: WSI added twice: " + wsi_id);
    uint32_t idx = static_cast<uint32_t>(ids_.size());
    ids_.push_back(wsi_id);
    lookup_.emplace(wsi_id, idx);
    return idx;
  }

  std::optional<uint32_t> find(const std::string& wsi_id) const {
    auto it = lookup_.find(wsi_id);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& id(uint32_t idx) const { return ids_.at(idx); }
  uint32_t size() const { return static_cast<uint32_t>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }

  static WsiTable from_ids(std::vector<std::string> ids) {
    WsiTable t;
    for (auto& id : ids) t.add(id);
    return t;
  }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, uint32_t> lookup_;
};

// ---------------------------------------------------------------------------
// Flat barcode index: every mosaic patch keeps its bit barcode; WSI-to-WSI
// distance is the median over query patches of the minimum Hamming distance
// into the candidate's patch set.
// ---------------------------------------------------------------------------

class BarcodeIndex {
 public:
  struct Coded {
    PatchEntry entry;
    Barcode code;
  };

  explicit BarcodeIndex(uint32_t code_bits) : code_bits_(code_bits) {
    if (code_bits == 0) throw UsageError("barcode index: code_bits must be positive");
  }

  uint32_t code_bits() const { return code_bits_; }
  const WsiTable& wsis() const { return table_; }
  uint64_t entry_count() const { return entries_.size(); }
  const Coded& entry(size_t i) const { return entries_.at(i); }

  uint32_t add_wsi(const std::string& wsi_id,
                   const std::vector<std::pair<PatchRef, Barcode>>& coded) {
    uint32_t idx = table_.add(wsi_id);
    ranges_.emplace_back(static_cast<uint32_t>(entries_.size()),
                         static_cast<uint32_t>(coded.size()));
    for (const auto& [ref, code] : coded) {
      if (code.bits != code_bits_)
        throw UsageError("barcode index: code width mismatch");
      entries_.push_back({{idx, ref.grid_x, ref.grid_y, ref.patch_px, ref.magnification},
                          code});
    }
    return idx;
  }

  uint32_t patch_count(uint32_t wsi_idx) const { return ranges_.at(wsi_idx).second; }

  // Minimum Hamming distance from `code` into one WSI's patch set.
  uint32_t min_hamming(uint32_t wsi_idx, const Barcode& code, OpCounts* ops = nullptr) const {
    auto [begin, count] = ranges_.at(wsi_idx);
    if (count == 0) throw DataError("barcode index: WSI has no patches");
    uint32_t best = UINT32_MAX;
    for (uint32_t i = begin; i < begin + count; ++i)
      best = std::min(best, entries_[i].code.hamming(code));
    if (ops) ops->hamming += count;
    return best;
  }

  // Median over query codes of the per-code minimum Hamming distance. An even
  // count averages the two central values. Not symmetric in its arguments.
  double wsi_distance(const std::vector<Barcode>& query_codes, uint32_t wsi_idx,
                      OpCounts* ops = nullptr) const {
    if (query_codes.empty()) throw UsageError("barcode index: empty query");
    std::vector<uint32_t> mins;
    mins.reserve(query_codes.size());
    for (const auto& code : query_codes)
      mins.push_back(min_hamming(wsi_idx, code, ops));
    std::sort(mins.begin(), mins.end());
    size_t n = mins.size();
    if (n % 2 == 1) return static_cast<double>(mins[n / 2]);
    return (static_cast<double>(mins[n / 2 - 1]) + static_cast<double>(mins[n / 2])) / 2.0;
  }

  void serialize(ByteWriter& w) const {
    detail::write_index_header(w, IndexKind::flat_barcode);
    detail::write_string_table(w, table_.ids());
    w.u32(code_bits_);
    w.u64(entries_.size());
    for (const auto& e : entries_) {
      detail::write_patch_entry(w, e.entry);
      for (uint64_t word : e.code.words) w.u64(word);
    }
  }

  static BarcodeIndex parse(ByteReader& r) {
    detail::check_index_header(r, IndexKind::flat_barcode);
    auto ids = detail::read_string_table(r);
    uint32_t code_bits = r.u32();
    if (code_bits == 0) throw FormatError("barcode index: zero code width");
    BarcodeIndex idx(code_bits);
    idx.table_ = WsiTable::from_ids(std::move(ids));
    uint64_t n = r.u64();
    size_t words = Barcode::zeros(code_bits).words.size();
    idx.entries_.reserve(n);
    idx.ranges_.assign(idx.table_.size(), {0, 0});
    uint32_t prev_wsi = UINT32_MAX;
    for (uint64_t i = 0; i < n; ++i) {
      Coded c;
      c.entry = detail::read_patch_entry(r, idx.table_.size());
      c.code = Barcode::zeros(code_bits);
      for (size_t wi = 0; wi < words; ++wi) c.code.words[wi] = r.u64();
      if (!c.code.tail_clean()) throw FormatError("barcode index: stray tail bits");
      if (c.entry.wsi != prev_wsi) {
        if (idx.ranges_[c.entry.wsi].second != 0)
          throw FormatError("barcode index: WSI entries not contiguous");
        idx.ranges_[c.entry.wsi].first = static_cast<uint32_t>(i);
        prev_wsi = c.entry.wsi;
      }
      ++idx.ranges_[c.entry.wsi].second;
      idx.entries_.push_back(std::move(c));
    }
    if (r.remaining() != 0) throw FormatError("barcode index: trailing bytes");
    return idx;
  }

 private:
  uint32_t code_bits_;
  WsiTable table_;
  std::vector<Coded> entries_;
  std::vector<std::pair<uint32_t, uint32_t>> ranges_;  // wsi -> (begin, count)
};

// ---------------------------------------------------------------------------
// vEB patch index: each mosaic patch is keyed by its pooled integer code.
// Neighbor expansion walks the key space outward through the tree; bucket
// entries keep their barcodes for Hamming re-ranking.
// ---------------------------------------------------------------------------

class VebPatchIndex {
 public:
  struct Coded {
    PatchEntry entry;
    Barcode code;
  };

  struct Candidate {
    uint64_t key = 0;
    const Coded* coded = nullptr;
  };

  VebPatchIndex(uint32_t code_bits, uint32_t universe_bits)
      : code_bits_(code_bits), tree_(universe_bits) {
    if (code_bits == 0) throw UsageError("veb index: code_bits must be positive");
  }

  uint32_t code_bits() const { return code_bits_; }
  uint32_t universe_bits() const { return tree_.universe_bits(); }
  const WsiTable& wsis() const { return table_; }
  const VebTree& tree() const { return tree_; }
  uint64_t entry_count() const { return n_entries_; }

  uint32_t add_wsi(const std::string& wsi_id,
                   const std::vector<std::tuple<PatchRef, uint64_t, Barcode>>& coded) {
    uint32_t idx = table_.add(wsi_id);
    patch_counts_.push_back(static_cast<uint32_t>(coded.size()));
    for (const auto& [ref, key, code] : coded) {
      if (code.bits != code_bits_)
        throw UsageError("veb index: code width mismatch");
      tree_.insert(key);
      buckets_[key].push_back(
          {{idx, ref.grid_x, ref.grid_y, ref.patch_px, ref.magnification}, code});
      ++n_entries_;
    }
    return idx;
  }

  uint32_t patch_count(uint32_t wsi_idx) const { return patch_counts_.at(wsi_idx); }

  // Up to `budget` bucket entries nearest to `key` in integer-key order.
  // Entries of WSIs flagged in `excluded` are skipped without consuming
  // budget, so downstream Hamming work stays bounded by the budget. Buckets
  // are consumed in walk order; the budget may truncate the last one.
  std::vector<Candidate> neighbors(uint64_t key, uint32_t budget,
                                   const std::vector<uint8_t>* excluded = nullptr,
                                   VebTree::ProbeStats* stats = nullptr) const {
    std::vector<Candidate> out;
    if (budget == 0) return out;
    VebNeighborWalk walk(tree_, key, stats);
    while (out.size() < budget) {
      auto k = walk.next();
      if (!k) break;
      const auto& bucket = buckets_.at(*k);
      for (const auto& coded : bucket) {
        if (excluded && (*excluded)[coded.entry.wsi]) continue;
        out.push_back({*k, &coded});
        if (out.size() == budget) break;
      }
    }
    return out;
  }

  void serialize(ByteWriter& w) const {
    detail::write_index_header(w, IndexKind::veb_patch);
    detail::write_string_table(w, table_.ids());
    w.u32(code_bits_);
    w.u32(tree_.universe_bits());
    w.u32(static_cast<uint32_t>(patch_counts_.size()));
    for (uint32_t c : patch_counts_) w.u32(c);
    std::vector<uint64_t> keys;
    keys.reserve(buckets_.size());
    for (const auto& [key, bucket] : buckets_) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    w.u64(keys.size());
    for (uint64_t key : keys) {
      const auto& bucket = buckets_.at(key);
      w.u64(key);
      w.u32(static_cast<uint32_t>(bucket.size()));
      for (const auto& c : bucket) {
        detail::write_patch_entry(w, c.entry);
        for (uint64_t word : c.code.words) w.u64(word);
      }
    }
    ByteWriter image;
    tree_.serialize_image(image);
    w.u64(image.size());
    w.bytes(image.data().data(), image.size());
  }

  static VebPatchIndex parse(ByteReader& r) {
    detail::check_index_header(r, IndexKind::veb_patch);
    auto ids = detail::read_string_table(r);
    uint32_t code_bits = r.u32();
    uint32_t universe_bits = r.u32();
    if (code_bits == 0) throw FormatError("veb index: zero code width");
    if (universe_bits == 0 || universe_bits > 63)
      throw FormatError("veb index: bad universe");
    VebPatchIndex idx(code_bits, universe_bits);
    idx.table_ = WsiTable::from_ids(std::move(ids));
    uint32_t n_counts = r.u32();
    if (n_counts != idx.table_.size())
      throw FormatError("veb index: patch count table mismatch");
    idx.patch_counts_.resize(n_counts);
    for (auto& c : idx.patch_counts_) c = r.u32();
    uint64_t n_buckets = r.u64();
    size_t words = Barcode::zeros(code_bits).words.size();
    uint64_t prev_key = 0;
    for (uint64_t b = 0; b < n_buckets; ++b) {
      uint64_t key = r.u64();
      if (b > 0 && key <= prev_key) throw FormatError("veb index: unsorted buckets");
      prev_key = key;
      if (universe_bits < 64 && key >= (1ull << universe_bits))
        throw FormatError("veb index: key outside universe");
      uint32_t n = r.u32();
      if (n == 0) throw FormatError("veb index: empty bucket");
      auto& bucket = idx.buckets_[key];
      bucket.reserve(n);
      for (uint32_t i = 0; i < n; ++i) {
        Coded c;
        c.entry = detail::read_patch_entry(r, idx.table_.size());
        c.code = Barcode::zeros(code_bits);
        for (size_t wi = 0; wi < words; ++wi) c.code.words[wi] = r.u64();
        if (!c.code.tail_clean()) throw FormatError("veb index: stray tail bits");
        bucket.push_back(std::move(c));
        ++idx.n_entries_;
      }
    }
    uint64_t image_size = r.u64();
    idx.tree_ = VebTree::parse_image(r, image_size, universe_bits);
    if (r.remaining() != 0) throw FormatError("veb index: trailing bytes");
    if (idx.tree_.size() != n_buckets)
      throw FormatError("veb index: tree/bucket disagreement");
    for (const auto& [key, bucket] : idx.buckets_)
      if (!idx.tree_.member(key))
        throw FormatError("veb index: bucket key missing from tree");
    return idx;
  }

 private:
  uint32_t code_bits_;
  VebTree tree_;
  WsiTable table_;
  std::map<uint64_t, std::vector<Coded>> buckets_;
  std::vector<uint32_t> patch_counts_;
  uint64_t n_entries_ = 0;
};

// ---------------------------------------------------------------------------
// Cosine index: raw feature vectors per mosaic patch, scanned exhaustively.
// ---------------------------------------------------------------------------

class CosineIndex {
 public:
  explicit CosineIndex(uint32_t dim) : dim_(dim) {
    if (dim == 0) throw UsageError("cosine index: dim must be positive");
  }

  uint32_t dim() const { return dim_; }
  const WsiTable& wsis() const { return table_; }
  uint64_t entry_count() const { return entries_.size(); }
  const PatchEntry& entry(size_t i) const { return entries_.at(i); }

  uint32_t add_wsi(const std::string& wsi_id,
                   const std::vector<std::pair<PatchRef, FeatureVector>>& patches) {
    uint32_t idx = table_.add(wsi_id);
    patch_counts_.push_back(static_cast<uint32_t>(patches.size()));
    for (const auto& [ref, feat] : patches) {
      if (feat.size() != dim_) throw UsageError("cosine index: feature dim mismatch");
      entries_.push_back({idx, ref.grid_x, ref.grid_y, ref.patch_px, ref.magnification});
      feats_.insert(feats_.end(), feat.begin(), feat.end());
      norms_.push_back(l2_norm(feat.data()));
    }
    return idx;
  }

  uint32_t patch_count(uint32_t wsi_idx) const { return patch_counts_.at(wsi_idx); }

  const float* feature(size_t i) const { return feats_.data() + i * dim_; }

  // Cosine similarity between entry i and a query vector with precomputed
  // L2 norm. Zero-norm vectors are treated as orthogonal to everything.
  double similarity(size_t i, const float* query, double query_norm,
                    OpCounts* ops = nullptr) const {
    if (ops) ++ops->cosine;
    double denom = norms_[i] * query_norm;
    if (denom == 0.0) return 0.0;
    const float* f = feature(i);
    double dot = 0.0;
    for (uint32_t d = 0; d < dim_; ++d) dot += static_cast<double>(f[d]) * query[d];
    return dot / denom;
  }

  double l2_norm(const float* v) const {
    double s = 0.0;
    for (uint32_t d = 0; d < dim_; ++d) s += static_cast<double>(v[d]) * v[d];
    return std::sqrt(s);
  }

  void serialize(ByteWriter& w) const {
    detail::write_index_header(w, IndexKind::cosine);
    detail::write_string_table(w, table_.ids());
    w.u32(dim_);
    w.u32(static_cast<uint32_t>(patch_counts_.size()));
    for (uint32_t c : patch_counts_) w.u32(c);
    w.u64(entries_.size());
    for (size_t i = 0; i < entries_.size(); ++i) {
      detail::write_patch_entry(w, entries_[i]);
      const float* f = feature(i);
      for (uint32_t d = 0; d < dim_; ++d) w.f32(f[d]);
    }
  }

  static CosineIndex parse(ByteReader& r) {
    detail::check_index_header(r, IndexKind::cosine);
    auto ids = detail::read_string_table(r);
    uint32_t dim = r.u32();
    if (dim == 0) throw FormatError("cosine index: zero dim");
    CosineIndex idx(dim);
    idx.table_ = WsiTable::from_ids(std::move(ids));
    uint32_t n_counts = r.u32();
    if (n_counts != idx.table_.size())
      throw FormatError("cosine index: patch count table mismatch");
    idx.patch_counts_.resize(n_counts);
    for (auto& c : idx.patch_counts_) c = r.u32();
    uint64_t n = r.u64();
    idx.entries_.reserve(n);
    idx.feats_.reserve(n * dim);
    for (uint64_t i = 0; i < n; ++i) {
      idx.entries_.push_back(detail::read_patch_entry(r, idx.table_.size()));
      for (uint32_t d = 0; d < dim; ++d) {
        float v = r.f32();
        if (!std::isfinite(v)) throw FormatError("cosine index: non-finite feature");
        idx.feats_.push_back(v);
      }
      idx.norms_.push_back(idx.l2_norm(idx.feats_.data() + i * dim));
    }
    if (r.remaining() != 0) throw FormatError("cosine index: trailing bytes");
    return idx;
  }

 private:
  uint32_t dim_;
  WsiTable table_;
  std::vector<PatchEntry> entries_;
  std::vector<float> feats_;
  std::vector<double> norms_;
  std::vector<uint32_t> patch_counts_;
};

// ---------------------------------------------------------------------------
// Histogram index: one visual-word histogram per WSI, chi-squared distance.
// ---------------------------------------------------------------------------

// sum (a-b)^2 / (a+b) over the L1-normalized histograms; bins both sides
// leave empty contribute 0.
inline double chi2_distance(const WordHistogram& a, const WordHistogram& b,
                            OpCounts* ops = nullptr) {
  if (a.counts.size() != b.counts.size())
    throw UsageError("chi2: histogram sizes differ");
  if (ops) ++ops->chi2;
  auto pa = a.normalized();
  auto pb = b.normalized();
  double d = 0.0;
  for (size_t i = 0; i < pa.size(); ++i) {
    double s = pa[i] + pb[i];
    if (s <= 0.0) continue;
    double diff = pa[i] - pb[i];
    d += diff * diff / s;
  }
  return d;
}

class HistogramIndex {
 public:
  explicit HistogramIndex(uint32_t k) : k_(k) {
    if (k == 0) throw UsageError("histogram index: k must be positive");
  }

  uint32_t k() const { return k_; }
  const WsiTable& wsis() const { return table_; }

  uint32_t add_wsi(const std::string& wsi_id, WordHistogram hist) {
    if (hist.counts.size() != k_)
      throw UsageError("histogram index: histogram size mismatch");
    if (hist.total == 0) throw DataError("histogram index: empty histogram");
    uint32_t idx = table_.add(wsi_id);
    hists_.push_back(std::move(hist));
    return idx;
  }

  const WordHistogram& histogram(uint32_t wsi_idx) const { return hists_.at(wsi_idx); }

  double distance(const WordHistogram& query, uint32_t wsi_idx,
                  OpCounts* ops = nullptr) const {
    return chi2_distance(query, hists_.at(wsi_idx), ops);
  }

  void serialize(ByteWriter& w) const {
    detail::write_index_header(w, IndexKind::histogram);
    detail::write_string_table(w, table_.ids());
    w.u32(k_);
    bool narrow = k_ <= 65536;
    for (const auto& h : hists_)
      for (uint32_t c : h.counts)
        if (c > 65535) narrow = false;
    w.u8(narrow ? 1 : 0);
    for (const auto& h : hists_) {
      uint32_t nnz = 0;
      for (uint32_t c : h.counts) nnz += c != 0 ? 1 : 0;
      w.u32(nnz);
      for (uint32_t i = 0; i < k_; ++i) {
        if (h.counts[i] == 0) continue;
        if (narrow) {
          w.u16(static_cast<uint16_t>(i));
          w.u16(static_cast<uint16_t>(h.counts[i]));
        } else {
          w.u32(i);
          w.u32(h.counts[i]);
        }
      }
    }
  }

  static HistogramIndex parse(ByteReader& r) {
    detail::check_index_header(r, IndexKind::histogram);
    auto ids = detail::read_string_table(r);
    uint32_t k = r.u32();
    if (k == 0) throw FormatError("histogram index: zero k");
    HistogramIndex idx(k);
    idx.table_ = WsiTable::from_ids(std::move(ids));
    uint8_t narrow = r.u8();
    if (narrow > 1) throw FormatError("histogram index: bad layout flag");
    for (uint32_t wi = 0; wi < idx.table_.size(); ++wi) {
      uint32_t nnz = r.u32();
      if (nnz > k) throw FormatError("histogram index: nnz exceeds k");
      WordHistogram h;
      h.counts.assign(k, 0);
      uint32_t prev = 0;
      for (uint32_t j = 0; j < nnz; ++j) {
        uint32_t word = narrow ? r.u16() : r.u32();
        uint32_t count = narrow ? r.u16() : r.u32();
        if (word >= k) throw FormatError("histogram index: word out of range");
        if (j > 0 && word <= prev) throw FormatError("histogram index: unsorted words");
        if (count == 0) throw FormatError("histogram index: zero count entry");
        prev = word;
        h.counts[word] = count;
        h.total += count;
      }
      if (h.total == 0) throw FormatError("histogram index: empty histogram");
      idx.hists_.push_back(std::move(h));
    }
    if (r.remaining() != 0) throw FormatError("histogram index: trailing bytes");
    return idx;
  }

 private:
  uint32_t k_;
  WsiTable table_;
  std::vector<WordHistogram> hists_;
};

// -- file helpers -----------------------------------------------------------

template <typename Index>
void write_index_file(const std::string& path, const Index& idx) {
  ByteWriter w;
  idx.serialize(w);
  write_file(path, w.data());
}

template <typename Index>
Index read_index_file(const std::string& path) {
  std::string bytes = read_file(path);
  ByteReader r(bytes);
  return Index::parse(r);
}

inline IndexKind peek_index_kind(const std::string& path) {
  std::string bytes = read_file(path);
  ByteReader r(bytes);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kIndexMagic, 4) != 0)
    throw FormatError("index: bad magic");
  uint8_t k = r.u8();
  if (k < 1 || k > 4) throw FormatError("index: unknown kind");
  return static_cast<IndexKind>(k);
}

}  // namespace hs
