#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hsearch/common.hpp"

namespace hs {

// van Emde Boas tree over a 2^universe_bits key universe.
//
// This is the original recursive structure: every key is materialized down to
// the leaf bitmasks, each node caches its min/max, and a node's summary tree
// tracks which clusters are occupied. Sub-trees are allocated lazily (only
// occupied clusters exist) and cluster tables are sorted arrays, which keeps
// it runnable, but each key still drags a chain of nodes through every
// recursion level; the structure is deliberately honest about that overhead.
//
// Probes (member / successor / predecessor) descend one level per call, so
// their recursion depth is bounded by the number of times universe_bits can
// halve before reaching a leaf: 5 for a 2^50 universe, 7 with slack.
class VebTree {
 public:
  struct ProbeStats {
    uint32_t depth = 0;  // max recursion frames entered by the last probe
  };

  static constexpr uint32_t kLeafBits = 6;  // universe <= 64 fits one word

  explicit VebTree(uint32_t universe_bits = 50) : bits_(universe_bits) {
    if (universe_bits == 0 || universe_bits > 63)
      throw UsageError("veb: universe_bits must be in [1, 63]");
    root_ = std::make_unique<Node>(static_cast<uint8_t>(universe_bits));
  }

  uint32_t universe_bits() const { return bits_; }
  uint64_t universe() const { return 1ull << bits_; }
  uint64_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  void insert(uint64_t key) {
    check(key);
    if (insert_rec(*root_, key)) ++size_;
  }

  bool erase(uint64_t key) {
    check(key);
    if (!member(key)) return false;
    erase_rec(*root_, key);
    --size_;
    return true;
  }

  bool member(uint64_t key, ProbeStats* stats = nullptr) const {
    check(key);
    uint32_t depth = 0;
    bool hit = member_rec(*root_, key, depth);
    if (stats) stats->depth = std::max(stats->depth, depth);
    return hit;
  }

  std::optional<uint64_t> successor(uint64_t key, ProbeStats* stats = nullptr) const {
    check(key);
    uint32_t depth = 0;
    auto r = successor_rec(*root_, key, depth);
    if (stats) stats->depth = std::max(stats->depth, depth);
    return r;
  }

  std::optional<uint64_t> predecessor(uint64_t key, ProbeStats* stats = nullptr) const {
    check(key);
    uint32_t depth = 0;
    auto r = predecessor_rec(*root_, key, depth);
    if (stats) stats->depth = std::max(stats->depth, depth);
    return r;
  }

  std::optional<uint64_t> min() const {
    if (root_->is_empty()) return std::nullopt;
    return root_->min_key;
  }

  std::optional<uint64_t> max() const {
    if (root_->is_empty()) return std::nullopt;
    return root_->max_key;
  }

  // -- structural accounting ------------------------------------------------

  uint64_t node_count() const { return count_nodes(*root_); }

  uint64_t slot_count() const { return count_slots(*root_); }

  // Bytes of the memory-faithful image: one 64-byte record per node plus one
  // 16-byte slot per cluster entry. This is what serialization emits.
  uint64_t image_bytes() const { return 64 * node_count() + 16 * slot_count(); }

  // Textbook footprint of a fully allocated tree over the same universe:
  //   S(u) = (sqrt(u) + 1) * S(sqrt(u)) + Theta(sqrt(u))
  // evaluated with this node layout (64-byte nodes, 16-byte slots) and the
  // uneven high/low split. Saturates at UINT64_MAX.
  static uint64_t dense_equivalent_bytes(uint32_t universe_bits) {
    unsigned __int128 v = dense_rec(universe_bits);
    const unsigned __int128 cap = static_cast<unsigned __int128>(UINT64_MAX);
    return v > cap ? UINT64_MAX : static_cast<uint64_t>(v);
  }

  // -- persistence ----------------------------------------------------------

  // Post-order node image; the root record is the final 64 bytes.
  void serialize_image(ByteWriter& w) const { write_node(w, *root_); }

  static VebTree parse_image(ByteReader& r, size_t image_size, uint32_t universe_bits) {
    if (image_size < 64 || image_size % 16 != 0)
      throw FormatError("veb image: bad size");
    size_t base = r.offset();
    VebTree t(universe_bits);
    uint64_t n = 0;
    t.root_ = read_node(r, base, image_size, image_size - 64, universe_bits, 0, n);
    t.size_ = n;
    r.seek(base + image_size);
    return t;
  }

 private:
  struct Node {
    uint64_t min_key = 1;  // min > max encodes the empty node
    uint64_t max_key = 0;
    uint64_t leaf_bits = 0;
    std::unique_ptr<Node> summary;
    std::vector<std::pair<uint32_t, std::unique_ptr<Node>>> clusters;  // sorted
    uint8_t bits;

    explicit Node(uint8_t b) : bits(b) {}

    bool is_empty() const { return min_key > max_key; }
    bool is_leaf() const { return bits <= kLeafBits; }
    uint32_t lo_bits() const { return bits >> 1; }
    uint32_t hi_bits() const { return bits - lo_bits(); }
    uint64_t lo_mask() const { return (1ull << lo_bits()) - 1; }

    Node* find(uint32_t h) const {
      auto it = std::lower_bound(clusters.begin(), clusters.end(), h,
                                 [](const auto& e, uint32_t v) { return e.first < v; });
      return (it != clusters.end() && it->first == h) ? it->second.get() : nullptr;
    }
  };

  void check(uint64_t key) const {
    if (bits_ < 64 && key >= (1ull << bits_))
      throw std::out_of_range("veb: key outside universe");
  }

  // Returns true if the key was new.
  static bool insert_rec(Node& node, uint64_t x) {
    if (node.is_leaf()) {
      uint64_t bit = 1ull << x;
      bool fresh = (node.leaf_bits & bit) == 0;
      node.leaf_bits |= bit;
      if (fresh) {
        if (node.is_empty()) {
          node.min_key = node.max_key = x;
        } else {
          node.min_key = std::min(node.min_key, x);
          node.max_key = std::max(node.max_key, x);
        }
      }
      return fresh;
    }
    uint32_t h = static_cast<uint32_t>(x >> node.lo_bits());
    uint64_t l = x & node.lo_mask();
    auto it = std::lower_bound(node.clusters.begin(), node.clusters.end(), h,
                               [](const auto& e, uint32_t v) { return e.first < v; });
    bool created = it == node.clusters.end() || it->first != h;
    if (created) {
      it = node.clusters.emplace(it, h, std::make_unique<Node>(
                                            static_cast<uint8_t>(node.lo_bits())));
    }
    bool fresh = insert_rec(*it->second, l);
    if (created) {
      if (!node.summary)
        node.summary = std::make_unique<Node>(static_cast<uint8_t>(node.hi_bits()));
      insert_rec(*node.summary, h);
    }
    if (fresh) {
      if (node.is_empty()) {
        node.min_key = node.max_key = x;
      } else {
        node.min_key = std::min(node.min_key, x);
        node.max_key = std::max(node.max_key, x);
      }
    }
    return fresh;
  }

  // Caller has checked membership, so the key is present.
  static void erase_rec(Node& node, uint64_t x) {
    if (node.is_leaf()) {
      node.leaf_bits &= ~(1ull << x);
      if (node.leaf_bits == 0) {
        node.min_key = 1;
        node.max_key = 0;
      } else {
        node.min_key = static_cast<uint64_t>(std::countr_zero(node.leaf_bits));
        node.max_key = static_cast<uint64_t>(63 - std::countl_zero(node.leaf_bits));
      }
      return;
    }
    uint32_t h = static_cast<uint32_t>(x >> node.lo_bits());
    uint64_t l = x & node.lo_mask();
    auto it = std::lower_bound(node.clusters.begin(), node.clusters.end(), h,
                               [](const auto& e, uint32_t v) { return e.first < v; });
    erase_rec(*it->second, l);
    if (it->second->is_empty()) {
      node.clusters.erase(it);
      erase_rec(*node.summary, h);
      if (node.summary->is_empty()) node.summary.reset();
    }
    if (node.clusters.empty()) {
      node.min_key = 1;
      node.max_key = 0;
    } else {
      uint64_t hmin = node.summary->min_key;
      uint64_t hmax = node.summary->max_key;
      node.min_key = (hmin << node.lo_bits()) | node.find(static_cast<uint32_t>(hmin))->min_key;
      node.max_key = (hmax << node.lo_bits()) | node.find(static_cast<uint32_t>(hmax))->max_key;
    }
  }

  static bool member_rec(const Node& node, uint64_t x, uint32_t& depth) {
    ++depth;
    if (node.is_empty() || x < node.min_key || x > node.max_key) return false;
    if (x == node.min_key || x == node.max_key) return true;
    if (node.is_leaf()) return (node.leaf_bits >> x) & 1;
    const Node* c = node.find(static_cast<uint32_t>(x >> node.lo_bits()));
    if (!c) return false;
    return member_rec(*c, x & node.lo_mask(), depth);
  }

  static std::optional<uint64_t> successor_rec(const Node& node, uint64_t x,
                                               uint32_t& depth) {
    ++depth;
    if (node.is_empty() || x >= node.max_key) return std::nullopt;
    if (x < node.min_key) return node.min_key;
    if (node.is_leaf()) {
      uint64_t above = x + 1 >= 64 ? 0 : node.leaf_bits >> (x + 1) << (x + 1);
      if (above == 0) return std::nullopt;
      return static_cast<uint64_t>(std::countr_zero(above));
    }
    uint32_t h = static_cast<uint32_t>(x >> node.lo_bits());
    uint64_t l = x & node.lo_mask();
    const Node* c = node.find(h);
    if (c && l < c->max_key) {
      auto lo = successor_rec(*c, l, depth);
      return (static_cast<uint64_t>(h) << node.lo_bits()) | *lo;
    }
    auto hsucc = successor_rec(*node.summary, h, depth);
    if (!hsucc) return std::nullopt;
    const Node* next = node.find(static_cast<uint32_t>(*hsucc));
    return (*hsucc << node.lo_bits()) | next->min_key;
  }

  static std::optional<uint64_t> predecessor_rec(const Node& node, uint64_t x,
                                                 uint32_t& depth) {
    ++depth;
    if (node.is_empty() || x <= node.min_key) return std::nullopt;
    if (x > node.max_key) return node.max_key;
    if (node.is_leaf()) {
      uint64_t below = node.leaf_bits & ((1ull << x) - 1);
      if (below == 0) return std::nullopt;
      return static_cast<uint64_t>(63 - std::countl_zero(below));
    }
    uint32_t h = static_cast<uint32_t>(x >> node.lo_bits());
    uint64_t l = x & node.lo_mask();
    const Node* c = node.find(h);
    if (c && l > c->min_key) {
      auto lo = predecessor_rec(*c, l, depth);
      return (static_cast<uint64_t>(h) << node.lo_bits()) | *lo;
    }
    auto hpred = predecessor_rec(*node.summary, h, depth);
    if (!hpred) return std::nullopt;
    const Node* prev = node.find(static_cast<uint32_t>(*hpred));
    return (*hpred << node.lo_bits()) | prev->max_key;
  }

  static uint64_t count_nodes(const Node& node) {
    uint64_t n = 1;
    if (node.summary) n += count_nodes(*node.summary);
    for (const auto& [idx, child] : node.clusters) n += count_nodes(*child);
    return n;
  }

  static uint64_t count_slots(const Node& node) {
    uint64_t n = node.clusters.size();
    if (node.summary) n += count_slots(*node.summary);
    for (const auto& [idx, child] : node.clusters) n += count_slots(*child);
    return n;
  }

  static unsigned __int128 dense_rec(uint32_t m) {
    if (m <= kLeafBits) return 64;
    uint32_t lo = m >> 1;
    uint32_t hi = m - lo;
    unsigned __int128 nclusters = static_cast<unsigned __int128>(1) << hi;
    return 64 + nclusters * (16 + dense_rec(lo)) + dense_rec(hi);
  }

  // Post-order: children and slot table first, then the 64-byte record.
  // Returns the record's offset relative to the start of the image.
  static uint64_t write_node(ByteWriter& w, const Node& node) {
    uint64_t summary_off = 0;
    bool has_summary = node.summary != nullptr;
    if (has_summary) summary_off = write_node(w, *node.summary);
    std::vector<uint64_t> child_off(node.clusters.size());
    for (size_t i = 0; i < node.clusters.size(); ++i)
      child_off[i] = write_node(w, *node.clusters[i].second);
    uint64_t slots_off = w.size();
    for (size_t i = 0; i < node.clusters.size(); ++i) {
      w.u32(node.clusters[i].first);
      w.u32(0);
      w.u64(child_off[i]);
    }
    uint64_t rec_off = w.size();
    w.u8(node.bits);
    w.u8(has_summary ? 1 : 0);
    w.u16(0);
    w.u32(static_cast<uint32_t>(node.clusters.size()));
    w.u64(node.min_key);
    w.u64(node.max_key);
    w.u64(node.leaf_bits);
    w.u64(summary_off);
    w.u64(node.clusters.empty() ? 0 : slots_off);
    w.u64(0);
    w.u64(0);
    return rec_off;
  }

  static std::unique_ptr<Node> read_node(ByteReader& r, size_t base, size_t image_size,
                                         uint64_t rec_off, uint32_t want_bits,
                                         uint32_t level, uint64_t& keys) {
    if (level > 16) throw FormatError("veb image: recursion too deep");
    if (rec_off + 64 > image_size) throw FormatError("veb image: record out of range");
    r.seek(base + rec_off);
    uint8_t bits = r.u8();
    uint8_t flags = r.u8();
    r.u16();
    uint32_t n_clusters = r.u32();
    auto node = std::make_unique<Node>(bits);
    node->min_key = r.u64();
    node->max_key = r.u64();
    node->leaf_bits = r.u64();
    uint64_t summary_off = r.u64();
    uint64_t slots_off = r.u64();
    r.u64();
    r.u64();
    if (bits != want_bits) throw FormatError("veb image: universe mismatch");
    if (node->is_leaf()) {
      if (n_clusters != 0 || (flags & 1)) throw FormatError("veb image: leaf with children");
      if (node->leaf_bits != 0) {
        uint64_t lo = static_cast<uint64_t>(std::countr_zero(node->leaf_bits));
        uint64_t hi = static_cast<uint64_t>(63 - std::countl_zero(node->leaf_bits));
        if (node->min_key != lo || node->max_key != hi)
          throw FormatError("veb image: leaf min/max mismatch");
        keys += static_cast<uint64_t>(std::popcount(node->leaf_bits));
      } else if (!node->is_empty()) {
        throw FormatError("veb image: empty leaf with keys");
      }
      return node;
    }
    if ((flags & 1) != (n_clusters != 0 ? 1 : 0))
      throw FormatError("veb image: summary/cluster mismatch");
    if (n_clusters != 0) {
      if (slots_off + 16ull * n_clusters > image_size)
        throw FormatError("veb image: slots out of range");
      std::vector<std::pair<uint32_t, uint64_t>> slots(n_clusters);
      r.seek(base + slots_off);
      for (auto& s : slots) {
        s.first = r.u32();
        r.u32();
        s.second = r.u64();
      }
      for (size_t i = 1; i < slots.size(); ++i)
        if (slots[i - 1].first >= slots[i].first)
          throw FormatError("veb image: unsorted clusters");
      uint64_t ignored = 0;
      node->summary = read_node(r, base, image_size, summary_off,
                                bits - (bits >> 1), level + 1, ignored);
      for (const auto& [idx, off] : slots) {
        node->clusters.emplace_back(
            idx, read_node(r, base, image_size, off, bits >> 1, level + 1, keys));
      }
    }
    return node;
  }

  uint32_t bits_;
  uint64_t size_ = 0;
  std::unique_ptr<Node> root_;
};

// Walks successor/predecessor chains outward from `key`, yielding member keys
// in order of |key - candidate|; ties resolve to the smaller key. The walk is
// lazy so callers can stop at any budget.
class VebNeighborWalk {
 public:
  VebNeighborWalk(const VebTree& tree, uint64_t key, VebTree::ProbeStats* stats = nullptr)
      : tree_(tree), key_(key), stats_(stats) {
    if (tree_.member(key, stats_)) {
      next_ = key;
      have_next_ = true;
    }
    succ_ = tree_.successor(key, stats_);
    pred_ = tree_.predecessor(key, stats_);
  }

  std::optional<uint64_t> next() {
    if (have_next_) {
      have_next_ = false;
      return next_;
    }
    if (succ_ && pred_) {
      uint64_t ds = *succ_ - key_;
      uint64_t dp = key_ - *pred_;
      return dp <= ds ? take_pred() : take_succ();
    }
    if (succ_) return take_succ();
    if (pred_) return take_pred();
    return std::nullopt;
  }

 private:
  uint64_t take_succ() {
    uint64_t v = *succ_;
    succ_ = tree_.successor(v, stats_);
    return v;
  }

  uint64_t take_pred() {
    uint64_t v = *pred_;
    pred_ = tree_.predecessor(v, stats_);
    return v;
  }

  const VebTree& tree_;
  uint64_t key_;
  VebTree::ProbeStats* stats_;
  std::optional<uint64_t> succ_;
  std::optional<uint64_t> pred_;
  uint64_t next_ = 0;
  bool have_next_ = false;
};

// Up to T member keys nearest to `key` by integer distance, nearest first.
inline std::vector<uint64_t> veb_neighbor_candidates(const VebTree& tree, uint64_t key,
                                                     uint32_t t,
                                                     VebTree::ProbeStats* stats = nullptr) {
  std::vector<uint64_t> out;
  VebNeighborWalk walk(tree, key, stats);
  while (out.size() < t) {
    auto k = walk.next();
    if (!k) break;
    out.push_back(*k);
  }
  return out;
}

}  // namespace hs
