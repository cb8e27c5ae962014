#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "hsearch/rng.hpp"
#include "hsearch/veb.hpp"

using namespace hs;

namespace {

// Reference implementation over std::set.
std::optional<uint64_t> set_successor(const std::set<uint64_t>& s, uint64_t k) {
  auto it = s.upper_bound(k);
  if (it == s.end()) return std::nullopt;
  return *it;
}

std::optional<uint64_t> set_predecessor(const std::set<uint64_t>& s, uint64_t k) {
  auto it = s.lower_bound(k);
  if (it == s.begin()) return std::nullopt;
  return *std::prev(it);
}

std::vector<uint64_t> tree_keys(const VebTree& t) {
  std::vector<uint64_t> out;
  auto k = t.min();
  while (k) {
    out.push_back(*k);
    k = t.successor(*k);
  }
  return out;
}

}  // namespace

TEST_CASE("random inserts, erases, and probes agree with a sorted set") {
  const uint32_t bits = 16;
  VebTree tree(bits);
  std::set<uint64_t> oracle;
  Rng rng(404);

  for (int op = 0; op < 20000; ++op) {
    uint64_t key = rng.below(1ull << bits);
    switch (rng.below(4)) {
      case 0:
      case 1:
        tree.insert(key);
        oracle.insert(key);
        break;
      case 2:
        REQUIRE(tree.erase(key) == (oracle.erase(key) > 0));
        break;
      default:
        REQUIRE(tree.member(key) == (oracle.count(key) > 0));
    }
    REQUIRE(tree.size() == oracle.size());
  }

  REQUIRE(tree.min() == (oracle.empty()
                             ? std::nullopt
                             : std::optional<uint64_t>(*oracle.begin())));
  REQUIRE(tree.max() == (oracle.empty()
                             ? std::nullopt
                             : std::optional<uint64_t>(*oracle.rbegin())));
  for (int probe = 0; probe < 2000; ++probe) {
    uint64_t key = rng.below(1ull << bits);
    REQUIRE(tree.successor(key) == set_successor(oracle, key));
    REQUIRE(tree.predecessor(key) == set_predecessor(oracle, key));
  }
  REQUIRE(std::equal(oracle.begin(), oracle.end(), tree_keys(tree).begin()));
}

TEST_CASE("successor and predecessor are strict") {
  VebTree t(10);
  t.insert(5);
  REQUIRE(t.member(5));
  REQUIRE(!t.successor(5).has_value());
  REQUIRE(!t.predecessor(5).has_value());
  t.insert(7);
  REQUIRE(t.successor(5) == 7);
  REQUIRE(t.predecessor(7) == 5);
  REQUIRE(t.successor(0) == 5);
  REQUIRE(t.predecessor(1023) == 7);
}

TEST_CASE("probes on a 50-bit universe never recurse past depth 7") {
  VebTree t(50);
  Rng rng(77);
  std::vector<uint64_t> keys;
  for (int i = 0; i < 1000; ++i) {
    uint64_t k = rng.below(1ull << 50);
    t.insert(k);
    keys.push_back(k);
  }
  VebTree::ProbeStats stats;
  for (uint64_t k : keys) {
    REQUIRE(t.member(k, &stats));
    t.successor(k, &stats);
    t.predecessor(k, &stats);
  }
  for (int i = 0; i < 1000; ++i) t.successor(rng.below(1ull << 50), &stats);
  REQUIRE(stats.depth <= 7);
  REQUIRE(stats.depth >= 1);
}

TEST_CASE("keys outside the universe are rejected") {
  VebTree t(10);
  REQUIRE_THROWS_AS(t.insert(1024), std::out_of_range);
  REQUIRE_THROWS_AS(t.member(1ull << 40), std::out_of_range);
  REQUIRE_THROWS_AS(t.successor(1024), std::out_of_range);
  t.insert(1023);
  REQUIRE(t.member(1023));

  REQUIRE_THROWS_AS(VebTree(0), UsageError);
  REQUIRE_THROWS_AS(VebTree(64), UsageError);
  VebTree full(63);
  full.insert((1ull << 63) - 1);
  REQUIRE(full.member((1ull << 63) - 1));
}

TEST_CASE("structural accounting matches the serialized image") {
  VebTree t(50);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) t.insert(rng.below(1ull << 50));
  ByteWriter w;
  t.serialize_image(w);
  REQUIRE(w.size() == t.image_bytes());
  REQUIRE(t.image_bytes() == 64 * t.node_count() + 16 * t.slot_count());
}

TEST_CASE("image round trip preserves every key and every byte") {
  VebTree t(20);
  Rng rng(9);
  for (int i = 0; i < 500; ++i) t.insert(rng.below(1ull << 20));
  t.erase(*t.min());

  ByteWriter w;
  t.serialize_image(w);
  std::string image = w.take();
  ByteReader r(image);
  VebTree back = VebTree::parse_image(r, image.size(), 20);
  REQUIRE(back.size() == t.size());
  REQUIRE(tree_keys(back) == tree_keys(t));

  ByteWriter w2;
  back.serialize_image(w2);
  REQUIRE(w2.data() == image);
}

TEST_CASE("corrupted images are rejected") {
  VebTree t(12);
  for (uint64_t k : {3ull, 9ull, 700ull, 701ull, 4000ull}) t.insert(k);
  ByteWriter w;
  t.serialize_image(w);
  std::string image = w.take();

  SECTION("truncated") {
    ByteReader r(image);
    REQUIRE_THROWS_AS(VebTree::parse_image(r, image.size() + 64, 12), FormatError);
  }
  SECTION("wrong universe") {
    ByteReader r(image);
    REQUIRE_THROWS_AS(VebTree::parse_image(r, image.size(), 14), FormatError);
  }
  SECTION("leaf min disagrees with the bitmask") {
    // The root record sits in the final 64 bytes; a leaf-only tree of a
    // 6-bit universe makes the offsets easy to hit.
    VebTree leaf(6);
    leaf.insert(3);
    leaf.insert(9);
    ByteWriter lw;
    leaf.serialize_image(lw);
    std::string li = lw.take();
    li[li.size() - 56] = 4;  // min field, first byte
    ByteReader r(li);
    REQUIRE_THROWS_AS(VebTree::parse_image(r, li.size(), 6), FormatError);
  }
}

TEST_CASE("dense equivalent bytes follow the frozen recurrence values") {
  REQUIRE(VebTree::dense_equivalent_bytes(3) == 64);
  REQUIRE(VebTree::dense_equivalent_bytes(6) == 64);
  REQUIRE(VebTree::dense_equivalent_bytes(7) == 1408);
  REQUIRE(VebTree::dense_equivalent_bytes(8) == 1408);
  REQUIRE(VebTree::dense_equivalent_bytes(12) == 5248);
  REQUIRE(VebTree::dense_equivalent_bytes(13) == 11712);
  REQUIRE(VebTree::dense_equivalent_bytes(25) == 43134464ull);
  REQUIRE(VebTree::dense_equivalent_bytes(50) == 1447353019149888ull);
  // 63 bits overflows 64-bit arithmetic; the result saturates.
  REQUIRE(VebTree::dense_equivalent_bytes(63) == UINT64_MAX);
}

TEST_CASE("sparse occupancy stays far below the dense layout") {
  VebTree t(50);
  Rng rng(123);
  for (int i = 0; i < 2000; ++i) t.insert(rng.below(1ull << 50));
  REQUIRE(t.image_bytes() < VebTree::dense_equivalent_bytes(50) / 1000000);
}

TEST_CASE("neighbor walk yields members by integer distance, ties low") {
  VebTree t(12);
  for (uint64_t k : {10ull, 14ull, 15ull, 20ull, 26ull}) t.insert(k);

  SECTION("from a member key") {
    auto got = veb_neighbor_candidates(t, 15, 10);
    REQUIRE(got == std::vector<uint64_t>{15, 14, 10, 20, 26});
  }
  SECTION("from a gap, equidistant pair prefers the smaller key") {
    // 12 is 2 away from both 10 and 14.
    auto got = veb_neighbor_candidates(t, 12, 3);
    REQUIRE(got == std::vector<uint64_t>{10, 14, 15});
  }
  SECTION("budget cuts the walk short") {
    auto got = veb_neighbor_candidates(t, 0, 2);
    REQUIRE(got == std::vector<uint64_t>{10, 14});
  }
  SECTION("empty tree yields nothing") {
    VebTree e(12);
    REQUIRE(veb_neighbor_candidates(e, 5, 4).empty());
  }
}

TEST_CASE("neighbor walk agrees with a brute-force sort on random sets") {
  Rng rng(55);
  for (int inst = 0; inst < 20; ++inst) {
    VebTree t(14);
    std::set<uint64_t> keys;
    for (int i = 0; i < 60; ++i) {
      uint64_t k = rng.below(1ull << 14);
      t.insert(k);
      keys.insert(k);
    }
    uint64_t q = rng.below(1ull << 14);
    auto got = veb_neighbor_candidates(t, q, 25);

    std::vector<uint64_t> all(keys.begin(), keys.end());
    std::stable_sort(all.begin(), all.end(), [&](uint64_t a, uint64_t b) {
      uint64_t da = a > q ? a - q : q - a;
      uint64_t db = b > q ? b - q : q - b;
      if (da != db) return da < db;
      return a < b;
    });
    all.resize(std::min<size_t>(25, all.size()));
    REQUIRE(got == all);
  }
}
