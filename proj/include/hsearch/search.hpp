#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hsearch/archive.hpp"
#include "hsearch/common.hpp"
#include "hsearch/encoding.hpp"
#include "hsearch/index.hpp"
#include "hsearch/mosaic.hpp"
#include "hsearch/ranking.hpp"
#include "hsearch/rng.hpp"
#include "hsearch/veb.hpp"

namespace hs {

// The seven engine configurations. The -r/-n suffixes toggle the post-search
// ranking stage: sish and retccl rank by default, yottixel_r adds ranking to
// the flat barcode pipeline, sish_n and retccl_n pool raw votes instead.
enum class EngineKind : uint8_t {
  bovw,
  yottixel,
  yottixel_r,
  sish,
  sish_n,
  retccl,
  retccl_n,
};

inline const char* engine_name(EngineKind k) {
  switch (k) {
    case EngineKind::bovw: return "bovw";
    case EngineKind::yottixel: return "yottixel";
    case EngineKind::yottixel_r: return "yottixel-r";
    case EngineKind::sish: return "sish";
    case EngineKind::sish_n: return "sish-n";
    case EngineKind::retccl: return "retccl";
    case EngineKind::retccl_n: return "retccl-n";
  }
  return "?";
}

inline EngineKind parse_engine(const std::string& s) {
  for (EngineKind k : {EngineKind::bovw, EngineKind::yottixel, EngineKind::yottixel_r,
                       EngineKind::sish, EngineKind::sish_n, EngineKind::retccl,
                       EngineKind::retccl_n})
    if (s == engine_name(k)) return k;
  throw UsageError("unknown engine: " + s);
}

inline std::vector<EngineKind> all_engines() {
  return {EngineKind::bovw,   EngineKind::yottixel, EngineKind::yottixel_r,
          EngineKind::sish,   EngineKind::sish_n,   EngineKind::retccl,
          EngineKind::retccl_n};
}

// True when the engine runs the ranking stage over patch evidence.
inline bool engine_ranks(EngineKind k) {
  return k == EngineKind::yottixel_r || k == EngineKind::sish ||
         k == EngineKind::retccl;
}

// True when retrieval is patch-evidence based (everything except the two
// WSI-to-WSI pipelines).
inline bool engine_patch_evidence(EngineKind k) {
  return k != EngineKind::bovw && k != EngineKind::yottixel;
}

struct EngineParams {
  MosaicParams mosaic;              // per-WSI seed applied during the build
  uint32_t dict_k = 2048;           // visual dictionary size
  uint32_t words_per_wsi = 4000;    // dictionary training words sampled per WSI
  uint32_t dict_train_cap = 8000;   // dictionary training pool cap
  uint32_t dict_max_iter = 50;      // dictionary fit iteration cap
  uint32_t codebook_train_cap = 20000;
  uint32_t bands = 10;
  uint32_t bits_per_band = 5;
  uint32_t patch_k = 5;             // neighbors kept per mosaic patch
  uint32_t walk_budget = 50;        // candidate entries per patch for the tree walk
  double p_min = 0.5;
  uint64_t seed = 0;
  uint32_t workers = 1;
};

namespace detail {

// Stream tags for deriving independent per-purpose seeds from the run seed.
inline constexpr uint64_t kMosaicStream = 0x1005A1C0;
inline constexpr uint64_t kDictSampleStream = 0xD1C70000;
inline constexpr uint64_t kDictPoolStream = 0xD1C7CA90;
inline constexpr uint64_t kDictFitStream = 0xD1C7F170;
inline constexpr uint64_t kCodebookPoolStream = 0xC0DEB00C;

}  // namespace detail

// Seed for one WSI's mosaic: a fixed function of the run seed and the WSI's
// manifest position, independent of build order or thread scheduling.
inline uint64_t mosaic_seed(uint64_t run_seed, uint32_t manifest_pos) {
  return mix_seed(run_seed, detail::kMosaicStream + manifest_pos);
}

// One engine's frozen in-memory index plus the archive metadata needed to
// serve queries without the manifest.
struct EngineIndex {
  EngineKind kind = EngineKind::yottixel;
  EngineParams params;
  std::vector<std::string> classes;
  std::vector<std::string> wsi_ids;       // index-table order
  std::vector<uint32_t> wsi_labels;       // label id per table position
  std::vector<std::string> wsi_patients;  // patient id per table position
  std::vector<uint32_t> manifest_pos;     // manifest position per table position

  std::optional<VisualDictionary> dict;
  std::optional<HistogramIndex> hist;
  std::optional<BarcodeIndex> barcode;
  std::optional<PoolingCodebook> codebook;
  std::optional<VebPatchIndex> veb;
  std::optional<CosineIndex> cosine;

  uint32_t wsi_count() const { return static_cast<uint32_t>(wsi_ids.size()); }

  std::optional<uint32_t> find_wsi(const std::string& id) const {
    for (uint32_t i = 0; i < wsi_ids.size(); ++i)
      if (wsi_ids[i] == id) return i;
    return std::nullopt;
  }
};

struct BuildResult {
  EngineIndex index;
  std::vector<std::string> failed;     // WSIs that could not be indexed
  double total_seconds = 0.0;          // whole build, shared fits included
  std::vector<double> per_wsi_seconds; // per indexed WSI, aligned to wsi_ids
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct MosaicPatches {
  std::vector<PatchRef> refs;
  std::vector<FeatureVector> features;
};

inline MosaicPatches mosaic_patches(const WsiFeatures& wsi, const Mosaic& mosaic) {
  MosaicPatches mp;
  mp.refs.reserve(mosaic.members.size());
  mp.features.reserve(mosaic.members.size());
  for (const auto& m : mosaic.members) {
    mp.refs.push_back(wsi.patches[m.patch_index]);
    mp.features.push_back(wsi.features[m.patch_index]);
  }
  return mp;
}

// Per-WSI dictionary training words: every feature when the WSI is small
// enough, otherwise a seeded sample without replacement.
inline std::vector<uint32_t> training_rows(size_t n, uint32_t cap, uint64_t seed) {
  std::vector<uint32_t> rows;
  if (n <= cap) {
    rows.resize(n);
    for (size_t i = 0; i < n; ++i) rows[i] = static_cast<uint32_t>(i);
  } else {
    Rng rng(seed);
    auto picked = rng.sample_indices(n, cap);
    rows.assign(picked.begin(), picked.end());
  }
  return rows;
}

}  // namespace detail

// Builds one engine's index over the archive (or the subset named in
// `include`). WSIs whose stores are missing, malformed, or empty are skipped
// and reported in BuildResult::failed.
inline BuildResult build_engine_index(const ArchiveManifest& m, EngineKind kind,
                                      const EngineParams& params,
                                      const std::vector<std::string>* include = nullptr) {
  auto t_start = std::chrono::steady_clock::now();
  BuildResult out;
  EngineIndex& idx = out.index;
  idx.kind = kind;
  idx.params = params;
  idx.classes = m.classes;

  std::unordered_map<std::string, uint32_t> class_id;
  for (uint32_t i = 0; i < m.classes.size(); ++i) class_id[m.classes[i]] = i;

  std::vector<uint32_t> positions;
  if (include) {
    for (const auto& id : *include) positions.push_back(m.index_of(id));
  } else {
    positions.resize(m.wsis.size());
    for (uint32_t i = 0; i < m.wsis.size(); ++i) positions[i] = i;
  }

  const bool needs_mosaic = engine_patch_evidence(kind) || kind == EngineKind::yottixel;

  struct Loaded {
    uint32_t pos = 0;
    detail::MosaicPatches mosaic;          // mosaic engines
    std::vector<FeatureVector> all_feats;  // bovw
    double seconds = 0.0;
  };
  std::vector<Loaded> loaded;

  for (uint32_t pos : positions) {
    const WsiRecord& rec = m.wsis[pos];
    auto t0 = std::chrono::steady_clock::now();
    try {
      WsiFeatures wsi = load_features(m, rec.wsi_id);
      Loaded l;
      l.pos = pos;
      if (needs_mosaic) {
        MosaicParams mp = params.mosaic;
        mp.seed = mosaic_seed(params.seed, pos);
        Mosaic mo = build_mosaic(wsi, mp, Stage1Feature::stain, params.workers);
        if (mo.members.empty()) throw DataError("mosaic: no members sampled");
        l.mosaic = detail::mosaic_patches(wsi, mo);
      } else {
        l.all_feats = std::move(wsi.features);
      }
      l.seconds = detail::seconds_since(t0);
      loaded.push_back(std::move(l));
    } catch (const DataError&) {
      out.failed.push_back(rec.wsi_id);
    }
  }

  if (kind == EngineKind::bovw) {
    if (loaded.empty()) throw DataError("index build: no usable WSIs");
    uint32_t dim = m.feature_dim;
    std::vector<float> pool;
    size_t pool_rows = 0;
    for (const auto& l : loaded) {
      auto rows = detail::training_rows(
          l.all_feats.size(), params.words_per_wsi,
          mix_seed(params.seed, detail::kDictSampleStream + l.pos));
      for (uint32_t r : rows) {
        pool.insert(pool.end(), l.all_feats[r].begin(), l.all_feats[r].end());
        ++pool_rows;
      }
    }
    if (pool_rows > params.dict_train_cap) {
      auto rows = detail::training_rows(pool_rows, params.dict_train_cap,
                                        mix_seed(params.seed, detail::kDictPoolStream));
      std::vector<float> capped;
      capped.reserve(static_cast<size_t>(params.dict_train_cap) * dim);
      for (uint32_t r : rows)
        capped.insert(capped.end(), pool.begin() + static_cast<size_t>(r) * dim,
                      pool.begin() + static_cast<size_t>(r + 1) * dim);
      pool = std::move(capped);
      pool_rows = params.dict_train_cap;
    }
    idx.dict = build_dictionary(pool, pool_rows, dim, params.dict_k,
                                mix_seed(params.seed, detail::kDictFitStream),
                                params.workers, params.dict_max_iter);
    idx.hist.emplace(idx.dict->k());
    for (auto& l : loaded) {
      auto t0 = std::chrono::steady_clock::now();
      idx.hist->add_wsi(m.wsis[l.pos].wsi_id, encode_bovw(*idx.dict, l.all_feats));
      l.seconds += detail::seconds_since(t0);
    }
  } else if (kind == EngineKind::yottixel || kind == EngineKind::yottixel_r) {
    idx.barcode.emplace(m.feature_dim - 1);
    for (auto& l : loaded) {
      auto t0 = std::chrono::steady_clock::now();
      std::vector<std::pair<PatchRef, Barcode>> coded;
      coded.reserve(l.mosaic.refs.size());
      for (size_t i = 0; i < l.mosaic.refs.size(); ++i)
        coded.emplace_back(l.mosaic.refs[i], minmax_barcode(l.mosaic.features[i]));
      idx.barcode->add_wsi(m.wsis[l.pos].wsi_id, coded);
      l.seconds += detail::seconds_since(t0);
    }
  } else if (kind == EngineKind::sish || kind == EngineKind::sish_n) {
    if (loaded.empty()) throw DataError("index build: no usable WSIs");
    std::vector<std::vector<float>> train;
    for (const auto& l : loaded)
      for (const auto& f : l.mosaic.features) train.push_back(f);
    if (train.size() > params.codebook_train_cap) {
      auto rows = detail::training_rows(train.size(), params.codebook_train_cap,
                                        mix_seed(params.seed, detail::kCodebookPoolStream));
      std::vector<std::vector<float>> capped;
      capped.reserve(rows.size());
      for (uint32_t r : rows) capped.push_back(std::move(train[r]));
      train = std::move(capped);
    }
    idx.codebook = fit_pooling_codebook(train, m.feature_dim, params.bands,
                                        params.bits_per_band);
    idx.veb.emplace(m.feature_dim - 1, idx.codebook->universe_bits());
    for (auto& l : loaded) {
      auto t0 = std::chrono::steady_clock::now();
      std::vector<std::tuple<PatchRef, uint64_t, Barcode>> coded;
      coded.reserve(l.mosaic.refs.size());
      for (size_t i = 0; i < l.mosaic.refs.size(); ++i)
        coded.emplace_back(l.mosaic.refs[i],
                           integer_code(*idx.codebook, l.mosaic.features[i]),
                           minmax_barcode(l.mosaic.features[i]));
      idx.veb->add_wsi(m.wsis[l.pos].wsi_id, coded);
      l.seconds += detail::seconds_since(t0);
    }
  } else {  // retccl / retccl_n
    idx.cosine.emplace(m.feature_dim);
    for (auto& l : loaded) {
      auto t0 = std::chrono::steady_clock::now();
      std::vector<std::pair<PatchRef, FeatureVector>> patches;
      patches.reserve(l.mosaic.refs.size());
      for (size_t i = 0; i < l.mosaic.refs.size(); ++i)
        patches.emplace_back(l.mosaic.refs[i], l.mosaic.features[i]);
      idx.cosine->add_wsi(m.wsis[l.pos].wsi_id, patches);
      l.seconds += detail::seconds_since(t0);
    }
  }

  for (const auto& l : loaded) {
    const WsiRecord& rec = m.wsis[l.pos];
    idx.wsi_ids.push_back(rec.wsi_id);
    idx.wsi_labels.push_back(class_id.at(rec.label));
    idx.wsi_patients.push_back(rec.patient_id);
    idx.manifest_pos.push_back(l.pos);
    out.per_wsi_seconds.push_back(l.seconds);
  }
  out.total_seconds = detail::seconds_since(t_start);
  return out;
}

// -- exact kNN over index entries -------------------------------------------

struct HammingHit {
  uint32_t distance = 0;
  uint32_t entry = 0;  // position in the index's entry order
};

// Exact k nearest entries by Hamming distance; ties keep insertion order.
// Entries of WSIs flagged in `excluded` are skipped without a comparison.
inline std::vector<HammingHit> knn_hamming(const BarcodeIndex& idx, const Barcode& q,
                                           uint32_t k,
                                           const std::vector<uint8_t>* excluded = nullptr,
                                           OpCounts* ops = nullptr) {
  if (q.bits != idx.code_bits()) throw UsageError("knn_hamming: code width mismatch");
  std::vector<HammingHit> hits;
  for (uint32_t i = 0; i < idx.entry_count(); ++i) {
    const auto& e = idx.entry(i);
    if (excluded && (*excluded)[e.entry.wsi]) continue;
    if (ops) ++ops->hamming;
    hits.push_back({e.code.hamming(q), i});
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const HammingHit& a, const HammingHit& b) {
                     return a.distance < b.distance;
                   });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

struct CosineHit {
  double similarity = 0.0;
  uint32_t entry = 0;
};

// Exact top-k by cosine similarity, descending; ties keep insertion order.
inline std::vector<CosineHit> knn_cosine(const CosineIndex& idx,
                                         const std::vector<float>& q, uint32_t k,
                                         const std::vector<uint8_t>* excluded = nullptr,
                                         OpCounts* ops = nullptr) {
  if (q.size() != idx.dim()) throw UsageError("knn_cosine: dimension mismatch");
  double qn = idx.l2_norm(q.data());
  if (qn == 0.0) throw UsageError("knn_cosine: zero query vector");
  std::vector<CosineHit> hits;
  for (uint32_t i = 0; i < idx.entry_count(); ++i) {
    if (excluded && (*excluded)[idx.entry(i).wsi]) continue;
    hits.push_back({idx.similarity(i, q.data(), qn, ops), i});
  }
  std::stable_sort(hits.begin(), hits.end(), [](const CosineHit& a, const CosineHit& b) {
    return a.similarity > b.similarity;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

struct Chi2Hit {
  double distance = 0.0;
  uint32_t wsi = 0;
};

// Exact k nearest WSI histograms by chi-squared distance, ascending.
inline std::vector<Chi2Hit> knn_chi2(const HistogramIndex& idx, const WordHistogram& q,
                                     uint32_t k,
                                     const std::vector<uint8_t>* excluded = nullptr,
                                     OpCounts* ops = nullptr) {
  std::vector<Chi2Hit> hits;
  for (uint32_t i = 0; i < idx.wsis().size(); ++i) {
    if (excluded && (*excluded)[i]) continue;
    hits.push_back({idx.distance(q, i, ops), i});
  }
  std::stable_sort(hits.begin(), hits.end(), [](const Chi2Hit& a, const Chi2Hit& b) {
    return a.distance < b.distance;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

// -- query serving ------------------------------------------------------------

enum class ExclusionMode : uint8_t { wsi, patient };

struct QueryOptions {
  uint32_t k = 5;
  ExclusionMode mode = ExclusionMode::wsi;
  bool trace = false;
  OpCounts* ops = nullptr;
  VebTree::ProbeStats* probe = nullptr;
};

struct WsiCandidate {
  std::string wsi_id;
  uint32_t label = 0;
  double score = 0.0;
};

struct WsiQueryResult {
  std::vector<WsiCandidate> candidates;  // best first
  ScoreKind score_kind = ScoreKind::distance;
  std::vector<PatchEvidence> evidence;   // patch-evidence engines only
  RankedOutcome ranked;                  // filled when the ranking stage ran
  bool has_ranked = false;
};

namespace detail {

// Exclusion flags over the index table for one query.
inline std::vector<uint8_t> exclusion_flags(const EngineIndex& idx,
                                            const std::string& query_wsi_id,
                                            const std::string& query_patient,
                                            ExclusionMode mode) {
  std::vector<uint8_t> ex(idx.wsi_count(), 0);
  for (uint32_t i = 0; i < idx.wsi_count(); ++i) {
    if (idx.wsi_ids[i] == query_wsi_id) ex[i] = 1;
    if (mode == ExclusionMode::patient && idx.wsi_patients[i] == query_patient) ex[i] = 1;
  }
  return ex;
}

inline void candidates_from_ranked(const EngineIndex& idx,
                                   const std::vector<RankedWsi>& ranked, uint32_t k,
                                   WsiQueryResult& out) {
  out.score_kind = ScoreKind::similarity;
  for (const auto& r : ranked) {
    if (out.candidates.size() == k) break;
    out.candidates.push_back({idx.wsi_ids[r.wsi], idx.wsi_labels[r.wsi], r.score});
  }
}

}  // namespace detail

// Top-k candidate WSIs for one query. The query WSI itself is always
// excluded; patient mode additionally excludes every WSI of its patient.
// Throws DataError when the query cannot be processed (benchmark failure).
inline WsiQueryResult wsi_topk(const EngineIndex& idx, const ArchiveManifest& m,
                               const std::string& query_wsi_id, const QueryOptions& opt) {
  if (opt.k == 0) throw UsageError("wsi_topk: k must be positive");
  uint32_t qpos = m.index_of(query_wsi_id);
  const WsiRecord& qrec = m.wsis[qpos];
  auto excluded = detail::exclusion_flags(idx, query_wsi_id, qrec.patient_id, opt.mode);
  bool any = false;
  for (uint8_t e : excluded) any |= e == 0;
  if (!any) throw DataError("wsi_topk: no candidates after exclusion");

  WsiFeatures wsi = load_features(m, query_wsi_id);
  uint32_t num_classes = static_cast<uint32_t>(idx.classes.size());
  WsiQueryResult out;

  if (idx.kind == EngineKind::bovw) {
    if (!idx.dict || !idx.hist) throw UsageError("wsi_topk: index missing bovw parts");
    WordHistogram qh = encode_bovw(*idx.dict, wsi.features);
    auto hits = knn_chi2(*idx.hist, qh, opt.k, &excluded, opt.ops);
    out.score_kind = ScoreKind::distance;
    for (const auto& h : hits)
      out.candidates.push_back({idx.wsi_ids[h.wsi], idx.wsi_labels[h.wsi], h.distance});
    return out;
  }

  // All remaining engines start from the query's mosaic.
  MosaicParams mp = idx.params.mosaic;
  mp.seed = mosaic_seed(idx.params.seed, qpos);
  Mosaic mo = build_mosaic(wsi, mp, Stage1Feature::stain, idx.params.workers);
  if (mo.members.empty()) throw DataError("wsi_topk: query mosaic is empty");
  auto mpc = detail::mosaic_patches(wsi, mo);

  if ((idx.kind == EngineKind::yottixel || idx.kind == EngineKind::yottixel_r) &&
      !idx.barcode)
    throw UsageError("wsi_topk: index missing barcode part");
  if ((idx.kind == EngineKind::sish || idx.kind == EngineKind::sish_n) &&
      (!idx.veb || !idx.codebook))
    throw UsageError("wsi_topk: index missing tree parts");
  if ((idx.kind == EngineKind::retccl || idx.kind == EngineKind::retccl_n) &&
      !idx.cosine)
    throw UsageError("wsi_topk: index missing cosine part");

  if (idx.kind == EngineKind::yottixel) {
    std::vector<Barcode> qcodes;
    qcodes.reserve(mpc.features.size());
    for (const auto& f : mpc.features) qcodes.push_back(minmax_barcode(f));
    struct Scored {
      double d;
      uint32_t wsi;
    };
    std::vector<Scored> scored;
    for (uint32_t i = 0; i < idx.wsi_count(); ++i) {
      if (excluded[i]) continue;
      scored.push_back({idx.barcode->wsi_distance(qcodes, i, opt.ops), i});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const Scored& a, const Scored& b) { return a.d < b.d; });
    out.score_kind = ScoreKind::distance;
    for (const auto& s : scored) {
      if (out.candidates.size() == opt.k) break;
      out.candidates.push_back({idx.wsi_ids[s.wsi], idx.wsi_labels[s.wsi], s.d});
    }
    return out;
  }

  // Patch-evidence engines: gather per-patch neighbor lists.
  ScoreKind ev_kind = ScoreKind::distance;
  for (uint32_t p = 0; p < mpc.features.size(); ++p) {
    PatchEvidence ev;
    ev.patch_index = p;
    if (idx.kind == EngineKind::yottixel_r) {
      Barcode q = minmax_barcode(mpc.features[p]);
      for (const auto& h : knn_hamming(*idx.barcode, q, idx.params.patch_k,
                                       &excluded, opt.ops)) {
        uint32_t w = idx.barcode->entry(h.entry).entry.wsi;
        ev.neighbors.push_back({w, idx.wsi_labels[w], static_cast<double>(h.distance)});
      }
    } else if (idx.kind == EngineKind::sish || idx.kind == EngineKind::sish_n) {
      Barcode q = minmax_barcode(mpc.features[p]);
      uint64_t key = integer_code(*idx.codebook, mpc.features[p]);
      auto cands = idx.veb->neighbors(key, idx.params.walk_budget, &excluded, opt.probe);
      struct Rescored {
        uint32_t d;
        size_t order;
        const VebPatchIndex::Coded* coded;
      };
      std::vector<Rescored> rescored;
      rescored.reserve(cands.size());
      for (size_t c = 0; c < cands.size(); ++c) {
        if (opt.ops) ++opt.ops->hamming;
        rescored.push_back({cands[c].coded->code.hamming(q), c, cands[c].coded});
      }
      std::stable_sort(rescored.begin(), rescored.end(),
                       [](const Rescored& a, const Rescored& b) { return a.d < b.d; });
      for (const auto& rs : rescored) {
        if (ev.neighbors.size() == idx.params.patch_k) break;
        uint32_t w = rs.coded->entry.wsi;
        ev.neighbors.push_back({w, idx.wsi_labels[w], static_cast<double>(rs.d)});
      }
    } else {  // retccl / retccl_n
      ev_kind = ScoreKind::similarity;
      for (const auto& h : knn_cosine(*idx.cosine, mpc.features[p], idx.params.patch_k,
                                      &excluded, opt.ops)) {
        uint32_t w = idx.cosine->entry(h.entry).wsi;
        ev.neighbors.push_back({w, idx.wsi_labels[w], h.similarity});
      }
    }
    if (!ev.neighbors.empty()) out.evidence.push_back(std::move(ev));
  }
  if (out.evidence.empty()) throw DataError("wsi_topk: no evidence retrieved");

  if (engine_ranks(idx.kind)) {
    auto rr = rank_evidence(out.evidence, num_classes, ev_kind, idx.params.p_min,
                            opt.trace);
    out.ranked = std::move(rr.outcome);
    out.has_ranked = true;
    detail::candidates_from_ranked(idx, rr.wsis, opt.k, out);
  } else {
    auto votes = pooled_wsi_votes(out.evidence, ev_kind);
    detail::candidates_from_ranked(idx, votes, opt.k, out);
  }
  return out;
}

// -- engine index persistence -------------------------------------------------

// File names under a common base path: "<base>.hsix" holds the searchable
// index; model sidecars ("<base>.dict.hsdc" / "<base>.codebook.hsdc") hold
// the fitted dictionary or codebook where the engine needs one.
inline std::string engine_index_path(const std::string& base) { return base + ".hsix"; }
inline std::string engine_dict_path(const std::string& base) {
  return base + ".dict.hsdc";
}
inline std::string engine_codebook_path(const std::string& base) {
  return base + ".codebook.hsdc";
}

inline void save_engine_index(const EngineIndex& idx, const std::string& base) {
  auto parent = std::filesystem::path(base).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  switch (idx.kind) {
    case EngineKind::bovw:
      if (!idx.hist || !idx.dict) throw UsageError("save: index missing bovw parts");
      write_index_file(engine_index_path(base), *idx.hist);
      write_file(engine_dict_path(base), serialize_dictionary(*idx.dict));
      break;
    case EngineKind::yottixel:
    case EngineKind::yottixel_r:
      if (!idx.barcode) throw UsageError("save: index missing barcode part");
      write_index_file(engine_index_path(base), *idx.barcode);
      break;
    case EngineKind::sish:
    case EngineKind::sish_n:
      if (!idx.veb || !idx.codebook) throw UsageError("save: index missing tree parts");
      write_index_file(engine_index_path(base), *idx.veb);
      write_file(engine_codebook_path(base), serialize_codebook(*idx.codebook));
      break;
    case EngineKind::retccl:
    case EngineKind::retccl_n:
      if (!idx.cosine) throw UsageError("save: index missing cosine part");
      write_index_file(engine_index_path(base), *idx.cosine);
      break;
  }
}

namespace detail {

// Archive metadata for the WSIs named by an index table, in table order.
inline void attach_archive_metadata(EngineIndex& idx, const ArchiveManifest& m,
                                    const std::vector<std::string>& table_ids) {
  std::unordered_map<std::string, uint32_t> class_id;
  for (uint32_t i = 0; i < m.classes.size(); ++i) class_id[m.classes[i]] = i;
  idx.classes = m.classes;
  for (const auto& id : table_ids) {
    uint32_t pos = m.index_of(id);
    idx.wsi_ids.push_back(id);
    idx.wsi_labels.push_back(class_id.at(m.wsis[pos].label));
    idx.wsi_patients.push_back(m.wsis[pos].patient_id);
    idx.manifest_pos.push_back(pos);
  }
}

}  // namespace detail

// Loads a saved engine index and rebinds it to the archive's metadata. The
// caller supplies the same EngineParams used at build time (the CLI passes
// its flags both times); WSIs named by the index must exist in the manifest.
inline EngineIndex load_engine_index(const ArchiveManifest& m, EngineKind kind,
                                     const EngineParams& params,
                                     const std::string& base) {
  EngineIndex idx;
  idx.kind = kind;
  idx.params = params;
  switch (kind) {
    case EngineKind::bovw: {
      idx.hist = read_index_file<HistogramIndex>(engine_index_path(base));
      idx.dict = parse_dictionary(read_file(engine_dict_path(base)));
      if (idx.dict->dim != m.feature_dim)
        throw DataError("load: dictionary dimension does not match archive");
      if (idx.dict->k() != idx.hist->k())
        throw DataError("load: dictionary and histogram sizes disagree");
      detail::attach_archive_metadata(idx, m, idx.hist->wsis().ids());
      break;
    }
    case EngineKind::yottixel:
    case EngineKind::yottixel_r: {
      idx.barcode = read_index_file<BarcodeIndex>(engine_index_path(base));
      if (idx.barcode->code_bits() != m.feature_dim - 1)
        throw DataError("load: barcode width does not match archive");
      detail::attach_archive_metadata(idx, m, idx.barcode->wsis().ids());
      break;
    }
    case EngineKind::sish:
    case EngineKind::sish_n: {
      idx.veb = read_index_file<VebPatchIndex>(engine_index_path(base));
      idx.codebook = parse_codebook(read_file(engine_codebook_path(base)));
      if (idx.codebook->dim != m.feature_dim)
        throw DataError("load: codebook dimension does not match archive");
      if (idx.veb->code_bits() != m.feature_dim - 1)
        throw DataError("load: barcode width does not match archive");
      if (idx.veb->universe_bits() != idx.codebook->universe_bits())
        throw DataError("load: tree universe does not match codebook");
      detail::attach_archive_metadata(idx, m, idx.veb->wsis().ids());
      break;
    }
    case EngineKind::retccl:
    case EngineKind::retccl_n: {
      idx.cosine = read_index_file<CosineIndex>(engine_index_path(base));
      if (idx.cosine->dim() != m.feature_dim)
        throw DataError("load: feature dimension does not match archive");
      detail::attach_archive_metadata(idx, m, idx.cosine->wsis().ids());
      break;
    }
  }
  return idx;
}

// Majority vote over the top-n candidates; frequency ties go to the label of
// the best-scored candidate among the tied labels.
inline uint32_t majority_vote(const WsiQueryResult& result, uint32_t n) {
  if (result.candidates.empty()) throw UsageError("majority_vote: empty result");
  size_t take = std::min<size_t>(n, result.candidates.size());
  struct Tally {
    uint32_t label;
    uint32_t count = 0;
    size_t first = 0;  // best (earliest) candidate position with this label
  };
  std::vector<Tally> tallies;
  for (size_t i = 0; i < take; ++i) {
    uint32_t label = result.candidates[i].label;
    Tally* t = nullptr;
    for (auto& cand : tallies)
      if (cand.label == label) t = &cand;
    if (!t) {
      tallies.push_back({label, 0, i});
      t = &tallies.back();
    }
    ++t->count;
  }
  const Tally* winner = &tallies.front();
  for (const auto& t : tallies)
    if (t.count > winner->count ||
        (t.count == winner->count && t.first < winner->first))
      winner = &t;
  return winner->label;
}

}  // namespace hs
