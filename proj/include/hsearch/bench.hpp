#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "hsearch/archive.hpp"
#include "hsearch/common.hpp"
#include "hsearch/index.hpp"
#include "hsearch/search.hpp"

namespace hs {

// -- metrics ------------------------------------------------------------------

struct MetricsReport {
  std::vector<double> per_class_f1;
  double macro = 0.0;
  double std_dev = 0.0;  // population std across classes
  std::vector<std::vector<uint64_t>> confusion;  // [true][predicted]
};

// Per-class F1 from a square confusion matrix; 0/0 ratios collapse to 0.
inline MetricsReport macro_f1(const std::vector<std::vector<uint64_t>>& confusion) {
  size_t c = confusion.size();
  if (c < 2) throw UsageError("macro_f1: need at least 2 classes");
  for (const auto& row : confusion)
    if (row.size() != c) throw UsageError("macro_f1: matrix not square");

  MetricsReport rep;
  rep.confusion = confusion;
  rep.per_class_f1.resize(c, 0.0);
  for (size_t i = 0; i < c; ++i) {
    uint64_t tp = confusion[i][i];
    uint64_t row = 0, col = 0;
    for (size_t j = 0; j < c; ++j) {
      row += confusion[i][j];
      col += confusion[j][i];
    }
    double precision = col == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(col);
    double recall = row == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(row);
    double denom = precision + recall;
    rep.per_class_f1[i] = denom == 0.0 ? 0.0 : 2.0 * precision * recall / denom;
  }
  for (double f : rep.per_class_f1) rep.macro += f;
  rep.macro /= static_cast<double>(c);
  double var = 0.0;
  for (double f : rep.per_class_f1) var += (f - rep.macro) * (f - rep.macro);
  rep.std_dev = std::sqrt(var / static_cast<double>(c));
  return rep;
}

struct TimingReport {
  double index_total_s = 0.0;   // whole index build, shared model fits included
  double index_mean_s = 0.0;    // mean per-WSI indexing time
  double search_mean_s = 0.0;   // mean per-query time (median over repetitions)
  uint32_t failures = 0;        // queries that could not be evaluated
};

struct BenchRun {
  MetricsReport top1, mv3, mv5;
  TimingReport timing;
  uint32_t queries_total = 0;
  uint32_t queries_evaluated = 0;
};

struct BenchOpts {
  ExclusionMode mode = ExclusionMode::wsi;
  uint32_t k = 5;             // candidates retrieved per query (MV@5 needs 5)
  uint32_t timing_reps = 3;   // per-query repetitions; median is recorded
  bool no_timing = false;     // single rep, timing fields left zero
  uint32_t folds = 5;         // bovw cross-validation folds
};

namespace detail {

struct QueryTally {
  std::vector<std::vector<uint64_t>> top1, mv3, mv5;
  std::vector<double> search_s;
  uint32_t failures = 0;
  uint32_t total = 0;

  explicit QueryTally(size_t c)
      : top1(c, std::vector<uint64_t>(c, 0)),
        mv3(c, std::vector<uint64_t>(c, 0)),
        mv5(c, std::vector<uint64_t>(c, 0)) {}
};

// Runs one query with repetitions, records the median wall-clock, and scores
// the predictions. Failures are tallied, not propagated.
inline void run_query(const EngineIndex& idx, const ArchiveManifest& m,
                      const std::string& wsi_id, uint32_t true_label,
                      const BenchOpts& opts, QueryTally& tally) {
  ++tally.total;
  QueryOptions qopt;
  qopt.k = opts.k;
  qopt.mode = opts.mode;
  uint32_t reps = opts.no_timing ? 1 : std::max(1u, opts.timing_reps);
  std::vector<double> times;
  times.reserve(reps);
  WsiQueryResult res;
  try {
    for (uint32_t r = 0; r < reps; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      res = wsi_topk(idx, m, wsi_id, qopt);
      times.push_back(seconds_since(t0));
    }
  } catch (const DataError&) {
    ++tally.failures;
    return;
  }
  std::sort(times.begin(), times.end());
  tally.search_s.push_back(times[times.size() / 2]);
  ++tally.top1[true_label][majority_vote(res, 1)];
  ++tally.mv3[true_label][majority_vote(res, 3)];
  ++tally.mv5[true_label][majority_vote(res, 5)];
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline BenchRun finish_run(const QueryTally& tally, double index_total_s,
                           const std::vector<double>& per_wsi_s, bool no_timing) {
  BenchRun run;
  run.top1 = macro_f1(tally.top1);
  run.mv3 = macro_f1(tally.mv3);
  run.mv5 = macro_f1(tally.mv5);
  run.timing.failures = tally.failures;
  if (!no_timing) {
    run.timing.index_total_s = index_total_s;
    run.timing.index_mean_s = mean_of(per_wsi_s);
    run.timing.search_mean_s = mean_of(tally.search_s);
  }
  run.queries_total = tally.total;
  run.queries_evaluated = tally.total - tally.failures;
  return run;
}

}  // namespace detail

// Leave-one-out protocol: the index is built once over the whole archive and
// each query excludes itself (and its patient's WSIs in patient mode) at
// query time. Every WSI is queried once; failed queries are excluded from
// the metric denominators and counted.
inline BenchRun run_leave_one_out(const ArchiveManifest& m, EngineKind kind,
                                  const EngineParams& params, const BenchOpts& opts) {
  if (kind == EngineKind::bovw)
    throw UsageError("leave-one-out does not apply to bovw; use the fold protocol");
  if (opts.mode == ExclusionMode::patient && m.patients.size() < 2)
    throw UsageError("patient mode needs at least 2 patients");

  BuildResult br = build_engine_index(m, kind, params);
  std::unordered_map<std::string, uint32_t> class_id;
  for (uint32_t i = 0; i < m.classes.size(); ++i) class_id[m.classes[i]] = i;

  detail::QueryTally tally(m.classes.size());
  for (const auto& rec : m.wsis)
    detail::run_query(br.index, m, rec.wsi_id, class_id.at(rec.label), opts, tally);
  return detail::finish_run(tally, br.total_seconds, br.per_wsi_seconds,
                            opts.no_timing);
}

namespace detail {

// Patient-grouped, class-stratified fold assignment: patients are grouped by
// their majority class (ties to the smaller class id), ordered by id within
// each class, and dealt round-robin into folds. Returns fold id per patient.
inline std::map<std::string, uint32_t> assign_folds(const ArchiveManifest& m,
                                                    uint32_t folds) {
  std::unordered_map<std::string, uint32_t> class_id;
  for (uint32_t i = 0; i < m.classes.size(); ++i) class_id[m.classes[i]] = i;

  std::map<std::string, std::vector<uint32_t>> patient_counts;
  for (const auto& rec : m.wsis) {
    auto& counts = patient_counts[rec.patient_id];
    counts.resize(m.classes.size(), 0);
    ++counts[class_id.at(rec.label)];
  }
  std::vector<std::vector<std::string>> by_class(m.classes.size());
  for (const auto& [patient, counts] : patient_counts) {
    uint32_t best = 0;
    for (uint32_t c = 1; c < counts.size(); ++c)
      if (counts[c] > counts[best]) best = c;
    by_class[best].push_back(patient);
  }
  std::map<std::string, uint32_t> fold_of;
  for (auto& patients : by_class) {
    std::sort(patients.begin(), patients.end());
    for (size_t i = 0; i < patients.size(); ++i)
      fold_of[patients[i]] = static_cast<uint32_t>(i % folds);
  }
  return fold_of;
}

}  // namespace detail

// Cross-validation protocol for bovw: the dictionary must not see the query,
// so each fold trains its own dictionary and index on the other folds'
// patients and queries the held-out fold. Folds never split a patient.
inline BenchRun run_cross_validation(const ArchiveManifest& m,
                                     const EngineParams& params, const BenchOpts& opts) {
  if (opts.folds < 2) throw UsageError("cross-validation needs at least 2 folds");
  if (m.patients.size() < opts.folds)
    throw UsageError("cross-validation needs at least as many patients as folds");

  auto fold_of = detail::assign_folds(m, opts.folds);
  std::unordered_map<std::string, uint32_t> class_id;
  for (uint32_t i = 0; i < m.classes.size(); ++i) class_id[m.classes[i]] = i;

  detail::QueryTally tally(m.classes.size());
  double index_total_s = 0.0;
  std::vector<double> per_wsi_s;
  for (uint32_t f = 0; f < opts.folds; ++f) {
    std::vector<std::string> train_ids;
    std::vector<const WsiRecord*> test;
    for (const auto& rec : m.wsis) {
      if (fold_of.at(rec.patient_id) == f)
        test.push_back(&rec);
      else
        train_ids.push_back(rec.wsi_id);
    }
    if (test.empty()) continue;
    if (train_ids.empty()) {
      tally.total += static_cast<uint32_t>(test.size());
      tally.failures += static_cast<uint32_t>(test.size());
      continue;
    }
    BuildResult br;
    try {
      br = build_engine_index(m, EngineKind::bovw, params, &train_ids);
    } catch (const DataError&) {
      tally.total += static_cast<uint32_t>(test.size());
      tally.failures += static_cast<uint32_t>(test.size());
      continue;
    }
    index_total_s += br.total_seconds;
    per_wsi_s.insert(per_wsi_s.end(), br.per_wsi_seconds.begin(),
                     br.per_wsi_seconds.end());
    for (const WsiRecord* rec : test)
      detail::run_query(br.index, m, rec->wsi_id, class_id.at(rec->label), opts, tally);
  }
  return detail::finish_run(tally, index_total_s, per_wsi_s, opts.no_timing);
}

// Protocol dispatch: bovw runs fold-based cross-validation (its dictionary is
// a global fit), everything else runs leave-one-out with query-time exclusion.
inline BenchRun run_engine_benchmark(const ArchiveManifest& m, EngineKind kind,
                                     const EngineParams& params, const BenchOpts& opts) {
  if (kind == EngineKind::bovw) return run_cross_validation(m, params, opts);
  return run_leave_one_out(m, kind, params, opts);
}

// -- storage ------------------------------------------------------------------

struct StorageReport {
  uint64_t actual_bytes = 0;
  double per_wsi_bytes = 0.0;
  uint64_t dense_equivalent_bytes = 0;  // tree-backed indexes only, else 0
  double extrapolated_bytes = 0.0;      // per_wsi_bytes * 1e6, the 10^6-WSI estimate
};

// Serialized size of the searchable index. Shared model sidecars (dictionary,
// codebook) are fixed-size fits, not per-WSI payload, and are excluded.
inline StorageReport storage_report(const EngineIndex& idx) {
  ByteWriter w;
  switch (idx.kind) {
    case EngineKind::bovw: idx.hist->serialize(w); break;
    case EngineKind::yottixel:
    case EngineKind::yottixel_r: idx.barcode->serialize(w); break;
    case EngineKind::sish:
    case EngineKind::sish_n: idx.veb->serialize(w); break;
    case EngineKind::retccl:
    case EngineKind::retccl_n: idx.cosine->serialize(w); break;
  }
  StorageReport rep;
  rep.actual_bytes = w.size();
  if (idx.wsi_count() > 0)
    rep.per_wsi_bytes = static_cast<double>(rep.actual_bytes) /
                        static_cast<double>(idx.wsi_count());
  if (idx.veb)
    rep.dense_equivalent_bytes =
        VebTree::dense_equivalent_bytes(idx.veb->universe_bits());
  rep.extrapolated_bytes = rep.per_wsi_bytes * 1e6;
  return rep;
}

// -- composite rating -----------------------------------------------------------

// Competition ranks: 1 + the number of strictly better values; ties share the
// smaller rank.
inline std::vector<double> rank_values(const std::vector<double>& values,
                                       bool higher_better) {
  std::vector<double> ranks(values.size(), 1.0);
  for (size_t i = 0; i < values.size(); ++i) {
    uint32_t better = 0;
    for (size_t j = 0; j < values.size(); ++j) {
      if (j == i) continue;
      bool j_better = higher_better ? values[j] > values[i] : values[j] < values[i];
      if (j_better) ++better;
    }
    ranks[i] = 1.0 + better;
  }
  return ranks;
}

struct RatingColumn {
  std::string metric;
  bool higher_better = false;
  std::vector<double> values;  // one per engine
  std::vector<double> ranks;
};

struct RatingTable {
  std::vector<std::string> engines;
  std::vector<RatingColumn> columns;
  std::vector<double> composite;  // mean rank per engine
};

// Direction-aware rank table over the given metric columns; the composite is
// the unweighted mean of each engine's ranks.
inline RatingTable overall_rating(const std::vector<std::string>& engines,
                                  std::vector<RatingColumn> columns) {
  RatingTable table;
  table.engines = engines;
  for (auto& col : columns) {
    if (col.values.size() != engines.size())
      throw UsageError("rating: column " + col.metric + " has missing values");
    col.ranks = rank_values(col.values, col.higher_better);
    table.columns.push_back(std::move(col));
  }
  table.composite.assign(engines.size(), 0.0);
  if (!table.columns.empty()) {
    for (size_t e = 0; e < engines.size(); ++e) {
      double s = 0.0;
      for (const auto& col : table.columns) s += col.ranks[e];
      table.composite[e] = s / static_cast<double>(table.columns.size());
    }
  }
  return table;
}

// Standard column set: accuracy columns always; timing columns only when
// timing ran; failures and storage always.
inline RatingTable standard_rating(const std::vector<std::string>& engines,
                                   const std::vector<BenchRun>& runs,
                                   const std::vector<StorageReport>& storage,
                                   bool no_timing) {
  if (runs.size() != engines.size() || storage.size() != engines.size())
    throw UsageError("rating: per-engine inputs misaligned");
  auto col = [&](const std::string& name, bool higher,
                 auto&& get) {
    RatingColumn c;
    c.metric = name;
    c.higher_better = higher;
    for (size_t i = 0; i < runs.size(); ++i) c.values.push_back(get(i));
    return c;
  };
  std::vector<RatingColumn> cols;
  cols.push_back(col("f1_top1", true, [&](size_t i) { return runs[i].top1.macro; }));
  cols.push_back(col("f1_mv3", true, [&](size_t i) { return runs[i].mv3.macro; }));
  cols.push_back(col("f1_mv5", true, [&](size_t i) { return runs[i].mv5.macro; }));
  if (!no_timing) {
    cols.push_back(col("index_total_s", false,
                       [&](size_t i) { return runs[i].timing.index_total_s; }));
    cols.push_back(col("search_mean_s", false,
                       [&](size_t i) { return runs[i].timing.search_mean_s; }));
  }
  cols.push_back(col("failures", false, [&](size_t i) {
    return static_cast<double>(runs[i].timing.failures);
  }));
  cols.push_back(col("per_wsi_bytes", false,
                     [&](size_t i) { return storage[i].per_wsi_bytes; }));
  return overall_rating(engines, std::move(cols));
}

}  // namespace hs
