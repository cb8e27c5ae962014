#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsearch/common.hpp"

namespace hs {

enum class ScoreKind : uint8_t { distance, similarity };

// True when a beats b under the given direction. Strict.
inline bool score_better(double a, double b, ScoreKind kind) {
  return kind == ScoreKind::similarity ? a > b : a < b;
}

struct RankNeighbor {
  uint32_t wsi = 0;
  uint32_t label = 0;
  double score = 0.0;
};

// Evidence for one query mosaic patch: its retrieved neighbors, best first.
struct PatchEvidence {
  uint32_t patch_index = 0;
  std::vector<RankNeighbor> neighbors;
};

struct RankedOutcome {
  uint32_t label = 0;
  std::vector<uint32_t> surviving;      // indices into the input evidence set
  std::vector<double> weights;          // parallel to `surviving`
  std::vector<std::string> trace;       // JSON lines, one per stage (optional)
};

struct RankedWsi {
  uint32_t wsi = 0;
  double score = 0.0;     // weighted support (ranked) or raw votes (pooled)
  double best_raw = 0.0;  // best underlying neighbor score for this WSI
};

namespace detail {

struct Majority {
  uint32_t label = 0;
  double prob = 0.0;
  double best_score = 0.0;  // best score among neighbors carrying `label`
};

// Most frequent label; frequency ties go to the label of the best-scored
// neighbor among the tied labels, then to the smaller label id.
inline Majority majority_label(const std::vector<RankNeighbor>& neighbors,
                               ScoreKind kind) {
  struct Tally {
    uint32_t label;
    uint32_t count = 0;
    double best = 0.0;
    bool seen = false;
  };
  std::vector<Tally> tallies;
  for (const auto& n : neighbors) {
    Tally* t = nullptr;
    for (auto& cand : tallies)
      if (cand.label == n.label) t = &cand;
    if (!t) {
      tallies.push_back({n.label, 0, 0.0, false});
      t = &tallies.back();
    }
    ++t->count;
    if (!t->seen || score_better(n.score, t->best, kind)) {
      t->best = n.score;
      t->seen = true;
    }
  }
  const Tally* winner = &tallies.front();
  for (const auto& t : tallies) {
    if (t.count > winner->count) {
      winner = &t;
    } else if (t.count == winner->count && &t != winner) {
      if (score_better(t.best, winner->best, kind) ||
          (t.best == winner->best && t.label < winner->label))
        winner = &t;
    }
  }
  return {winner->label, static_cast<double>(winner->count) / neighbors.size(),
          winner->best};
}

inline double best_score(const std::vector<RankNeighbor>& neighbors, ScoreKind kind) {
  double best = neighbors.front().score;
  for (const auto& n : neighbors)
    if (score_better(n.score, best, kind)) best = n.score;
  return best;
}

inline double mean_score(const std::vector<RankNeighbor>& neighbors) {
  double s = 0.0;
  for (const auto& n : neighbors) s += n.score;
  return s / static_cast<double>(neighbors.size());
}

}  // namespace detail

// w = 1 - H / ln C over the empirical label distribution of the neighbors.
// Unanimous evidence gets 1; evidence uniform over all C classes gets 0.
inline double weighted_uncertainty(const std::vector<RankNeighbor>& neighbors,
                                   uint32_t num_classes) {
  if (neighbors.empty()) throw UsageError("ranking: empty evidence");
  if (num_classes < 2) throw UsageError("ranking: need at least 2 classes");
  std::vector<std::pair<uint32_t, uint32_t>> counts;
  for (const auto& n : neighbors) {
    bool found = false;
    for (auto& [label, c] : counts)
      if (label == n.label) {
        ++c;
        found = true;
      }
    if (!found) counts.emplace_back(n.label, 1);
  }
  double h = 0.0;
  double total = static_cast<double>(neighbors.size());
  for (const auto& [label, c] : counts) {
    double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  double w = 1.0 - h / std::log(static_cast<double>(num_classes));
  return std::clamp(w, 0.0, 1.0);
}

// Outlier cleaning. A patch is dropped when its best score is strictly worse
// than the mean of all patches' best scores by more than one population
// standard deviation; the globally best patch can never cross that threshold,
// so at least one patch survives. Surviving patches then drop neighbors
// strictly worse than their own mean neighbor score.
inline std::vector<PatchEvidence> clean(const std::vector<PatchEvidence>& evidence,
                                        ScoreKind kind,
                                        std::vector<std::string>* trace = nullptr) {
  if (evidence.empty()) throw UsageError("ranking: empty evidence set");
  for (const auto& ev : evidence)
    if (ev.neighbors.empty()) throw UsageError("ranking: patch with no neighbors");
  std::vector<double> best(evidence.size());
  for (size_t i = 0; i < evidence.size(); ++i)
    best[i] = detail::best_score(evidence[i].neighbors, kind);
  double mean = 0.0;
  for (double b : best) mean += b;
  mean /= static_cast<double>(best.size());
  double var = 0.0;
  for (double b : best) var += (b - mean) * (b - mean);
  var /= static_cast<double>(best.size());
  double sigma = std::sqrt(var);
  double threshold = kind == ScoreKind::similarity ? mean - sigma : mean + sigma;

  std::vector<PatchEvidence> out;
  std::vector<uint32_t> kept, dropped;
  for (size_t i = 0; i < evidence.size(); ++i) {
    if (score_better(threshold, best[i], kind)) {
      dropped.push_back(static_cast<uint32_t>(i));
      continue;
    }
    kept.push_back(static_cast<uint32_t>(i));
    PatchEvidence ev;
    ev.patch_index = evidence[i].patch_index;
    double mn = detail::mean_score(evidence[i].neighbors);
    for (const auto& n : evidence[i].neighbors)
      if (!score_better(mn, n.score, kind)) ev.neighbors.push_back(n);
    out.push_back(std::move(ev));
  }
  if (trace) {
    nlohmann::ordered_json j;
    j["stage"] = "clean";
    j["mean_best"] = mean;
    j["sigma"] = sigma;
    j["kept"] = kept;
    j["dropped"] = dropped;
    trace->push_back(j.dump());
  }
  return out;
}

// Keeps patches whose majority-label probability reaches p_min; when none
// qualify, the single highest-probability patch (lowest index on ties) stays.
inline std::vector<PatchEvidence> filter_by_prediction(
    const std::vector<PatchEvidence>& evidence, ScoreKind kind, double p_min = 0.5,
    std::vector<std::string>* trace = nullptr) {
  if (evidence.empty()) throw UsageError("ranking: empty evidence set");
  std::vector<double> probs(evidence.size());
  for (size_t i = 0; i < evidence.size(); ++i)
    probs[i] = detail::majority_label(evidence[i].neighbors, kind).prob;
  std::vector<PatchEvidence> out;
  std::vector<uint32_t> kept;
  for (size_t i = 0; i < evidence.size(); ++i) {
    if (probs[i] >= p_min) {
      kept.push_back(static_cast<uint32_t>(i));
      out.push_back(evidence[i]);
    }
  }
  if (out.empty()) {
    size_t arg = 0;
    for (size_t i = 1; i < evidence.size(); ++i)
      if (probs[i] > probs[arg]) arg = i;
    kept.push_back(static_cast<uint32_t>(arg));
    out.push_back(evidence[arg]);
  }
  if (trace) {
    nlohmann::ordered_json j;
    j["stage"] = "filter";
    j["p_min"] = p_min;
    j["majority_prob"] = probs;
    j["kept"] = kept;
    trace->push_back(j.dump());
  }
  return out;
}

// Full pipeline: clean, filter, weight, then pick the label with the largest
// weighted support. Label ties go to the label backed by the best underlying
// neighbor score, then to the smaller label id.
inline RankedOutcome rank_and_label(const std::vector<PatchEvidence>& evidence,
                                    uint32_t num_classes, ScoreKind kind,
                                    double p_min = 0.5, bool want_trace = false) {
  RankedOutcome outcome;
  std::vector<std::string>* trace = want_trace ? &outcome.trace : nullptr;
  auto cleaned = clean(evidence, kind, trace);
  auto filtered = filter_by_prediction(cleaned, kind, p_min, trace);

  // Map the surviving evidence back to input positions by patch_index.
  std::vector<uint32_t> pos_of_patch;
  for (size_t i = 0; i < evidence.size(); ++i) {
    if (evidence[i].patch_index >= pos_of_patch.size())
      pos_of_patch.resize(evidence[i].patch_index + 1, UINT32_MAX);
    pos_of_patch[evidence[i].patch_index] = static_cast<uint32_t>(i);
  }

  struct LabelScore {
    uint32_t label;
    double support = 0.0;
    double best = 0.0;
    bool seen = false;
  };
  std::vector<LabelScore> scores;
  for (const auto& ev : filtered) {
    double w = weighted_uncertainty(ev.neighbors, num_classes);
    outcome.surviving.push_back(pos_of_patch[ev.patch_index]);
    outcome.weights.push_back(w);
    auto m = detail::majority_label(ev.neighbors, kind);
    LabelScore* ls = nullptr;
    for (auto& s : scores)
      if (s.label == m.label) ls = &s;
    if (!ls) {
      scores.push_back({m.label, 0.0, 0.0, false});
      ls = &scores.back();
    }
    ls->support += w;
    if (!ls->seen || score_better(m.best_score, ls->best, kind)) {
      ls->best = m.best_score;
      ls->seen = true;
    }
  }
  const LabelScore* winner = &scores.front();
  for (const auto& s : scores) {
    if (s.support > winner->support) {
      winner = &s;
    } else if (s.support == winner->support && &s != winner) {
      if (score_better(s.best, winner->best, kind) ||
          (s.best == winner->best && s.label < winner->label))
        winner = &s;
    }
  }
  outcome.label = winner->label;
  if (want_trace) {
    nlohmann::ordered_json jw;
    jw["stage"] = "weights";
    jw["patch"] = outcome.surviving;
    jw["weight"] = outcome.weights;
    outcome.trace.push_back(jw.dump());
    nlohmann::ordered_json jl;
    jl["stage"] = "label";
    jl["label"] = outcome.label;
    nlohmann::ordered_json support = nlohmann::ordered_json::object();
    for (const auto& s : scores) support[std::to_string(s.label)] = s.support;
    jl["support"] = support;
    outcome.trace.push_back(jl.dump());
  }
  return outcome;
}

// Plain majority over every pooled neighbor, the no-ranking contrast. Ties go
// to the label of the best-scored neighbor among the tied labels.
inline uint32_t pooled_label(const std::vector<PatchEvidence>& evidence,
                             ScoreKind kind) {
  std::vector<RankNeighbor> pooled;
  for (const auto& ev : evidence)
    pooled.insert(pooled.end(), ev.neighbors.begin(), ev.neighbors.end());
  if (pooled.empty()) throw UsageError("ranking: empty evidence set");
  return detail::majority_label(pooled, kind).label;
}

namespace detail {

inline void sort_ranked_wsis(std::vector<RankedWsi>& wsis, ScoreKind kind) {
  std::sort(wsis.begin(), wsis.end(), [kind](const RankedWsi& a, const RankedWsi& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.best_raw != b.best_raw) return score_better(a.best_raw, b.best_raw, kind);
    return a.wsi < b.wsi;
  });
}

}  // namespace detail

// WSI ordering from ranked evidence: each surviving neighbor contributes its
// patch's weight to its WSI. Ties by best raw neighbor score, then WSI order.
inline std::vector<RankedWsi> rank_wsis(const std::vector<PatchEvidence>& evidence,
                                        uint32_t num_classes, ScoreKind kind,
                                        double p_min = 0.5) {
  auto cleaned = clean(evidence, kind);
  auto filtered = filter_by_prediction(cleaned, kind, p_min);
  std::vector<RankedWsi> wsis;
  auto slot = [&wsis](uint32_t w) -> RankedWsi& {
    for (auto& r : wsis)
      if (r.wsi == w) return r;
    wsis.push_back({w, 0.0, 0.0});
    return wsis.back();
  };
  std::vector<uint8_t> seen;
  for (const auto& ev : filtered) {
    double weight = weighted_uncertainty(ev.neighbors, num_classes);
    for (const auto& n : ev.neighbors) {
      RankedWsi& r = slot(n.wsi);
      if (n.wsi >= seen.size()) seen.resize(n.wsi + 1, 0);
      bool first = !seen[n.wsi];
      seen[n.wsi] = 1;
      r.score += weight;
      if (first || score_better(n.score, r.best_raw, kind)) r.best_raw = n.score;
    }
  }
  detail::sort_ranked_wsis(wsis, kind);
  return wsis;
}

// rank_and_label plus the WSI ordering aggregated from the same surviving
// evidence, so query serving gets a consistent pair.
struct RankedRetrieval {
  RankedOutcome outcome;
  std::vector<RankedWsi> wsis;
};

inline RankedRetrieval rank_evidence(const std::vector<PatchEvidence>& evidence,
                                     uint32_t num_classes, ScoreKind kind,
                                     double p_min = 0.5, bool want_trace = false) {
  RankedRetrieval rr;
  rr.outcome = rank_and_label(evidence, num_classes, kind, p_min, want_trace);
  std::vector<uint8_t> in(evidence.size(), 0);
  for (uint32_t pos : rr.outcome.surviving) in[pos] = 1;

  auto slot = [&rr](uint32_t w) -> RankedWsi& {
    for (auto& r : rr.wsis)
      if (r.wsi == w) return r;
    rr.wsis.push_back({w, 0.0, 0.0});
    return rr.wsis.back();
  };
  std::vector<uint8_t> seen;
  // Rebuild the survivors' neighbor sets exactly as the pipeline saw them.
  auto cleaned = clean(evidence, kind);
  auto filtered = filter_by_prediction(cleaned, kind, p_min);
  size_t wi = 0;
  for (const auto& ev : filtered) {
    double weight = rr.outcome.weights[wi++];
    for (const auto& n : ev.neighbors) {
      RankedWsi& r = slot(n.wsi);
      if (n.wsi >= seen.size()) seen.resize(n.wsi + 1, 0);
      bool first = !seen[n.wsi];
      seen[n.wsi] = 1;
      r.score += weight;
      if (first || score_better(n.score, r.best_raw, kind)) r.best_raw = n.score;
    }
  }
  detail::sort_ranked_wsis(rr.wsis, kind);
  return rr;
}

// WSI ordering without ranking: one raw vote per pooled neighbor.
inline std::vector<RankedWsi> pooled_wsi_votes(const std::vector<PatchEvidence>& evidence,
                                               ScoreKind kind) {
  std::vector<RankedWsi> wsis;
  auto slot = [&wsis](uint32_t w) -> RankedWsi& {
    for (auto& r : wsis)
      if (r.wsi == w) return r;
    wsis.push_back({w, 0.0, 0.0});
    return wsis.back();
  };
  std::vector<uint8_t> seen;
  for (const auto& ev : evidence) {
    for (const auto& n : ev.neighbors) {
      RankedWsi& r = slot(n.wsi);
      if (n.wsi >= seen.size()) seen.resize(n.wsi + 1, 0);
      bool first = !seen[n.wsi];
      seen[n.wsi] = 1;
      r.score += 1.0;
      if (first || score_better(n.score, r.best_raw, kind)) r.best_raw = n.score;
    }
  }
  if (wsis.empty()) throw UsageError("ranking: empty evidence set");
  detail::sort_ranked_wsis(wsis, kind);
  return wsis;
}

}  // namespace hs
