#pragma once

// Command line front end: synth / index / search / bench / report.
//
// Exit codes: 0 success (and --help), 1 usage fault, 2 data fault. All
// output is JSON on stdout unless a table is requested; ranking traces go
// to stderr as JSON lines.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hsearch/archive.hpp"
#include "hsearch/bench.hpp"
#include "hsearch/common.hpp"
#include "hsearch/search.hpp"

namespace hs {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline uint32_t default_workers() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

inline ExclusionMode parse_mode(const std::string& s) {
  if (s == "wsi") return ExclusionMode::wsi;
  if (s == "patient") return ExclusionMode::patient;
  throw UsageError("unknown exclusion mode '" + s + "' (expected wsi|patient)");
}

// Shared engine knobs; every option writes straight into EngineParams.
inline void add_engine_options(CLI::App* cmd, EngineParams& p) {
  cmd->add_option("--k-color", p.mosaic.k_color, "stage-1 clusters per WSI");
  cmd->add_option("--sampling-rate", p.mosaic.sampling_rate,
                  "mosaic fraction kept per cluster");
  cmd->add_option("--spatial-k", p.mosaic.spatial_k,
                  "stage-2 clusters per color cluster (0 = auto)");
  cmd->add_option("--min-per-cluster", p.mosaic.min_per_cluster,
                  "mosaic floor per cluster");
  cmd->add_option("--dict-k", p.dict_k, "visual dictionary size");
  cmd->add_option("--words-per-wsi", p.words_per_wsi,
                  "dictionary training patches sampled per WSI");
  cmd->add_option("--dict-train-cap", p.dict_train_cap,
                  "pooled dictionary training cap");
  cmd->add_option("--dict-max-iter", p.dict_max_iter,
                  "dictionary refinement iteration cap");
  cmd->add_option("--codebook-train-cap", p.codebook_train_cap,
                  "pooled codebook training cap");
  cmd->add_option("--bands", p.bands, "integer code bands");
  cmd->add_option("--bits-per-band", p.bits_per_band, "bits per band");
  cmd->add_option("--patch-k", p.patch_k, "neighbors kept per query patch");
  cmd->add_option("--walk-budget", p.walk_budget,
                  "tree neighbor candidates per probe");
  cmd->add_option("--p-min", p.p_min, "ranking prediction-confidence floor");
}

inline ordered_json metrics_json(const MetricsReport& m) {
  ordered_json j;
  j["macro"] = m.macro;
  j["std"] = m.std_dev;
  j["per_class"] = m.per_class_f1;
  j["confusion"] = m.confusion;
  return j;
}

inline ordered_json storage_json(const StorageReport& s) {
  ordered_json j;
  j["actual_bytes"] = s.actual_bytes;
  j["per_wsi_bytes"] = s.per_wsi_bytes;
  if (s.dense_equivalent_bytes != 0)
    j["dense_equivalent_bytes"] = s.dense_equivalent_bytes;
  j["extrapolated_bytes"] = s.extrapolated_bytes;
  return j;
}

inline ordered_json rating_json(const RatingTable& t) {
  ordered_json j;
  j["engines"] = t.engines;
  j["columns"] = ordered_json::array();
  for (const auto& c : t.columns) {
    ordered_json col;
    col["metric"] = c.metric;
    col["higher_better"] = c.higher_better;
    col["values"] = c.values;
    col["ranks"] = c.ranks;
    j["columns"].push_back(std::move(col));
  }
  j["composite"] = t.composite;
  return j;
}

inline std::string fmt_double(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// Plain-text view of a bench report document. Reads the JSON rather than the
// in-memory structs so `report --format table` can re-render a saved file.
inline std::string render_bench_table(const ordered_json& doc) {
  if (!doc.contains("engines") || !doc.contains("rating"))
    throw DataError("report: document has no engine results");
  const auto& engines = doc["engines"];
  const auto& composite = doc["rating"]["composite"];
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"engine", "f1@1", "f1@mv3", "f1@mv5", "t_idx(s)", "q(ms)",
                  "fail", "KB/wsi", "R*"});
  for (size_t i = 0; i < engines.size(); ++i) {
    const auto& e = engines[i];
    std::vector<std::string> row;
    row.push_back(e["engine"].get<std::string>());
    row.push_back(fmt_double(e["f1_top1"]["macro"].get<double>(), 3));
    row.push_back(fmt_double(e["f1_mv3"]["macro"].get<double>(), 3));
    row.push_back(fmt_double(e["f1_mv5"]["macro"].get<double>(), 3));
    if (e.contains("timing")) {
      row.push_back(fmt_double(e["timing"]["index_total_s"].get<double>(), 1));
      row.push_back(
          fmt_double(e["timing"]["search_mean_s"].get<double>() * 1e3, 2));
    } else {
      row.push_back("-");
      row.push_back("-");
    }
    row.push_back(std::to_string(e["failures"].get<uint64_t>()));
    row.push_back(
        fmt_double(e["storage"]["per_wsi_bytes"].get<double>() / 1024.0, 2));
    row.push_back(fmt_double(composite[i].get<double>(), 2));
    rows.push_back(std::move(row));
  }
  std::vector<size_t> width(rows[0].size(), 0);
  for (const auto& row : rows)
    for (size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], row[c].size());
  std::string text;
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) {
      if (c) text += "  ";
      text += row[c];
      if (c + 1 < row.size()) text.append(width[c] - row[c].size(), ' ');
    }
    text += '\n';
  }
  return text;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommand bodies.
// ---------------------------------------------------------------------------

namespace detail {

struct SynthArgs {
  std::string out;
  SynthSpec spec;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  ArchiveManifest m = generate_synthetic_archive(a.spec, a.out);
  ordered_json j;
  j["command"] = "synth";
  j["archive"] = a.out;
  j["classes"] = m.classes;
  j["wsis"] = m.wsis.size();
  j["patients"] = static_cast<uint64_t>(a.spec.num_classes) *
                  a.spec.patients_per_class;
  j["patches_per_wsi"] = static_cast<uint64_t>(a.spec.grid_w) * a.spec.grid_h;
  j["feature_dim"] = m.feature_dim;
  j["stain_bins"] = m.stain_bins;
  j["seed"] = a.spec.seed;
  out << j.dump(2) << "\n";
  return 0;
}

struct IndexArgs {
  std::string archive, engine, out;
  EngineParams params;
  bool no_timing = false;
};

inline int cmd_index(const IndexArgs& a, std::ostream& out) {
  ArchiveManifest m = load_manifest(std::filesystem::path(a.archive) /
                                    "archive.json");
  EngineKind kind = parse_engine(a.engine);
  BuildResult br = build_engine_index(m, kind, a.params);
  save_engine_index(br.index, a.out);
  ordered_json j;
  j["command"] = "index";
  j["engine"] = engine_name(kind);
  j["archive"] = a.archive;
  j["out"] = a.out;
  ordered_json files = ordered_json::array();
  files.push_back(engine_index_path(a.out));
  if (br.index.dict) files.push_back(engine_dict_path(a.out));
  if (br.index.codebook) files.push_back(engine_codebook_path(a.out));
  j["files"] = std::move(files);
  j["wsis_indexed"] = br.index.wsi_count();
  j["failed"] = br.failed;
  j["storage"] = storage_json(storage_report(br.index));
  if (!a.no_timing) j["build_seconds"] = br.total_seconds;
  out << j.dump(2) << "\n";
  return 0;
}

struct SearchArgs {
  std::string archive, engine, query, index_base, mode = "wsi";
  uint32_t k = 5;
  bool trace = false;
  EngineParams params;
};

inline int cmd_search(const SearchArgs& a, std::ostream& out,
                      std::ostream& err) {
  ArchiveManifest m = load_manifest(std::filesystem::path(a.archive) /
                                    "archive.json");
  EngineKind kind = parse_engine(a.engine);
  EngineIndex idx;
  if (!a.index_base.empty()) {
    idx = load_engine_index(m, kind, a.params, a.index_base);
  } else {
    BuildResult br = build_engine_index(m, kind, a.params);
    idx = std::move(br.index);
  }
  QueryOptions opt;
  opt.k = a.k;
  opt.mode = parse_mode(a.mode);
  opt.trace = a.trace;
  WsiQueryResult res = wsi_topk(idx, m, a.query, opt);
  if (a.trace && res.has_ranked)
    for (const auto& line : res.ranked.trace) err << line << "\n";

  ordered_json j;
  j["command"] = "search";
  j["engine"] = engine_name(kind);
  j["query"] = a.query;
  j["mode"] = a.mode;
  j["k"] = a.k;
  j["score_kind"] =
      res.score_kind == ScoreKind::distance ? "distance" : "similarity";
  ordered_json cands = ordered_json::array();
  for (const auto& c : res.candidates) {
    ordered_json jc;
    jc["wsi_id"] = c.wsi_id;
    jc["label"] = idx.classes.at(c.label);
    jc["score"] = c.score;
    cands.push_back(std::move(jc));
  }
  j["candidates"] = std::move(cands);
  j["top1"] = idx.classes.at(majority_vote(res, 1));
  j["mv3"] = idx.classes.at(majority_vote(res, 3));
  j["mv5"] = idx.classes.at(majority_vote(res, 5));
  if (res.has_ranked) j["ranked_label"] = idx.classes.at(res.ranked.label);
  out << j.dump(2) << "\n";
  return 0;
}

struct BenchArgs {
  std::string archive, mode = "wsi", out_file, format = "json";
  std::vector<std::string> engines;
  uint32_t k = 5;
  uint32_t timing_reps = 3;
  bool no_timing = false;
  EngineParams params;
};

inline int cmd_bench(const BenchArgs& a, std::ostream& out) {
  ArchiveManifest m = load_manifest(std::filesystem::path(a.archive) /
                                    "archive.json");
  ValidationReport vr = validate_archive(m);
  if (!vr.ok()) {
    std::string msg = "archive validation failed:";
    for (const auto& e : vr.entries)
      msg += "\n  [" + e.fault + "] " +
             (e.wsi_id.empty() ? std::string("<archive>") : e.wsi_id) + ": " +
             e.detail;
    throw DataError(msg);
  }

  std::vector<EngineKind> kinds;
  if (a.engines.empty()) {
    kinds = all_engines();
  } else {
    for (const auto& name : a.engines) {
      EngineKind k = parse_engine(name);
      if (std::find(kinds.begin(), kinds.end(), k) != kinds.end())
        throw UsageError("duplicate engine '" + name + "'");
      kinds.push_back(k);
    }
  }

  BenchOpts opts;
  opts.mode = parse_mode(a.mode);
  opts.k = a.k;
  opts.timing_reps = a.timing_reps;
  opts.no_timing = a.no_timing;

  std::vector<std::string> names;
  std::vector<BenchRun> runs;
  std::vector<StorageReport> storage;
  ordered_json jengines = ordered_json::array();
  for (EngineKind kind : kinds) {
    BenchRun run = run_engine_benchmark(m, kind, a.params, opts);
    // Storage is measured on a full-archive build regardless of protocol, so
    // bovw folds and leave-one-out report the same deployable index size.
    BuildResult full = build_engine_index(m, kind, a.params);
    StorageReport sr = storage_report(full.index);

    ordered_json je;
    je["engine"] = engine_name(kind);
    je["queries_total"] = run.queries_total;
    je["queries_evaluated"] = run.queries_evaluated;
    je["failures"] = run.timing.failures;
    je["f1_top1"] = metrics_json(run.top1);
    je["f1_mv3"] = metrics_json(run.mv3);
    je["f1_mv5"] = metrics_json(run.mv5);
    je["storage"] = storage_json(sr);
    if (!a.no_timing) {
      ordered_json jt;
      jt["index_total_s"] = run.timing.index_total_s;
      jt["index_mean_s"] = run.timing.index_mean_s;
      jt["search_mean_s"] = run.timing.search_mean_s;
      je["timing"] = std::move(jt);
    }
    jengines.push_back(std::move(je));
    names.push_back(engine_name(kind));
    runs.push_back(std::move(run));
    storage.push_back(sr);
  }

  ordered_json j;
  j["command"] = "bench";
  j["archive"] = a.archive;
  j["mode"] = a.mode;
  j["k"] = a.k;
  j["seed"] = a.params.seed;
  j["engines"] = std::move(jengines);
  j["rating"] = rating_json(standard_rating(names, runs, storage, a.no_timing));

  std::string text = j.dump(2) + "\n";
  if (!a.out_file.empty()) {
    std::ofstream f(a.out_file, std::ios::binary);
    if (!f) throw DataError("cannot write report file: " + a.out_file);
    f << text;
  }
  if (a.format == "table")
    out << render_bench_table(j);
  else
    out << text;
  return 0;
}

struct ReportArgs {
  std::string in, format = "table";
};

inline int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::string bytes = read_file(a.in);
  ordered_json doc;
  try {
    doc = ordered_json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: invalid JSON: ") + e.what());
  }
  if (a.format == "table")
    out << render_bench_table(doc);
  else
    out << doc.dump(2) << "\n";
  return 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry point. `args` excludes the program name.
// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"patch-level retrieval over gigapixel image archives"};
  app.name("hsearch");
  app.require_subcommand(1);

  uint64_t seed = 0;
  uint32_t workers = detail::default_workers();
  app.add_option("--seed", seed, "run seed, drives every random choice")
      ->capture_default_str();
  app.add_option("--workers", workers, "worker threads")
      ->capture_default_str();

  detail::SynthArgs synth;
  CLI::App* cs = app.add_subcommand("synth", "generate a synthetic archive");
  cs->add_option("--out", synth.out, "archive directory")->required();
  cs->add_option("--classes", synth.spec.num_classes, "number of classes");
  cs->add_option("--wsis-per-class", synth.spec.wsis_per_class, "WSIs per class");
  cs->add_option("--patients-per-class", synth.spec.patients_per_class,
                 "patients per class");
  cs->add_option("--grid-w", synth.spec.grid_w, "patch grid width");
  cs->add_option("--grid-h", synth.spec.grid_h, "patch grid height");
  cs->add_option("--dim", synth.spec.feature_dim, "feature dimension");
  cs->add_option("--stain-bins", synth.spec.stain_bins, "stain histogram bins");
  cs->add_option("--patch-px", synth.spec.patch_px, "patch side in pixels");
  cs->add_option("--magnification", synth.spec.magnification, "magnification");
  cs->add_option("--separation", synth.spec.class_separation,
                 "class centroid separation");
  cs->add_option("--noise", synth.spec.noise_sigma, "per-patch noise sigma");

  detail::IndexArgs index;
  CLI::App* ci = app.add_subcommand("index", "build and save an engine index");
  ci->add_option("--archive", index.archive, "archive directory")->required();
  ci->add_option("--engine", index.engine, "engine name")->required();
  ci->add_option("--out", index.out, "output path base")->required();
  ci->add_flag("--no-timing", index.no_timing, "omit timing fields");
  detail::add_engine_options(ci, index.params);

  detail::SearchArgs search;
  CLI::App* cq = app.add_subcommand("search", "query one WSI against the rest");
  cq->add_option("--archive", search.archive, "archive directory")->required();
  cq->add_option("--engine", search.engine, "engine name")->required();
  cq->add_option("--query", search.query, "query WSI id")->required();
  cq->add_option("--index", search.index_base,
                 "saved index path base (default: build in memory)");
  cq->add_option("--k", search.k, "candidates to return");
  cq->add_option("--mode", search.mode, "exclusion mode: wsi|patient");
  cq->add_flag("--trace-ranking", search.trace,
               "emit ranking-stage JSON lines on stderr");
  detail::add_engine_options(cq, search.params);

  detail::BenchArgs bench;
  CLI::App* cb = app.add_subcommand("bench", "run the retrieval benchmark");
  cb->add_option("--archive", bench.archive, "archive directory")->required();
  cb->add_option("--engine", bench.engines,
                 "engine to benchmark (repeatable; default: all)");
  cb->add_option("--mode", bench.mode, "exclusion mode: wsi|patient");
  cb->add_option("--k", bench.k, "candidates retrieved per query");
  cb->add_option("--timing-reps", bench.timing_reps,
                 "timed repetitions per query");
  cb->add_flag("--no-timing", bench.no_timing,
               "single repetition, omit timing fields");
  cb->add_option("--out", bench.out_file, "also write the JSON report here");
  cb->add_option("--format", bench.format, "stdout format: json|table");
  detail::add_engine_options(cb, bench.params);

  detail::ReportArgs report;
  CLI::App* cr = app.add_subcommand("report", "re-render a saved bench report");
  cr->add_option("--in", report.in, "report JSON file")->required();
  cr->add_option("--format", report.format, "output format: table|json");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto* c : {&index.params, &search.params, &bench.params}) {
      c->seed = seed;
      c->workers = workers;
    }
    synth.spec.seed = seed;
    if (bench.format != "json" && bench.format != "table")
      throw UsageError("unknown format '" + bench.format + "'");
    if (report.format != "json" && report.format != "table")
      throw UsageError("unknown format '" + report.format + "'");

    if (app.got_subcommand(cs)) return detail::cmd_synth(synth, out);
    if (app.got_subcommand(ci)) return detail::cmd_index(index, out);
    if (app.got_subcommand(cq)) return detail::cmd_search(search, out, err);
    if (app.got_subcommand(cb)) return detail::cmd_bench(bench, out);
    if (app.got_subcommand(cr)) return detail::cmd_report(report, out);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace hs
