#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hsearch/cli.hpp"

using namespace hs;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int rc = -1;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliResult r;
  r.rc = run_cli(std::move(args), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

struct Fixture {
  fs::path archive = fs::temp_directory_path() / "hsearch_cli_archive";
  fs::path index_base = fs::temp_directory_path() / "hsearch_cli_index" / "yx";
  CliResult synth, index;
};

const Fixture& fx() {
  static Fixture f = [] {
    Fixture x;
    fs::remove_all(x.archive);
    fs::remove_all(x.index_base.parent_path());
    fs::create_directories(x.index_base.parent_path());
    x.synth = cli({"--seed", "9", "synth", "--out", x.archive.string(),
                   "--classes", "2", "--wsis-per-class", "3",
                   "--patients-per-class", "3", "--grid-w", "6", "--grid-h",
                   "5", "--dim", "12", "--stain-bins", "10",
                   "--separation", "6"});
    x.index = cli({"--seed", "9", "index", "--archive", x.archive.string(),
                   "--engine", "yottixel", "--out", x.index_base.string()});
    return x;
  }();
  return f;
}

}  // namespace

TEST_CASE("help prints usage and exits clean") {
  CliResult r = cli({"--help"});
  REQUIRE(r.rc == 0);
  REQUIRE(r.out.find("Usage") != std::string::npos);
  REQUIRE(r.out.find("synth") != std::string::npos);
  REQUIRE(r.out.find("bench") != std::string::npos);
}

TEST_CASE("parse faults exit with the usage code") {
  REQUIRE(cli({}).rc == 1);
  REQUIRE(cli({"frobnicate"}).rc == 1);
  REQUIRE(cli({"synth", "--no-such-flag"}).rc == 1);
  REQUIRE(cli({"synth"}).rc == 1);  // --out is required
}

TEST_CASE("synth reports the generated archive") {
  const Fixture& f = fx();
  INFO(f.synth.err);
  REQUIRE(f.synth.rc == 0);
  auto j = ordered_json::parse(f.synth.out);
  REQUIRE(j["command"] == "synth");
  REQUIRE(j["wsis"] == 6);
  REQUIRE(j["patients"] == 6);
  REQUIRE(j["patches_per_wsi"] == 30);
  REQUIRE(j["classes"].size() == 2);
  REQUIRE(j["seed"] == 9);
  REQUIRE(fs::exists(f.archive / "archive.json"));
}

TEST_CASE("index writes every file it lists") {
  const Fixture& f = fx();
  INFO(f.index.err);
  REQUIRE(f.index.rc == 0);
  auto j = ordered_json::parse(f.index.out);
  REQUIRE(j["engine"] == "yottixel");
  REQUIRE(j["wsis_indexed"] == 6);
  REQUIRE(j["failed"].empty());
  REQUIRE(j["files"].size() >= 1);
  for (const auto& p : j["files"])
    REQUIRE(fs::exists(fs::path(p.get<std::string>())));
  REQUIRE(j["storage"]["actual_bytes"].get<uint64_t>() > 0);
  REQUIRE(j.contains("build_seconds"));
}

TEST_CASE("search returns labeled candidates for an easy query") {
  const Fixture& f = fx();
  CliResult r = cli({"--seed", "9", "search", "--archive", f.archive.string(),
                     "--engine", "yottixel", "--query", "wsi_0000", "--k", "3"});
  INFO(r.err);
  REQUIRE(r.rc == 0);
  auto j = ordered_json::parse(r.out);
  REQUIRE(j["score_kind"] == "distance");
  REQUIRE(j["candidates"].size() == 3);
  for (const auto& c : j["candidates"]) REQUIRE(c["wsi_id"] != "wsi_0000");
  REQUIRE(j["top1"] == "class_0");
}

TEST_CASE("a saved index answers exactly like an in-memory build") {
  const Fixture& f = fx();
  CliResult mem = cli({"--seed", "9", "search", "--archive", f.archive.string(),
                       "--engine", "yottixel", "--query", "wsi_0002"});
  CliResult disk = cli({"--seed", "9", "search", "--archive", f.archive.string(),
                        "--engine", "yottixel", "--query", "wsi_0002",
                        "--index", f.index_base.string()});
  REQUIRE(mem.rc == 0);
  REQUIRE(disk.rc == 0);
  REQUIRE(mem.out == disk.out);
}

TEST_CASE("search faults pick the right exit code") {
  const Fixture& f = fx();
  std::vector<std::string> base = {"search", "--archive", f.archive.string(),
                                   "--engine", "yottixel", "--query", "wsi_0000"};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(std::move(args));
  };
  REQUIRE(with({"--mode", "sideways"}).rc == 1);
  CliResult unknown = cli({"search", "--archive", f.archive.string(),
                           "--engine", "yottixel", "--query", "wsi_9999"});
  REQUIRE(unknown.rc == 2);
  CliResult bad_engine = cli({"search", "--archive", f.archive.string(),
                              "--engine", "zeta", "--query", "wsi_0000"});
  REQUIRE(bad_engine.rc == 1);
  CliResult no_archive = cli({"search", "--archive", "/nonexistent/nowhere",
                              "--engine", "yottixel", "--query", "wsi_0000"});
  REQUIRE(no_archive.rc == 2);
}

TEST_CASE("bench output is byte-stable when timing is off") {
  const Fixture& f = fx();
  std::vector<std::string> args = {"--seed", "9", "bench",
                                   "--archive", f.archive.string(),
                                   "--engine", "yottixel",
                                   "--engine", "retccl",
                                   "--no-timing"};
  CliResult a = cli(args);
  CliResult b = cli(args);
  INFO(a.err);
  REQUIRE(a.rc == 0);
  REQUIRE(b.rc == 0);
  REQUIRE(a.out == b.out);

  auto j = ordered_json::parse(a.out);
  REQUIRE(j["engines"].size() == 2);
  REQUIRE_FALSE(j["engines"][0].contains("timing"));
  REQUIRE(j["engines"][0]["queries_total"] == 6);
  REQUIRE(j["engines"][0]["f1_top1"]["macro"].get<double>() >= 0.9);
  REQUIRE(j["rating"]["composite"].size() == 2);
}

TEST_CASE("bench rejects duplicate engines and unknown formats") {
  const Fixture& f = fx();
  REQUIRE(cli({"bench", "--archive", f.archive.string(), "--engine",
               "yottixel", "--engine", "yottixel", "--no-timing"})
              .rc == 1);
  REQUIRE(cli({"bench", "--archive", f.archive.string(), "--format", "xml",
               "--no-timing"})
              .rc == 1);
}

TEST_CASE("a saved report re-renders byte-identically") {
  const Fixture& f = fx();
  fs::path report = fs::temp_directory_path() / "hsearch_cli_report.json";
  fs::remove(report);
  std::vector<std::string> args = {"--seed", "9", "bench",
                                   "--archive", f.archive.string(),
                                   "--engine", "yottixel",
                                   "--no-timing",
                                   "--out", report.string(),
                                   "--format", "table"};
  CliResult bench = cli(args);
  INFO(bench.err);
  REQUIRE(bench.rc == 0);
  REQUIRE(bench.out.rfind("engine", 0) == 0);
  REQUIRE(fs::exists(report));

  CliResult table = cli({"report", "--in", report.string(), "--format", "table"});
  REQUIRE(table.rc == 0);
  REQUIRE(table.out == bench.out);

  CliResult json = cli({"report", "--in", report.string(), "--format", "json"});
  REQUIRE(json.rc == 0);
  std::ifstream in(report, std::ios::binary);
  std::stringstream saved;
  saved << in.rdbuf();
  REQUIRE(json.out == saved.str());
}

TEST_CASE("report faults pick the right exit code") {
  REQUIRE(cli({"report", "--in", "/nonexistent/report.json"}).rc == 2);
  fs::path garbage = fs::temp_directory_path() / "hsearch_cli_garbage.json";
  std::ofstream(garbage) << "{not json";
  REQUIRE(cli({"report", "--in", garbage.string()}).rc == 2);
  REQUIRE(cli({"report", "--in", garbage.string(), "--format", "yaml"}).rc == 1);
}

TEST_CASE("a synth spec fault is a usage error") {
  fs::path dir = fs::temp_directory_path() / "hsearch_cli_badsynth";
  fs::remove_all(dir);
  CliResult r = cli({"synth", "--out", dir.string(), "--classes", "2",
                     "--wsis-per-class", "2", "--patients-per-class", "5"});
  REQUIRE(r.rc == 1);
}
