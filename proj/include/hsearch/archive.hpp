#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsearch/common.hpp"
#include "hsearch/rng.hpp"

namespace hs {

// One patch of a pre-segmented WSI grid.
struct PatchRef {
  std::string wsi_id;
  uint32_t grid_x = 0;
  uint32_t grid_y = 0;
  uint32_t patch_px = 0;
  double magnification = 0.0;
};

using FeatureVector = std::vector<float>;

// Normalized stain color histogram. Construction normalizes, so the sum-to-1
// invariant holds regardless of rounding in the source data.
struct StainHistogram {
  std::vector<double> bins;

  static StainHistogram normalized(std::vector<double> raw) {
    double sum = 0.0;
    for (double v : raw) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw DataError("stain histogram: negative or non-finite bin");
      sum += v;
    }
    if (sum <= 0.0) throw DataError("stain histogram: zero mass");
    for (auto& v : raw) v /= sum;
    return StainHistogram{std::move(raw)};
  }
};

struct WsiRecord {
  std::string wsi_id;
  std::string patient_id;
  std::string label;
  uint32_t grid_w = 0;
  uint32_t grid_h = 0;
  uint32_t patch_px = 256;
  double magnification = 20.0;

  uint32_t declared_patches() const { return grid_w * grid_h; }
};

struct ArchiveManifest {
  std::vector<std::string> classes;
  uint32_t feature_dim = 0;
  uint32_t stain_bins = 0;
  std::string feature_store;  // directory of .hsfv files, relative to root
  std::vector<WsiRecord> wsis;
  std::filesystem::path root;

  // Derived lookups, filled by load_manifest / generate_synthetic_archive.
  std::vector<std::string> patients;     // distinct patient ids
  std::vector<uint32_t> wsi_patient;     // wsi index -> patients index
  std::vector<uint32_t> wsi_label;       // wsi index -> classes index
  std::map<std::string, uint32_t> wsi_index;

  std::filesystem::path store_dir() const { return root / feature_store; }

  uint32_t index_of(const std::string& wsi_id) const {
    auto it = wsi_index.find(wsi_id);
    if (it == wsi_index.end()) throw DataError("unknown wsi_id: " + wsi_id);
    return it->second;
  }

  void rebuild_lookups() {
    patients.clear();
    wsi_patient.clear();
    wsi_label.clear();
    wsi_index.clear();
    std::map<std::string, uint32_t> pat;
    for (size_t i = 0; i < wsis.size(); ++i) {
      const auto& w = wsis[i];
      auto [it, fresh] = pat.try_emplace(w.patient_id, static_cast<uint32_t>(patients.size()));
      if (fresh) patients.push_back(w.patient_id);
      wsi_patient.push_back(it->second);
      auto lab = std::find(classes.begin(), classes.end(), w.label);
      wsi_label.push_back(static_cast<uint32_t>(lab - classes.begin()));
      wsi_index.emplace(w.wsi_id, static_cast<uint32_t>(i));
    }
  }
};

// Loaded patch data of one WSI: refs, feature vectors, and (optionally)
// stain histograms, index-aligned.
struct WsiFeatures {
  std::vector<PatchRef> patches;
  std::vector<FeatureVector> features;
  std::vector<StainHistogram> stains;  // empty when the store has no stain bins

  bool has_stains() const { return !stains.empty(); }
};

namespace detail {

inline bool safe_id(const std::string& s) {
  if (s.empty() || s.size() > 128) return false;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return s != "." && s != "..";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Manifest: archive.json at the archive root.
// ---------------------------------------------------------------------------

inline ArchiveManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError(path.string() + ": " + msg);
  };
  try {
    ArchiveManifest m;
    m.root = path.parent_path();
    if (doc.value("format", "") != std::string("hs-archive")) throw fail("not an hs-archive manifest");
    if (doc.value("version", 0) != 1) throw fail("unsupported manifest version");
    m.feature_dim = doc.at("feature_dim").get<uint32_t>();
    m.stain_bins = doc.value("stain_bins", 0u);
    m.feature_store = doc.value("feature_store", std::string("features"));
    if (m.feature_dim < 2) throw fail("feature_dim must be at least 2");
    for (const auto& c : doc.at("classes")) {
      std::string name = c.get<std::string>();
      if (name.empty()) throw fail("empty class name");
      if (std::find(m.classes.begin(), m.classes.end(), name) != m.classes.end())
        throw fail("duplicate class: " + name);
      m.classes.push_back(name);
    }
    if (m.classes.empty()) throw fail("no classes");
    size_t idx = 0;
    for (const auto& j : doc.at("wsis")) {
      std::string at = "wsis[" + std::to_string(idx) + "]: ";
      WsiRecord w;
      w.wsi_id = j.at("wsi_id").get<std::string>();
      w.patient_id = j.at("patient_id").get<std::string>();
      w.label = j.at("label").get<std::string>();
      w.grid_w = j.at("grid_w").get<uint32_t>();
      w.grid_h = j.at("grid_h").get<uint32_t>();
      w.patch_px = j.value("patch_px", 256u);
      w.magnification = j.value("magnification", 20.0);
      if (!detail::safe_id(w.wsi_id)) throw fail(at + "invalid wsi_id");
      if (w.patient_id.empty()) throw fail(at + "empty patient_id");
      if (std::find(m.classes.begin(), m.classes.end(), w.label) == m.classes.end())
        throw fail(at + "unknown label: " + w.label);
      if (w.grid_w == 0 || w.grid_h == 0) throw fail(at + "non-positive grid");
      if (w.patch_px == 0) throw fail(at + "non-positive patch_px");
      if (!(w.magnification > 0.0)) throw fail(at + "non-positive magnification");
      for (const auto& seen : m.wsis)
        if (seen.wsi_id == w.wsi_id) throw fail(at + "duplicate wsi_id: " + w.wsi_id);
      m.wsis.push_back(std::move(w));
      ++idx;
    }
    m.rebuild_lookups();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
}

inline void save_manifest(const ArchiveManifest& m, const std::filesystem::path& path) {
  nlohmann::ordered_json doc;
  doc["format"] = "hs-archive";
  doc["version"] = 1;
  doc["classes"] = m.classes;
  doc["feature_dim"] = m.feature_dim;
  doc["stain_bins"] = m.stain_bins;
  doc["feature_store"] = m.feature_store;
  auto& arr = doc["wsis"] = nlohmann::ordered_json::array();
  for (const auto& w : m.wsis) {
    nlohmann::ordered_json j;
    j["wsi_id"] = w.wsi_id;
    j["patient_id"] = w.patient_id;
    j["label"] = w.label;
    j["grid_w"] = w.grid_w;
    j["grid_h"] = w.grid_h;
    j["patch_px"] = w.patch_px;
    j["magnification"] = w.magnification;
    arr.push_back(std::move(j));
  }
  write_file(path, doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Feature store: one <wsi_id>.hsfv per WSI.
//
// Layout (little-endian):
//   "HSFV"  u32 version=1  u32 patch_count  u32 feature_dim  u32 stain_bins
//   then per patch: u32 grid_x, u32 grid_y, feature_dim*f32, stain_bins*f32
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[4] = {'H', 'S', 'F', 'V'};

inline void write_features(const ArchiveManifest& m, const std::string& wsi_id,
                           const WsiFeatures& data) {
  ByteWriter w;
  w.bytes(kFeatureMagic, 4);
  w.u32(1);
  w.u32(static_cast<uint32_t>(data.patches.size()));
  w.u32(m.feature_dim);
  w.u32(data.has_stains() ? m.stain_bins : 0);
  for (size_t i = 0; i < data.patches.size(); ++i) {
    w.u32(data.patches[i].grid_x);
    w.u32(data.patches[i].grid_y);
    for (float v : data.features[i]) w.f32(v);
    if (data.has_stains())
      for (double v : data.stains[i].bins) w.f32(static_cast<float>(v));
  }
  std::filesystem::create_directories(m.store_dir());
  write_file(m.store_dir() / (wsi_id + ".hsfv"), w.take());
}

inline WsiFeatures load_features(const ArchiveManifest& m, const std::string& wsi_id) {
  uint32_t wi = m.index_of(wsi_id);
  const WsiRecord& rec = m.wsis[wi];
  auto path = m.store_dir() / (wsi_id + ".hsfv");
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const DataError&) {
    throw DataError(wsi_id + ": missing feature store entry (" + path.string() + ")");
  }
  ByteReader r(bytes);
  auto fail = [&](const std::string& msg) -> FormatError {
    return FormatError(wsi_id + ".hsfv: " + msg);
  };
  char magic[4];
  for (auto& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kFeatureMagic, 4) != 0) throw fail("bad magic");
  if (r.u32() != 1) throw fail("unsupported version");
  uint32_t patch_count = r.u32();
  uint32_t dim = r.u32();
  uint32_t stain_bins = r.u32();
  if (dim != m.feature_dim) {
    throw fail("feature_dim " + std::to_string(dim) + " does not match manifest " +
               std::to_string(m.feature_dim));
  }
  if (stain_bins != 0 && stain_bins != m.stain_bins) {
    throw fail("stain_bins " + std::to_string(stain_bins) + " does not match manifest " +
               std::to_string(m.stain_bins));
  }
  if (patch_count == 0) throw DataError(wsi_id + ": empty WSI (zero patches)");

  WsiFeatures out;
  out.patches.reserve(patch_count);
  out.features.reserve(patch_count);
  if (stain_bins > 0) out.stains.reserve(patch_count);
  std::vector<uint64_t> coords;
  coords.reserve(patch_count);
  for (uint32_t p = 0; p < patch_count; ++p) {
    PatchRef ref;
    ref.wsi_id = wsi_id;
    ref.grid_x = r.u32();
    ref.grid_y = r.u32();
    ref.patch_px = rec.patch_px;
    ref.magnification = rec.magnification;
    if (ref.grid_x >= rec.grid_w || ref.grid_y >= rec.grid_h)
      throw fail("patch (" + std::to_string(ref.grid_x) + "," + std::to_string(ref.grid_y) +
                 ") outside declared grid");
    coords.push_back((static_cast<uint64_t>(ref.grid_y) << 32) | ref.grid_x);
    FeatureVector f(dim);
    for (uint32_t i = 0; i < dim; ++i) {
      f[i] = r.f32();
      if (!std::isfinite(f[i]))
        throw fail("non-finite feature value in patch " + std::to_string(p));
    }
    if (stain_bins > 0) {
      std::vector<double> bins(stain_bins);
      for (uint32_t i = 0; i < stain_bins; ++i) {
        bins[i] = r.f32();
        if (!std::isfinite(bins[i]) || bins[i] < 0.0)
          throw fail("invalid stain bin in patch " + std::to_string(p));
      }
      out.stains.push_back(StainHistogram::normalized(std::move(bins)));
    }
    out.patches.push_back(std::move(ref));
    out.features.push_back(std::move(f));
  }
  if (r.remaining() != 0) throw fail("trailing bytes");
  std::sort(coords.begin(), coords.end());
  if (std::adjacent_find(coords.begin(), coords.end()) != coords.end())
    throw fail("duplicate patch coordinates");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic archives.
// ---------------------------------------------------------------------------

struct SynthSpec {
  uint32_t num_classes = 3;
  uint32_t wsis_per_class = 30;
  uint32_t patients_per_class = 15;
  uint32_t grid_w = 50;
  uint32_t grid_h = 40;
  uint32_t feature_dim = 128;
  uint32_t stain_bins = 48;
  uint32_t patch_px = 256;
  double magnification = 20.0;
  double class_separation = 8.0;
  double noise_sigma = 1.0;
  uint64_t seed = 0;
};

// Class centroid directions are random unit vectors rather than coordinate
// axes so the separation spreads across all dimensions; axis-aligned
// centroids would concentrate the signal in a couple of coordinates.
inline std::vector<double> synth_class_direction(const SynthSpec& spec, uint32_t cls) {
  Rng rng(mix_seed(spec.seed, 0xC1A5500ull + cls));
  std::vector<double> dir(spec.feature_dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& v : dir) {
      v = rng.normal();
      norm += v * v;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& v : dir) v /= norm;
  return dir;
}

inline ArchiveManifest generate_synthetic_archive(const SynthSpec& spec,
                                                  const std::filesystem::path& out_dir) {
  if (spec.num_classes == 0) throw UsageError("synth: need at least one class");
  if (spec.wsis_per_class == 0) throw UsageError("synth: need at least one wsi per class");
  if (spec.patients_per_class == 0 || spec.patients_per_class > spec.wsis_per_class)
    throw UsageError("synth: patients_per_class must be in [1, wsis_per_class]");
  if (spec.grid_w == 0 || spec.grid_h == 0) throw UsageError("synth: non-positive grid");
  if (spec.feature_dim < 2) throw UsageError("synth: feature_dim must be at least 2");
  if (spec.stain_bins < 2) throw UsageError("synth: stain_bins must be at least 2");
  if (spec.noise_sigma < 0.0 || spec.class_separation < 0.0)
    throw UsageError("synth: negative separation or noise");

  ArchiveManifest m;
  m.root = out_dir;
  m.feature_dim = spec.feature_dim;
  m.stain_bins = spec.stain_bins;
  m.feature_store = "features";
  for (uint32_t c = 0; c < spec.num_classes; ++c)
    m.classes.push_back("class_" + std::to_string(c));

  // Per-class feature centroids and stain base measures.
  std::vector<std::vector<double>> mu(spec.num_classes);
  std::vector<std::vector<double>> stain_alpha(spec.num_classes);
  for (uint32_t c = 0; c < spec.num_classes; ++c) {
    mu[c] = synth_class_direction(spec, c);
    for (auto& v : mu[c]) v *= spec.class_separation;
    Rng rng(mix_seed(spec.seed, 0x57A1Bull * 4096 + c));
    std::vector<double> ones(spec.stain_bins, 1.0);
    auto base = rng.dirichlet(ones);
    stain_alpha[c].resize(spec.stain_bins);
    for (uint32_t i = 0; i < spec.stain_bins; ++i)
      stain_alpha[c][i] = std::max(60.0 * base[i], 1e-3);
  }

  uint32_t global = 0;
  char buf[32];
  for (uint32_t c = 0; c < spec.num_classes; ++c) {
    for (uint32_t i = 0; i < spec.wsis_per_class; ++i, ++global) {
      WsiRecord rec;
      std::snprintf(buf, sizeof buf, "wsi_%04u", global);
      rec.wsi_id = buf;
      std::snprintf(buf, sizeof buf, "pt_%u_%02u", c, i % spec.patients_per_class);
      rec.patient_id = buf;
      rec.label = m.classes[c];
      rec.grid_w = spec.grid_w;
      rec.grid_h = spec.grid_h;
      rec.patch_px = spec.patch_px;
      rec.magnification = spec.magnification;
      m.wsis.push_back(std::move(rec));
    }
  }
  m.rebuild_lookups();

  std::filesystem::create_directories(out_dir);
  global = 0;
  for (uint32_t c = 0; c < spec.num_classes; ++c) {
    for (uint32_t i = 0; i < spec.wsis_per_class; ++i, ++global) {
      const WsiRecord& rec = m.wsis[global];
      Rng rng(mix_seed(spec.seed, 0xB51Dull * 0x100000ull + global));
      WsiFeatures data;
      uint32_t n = spec.grid_w * spec.grid_h;
      data.patches.reserve(n);
      data.features.reserve(n);
      data.stains.reserve(n);
      for (uint32_t gy = 0; gy < spec.grid_h; ++gy) {
        for (uint32_t gx = 0; gx < spec.grid_w; ++gx) {
          PatchRef ref{rec.wsi_id, gx, gy, rec.patch_px, rec.magnification};
          FeatureVector f(spec.feature_dim);
          for (uint32_t d = 0; d < spec.feature_dim; ++d)
            f[d] = static_cast<float>(mu[c][d] + spec.noise_sigma * rng.normal());
          data.stains.push_back(StainHistogram::normalized(rng.dirichlet(stain_alpha[c])));
          data.patches.push_back(std::move(ref));
          data.features.push_back(std::move(f));
        }
      }
      write_features(m, rec.wsi_id, data);
    }
  }
  save_manifest(m, out_dir / "archive.json");
  return m;
}

// ---------------------------------------------------------------------------
// Validation.
// ---------------------------------------------------------------------------

struct ValidationEntry {
  std::string wsi_id;  // empty for archive-level faults
  std::string fault;   // "manifest" | "store" | "empty"
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationEntry> entries;
  bool ok() const { return entries.empty(); }
};

inline ValidationReport validate_archive(const ArchiveManifest& m, bool check_store = true) {
  ValidationReport rep;
  if (m.classes.size() < 2)
    rep.entries.push_back({"", "manifest", "benchmark needs at least 2 classes"});
  if (m.wsis.empty()) rep.entries.push_back({"", "manifest", "no wsis"});
  if (check_store) {
    for (const auto& w : m.wsis) {
      try {
        (void)load_features(m, w.wsi_id);
      } catch (const DataError& e) {
        std::string what = e.what();
        bool empty = what.find("empty WSI") != std::string::npos;
        rep.entries.push_back({w.wsi_id, empty ? "empty" : "store", what});
      }
    }
  }
  return rep;
}

}  // namespace hs
