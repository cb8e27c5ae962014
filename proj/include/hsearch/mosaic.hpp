#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsearch/archive.hpp"
#include "hsearch/common.hpp"
#include "hsearch/kmeans.hpp"

namespace hs {

struct MosaicParams {
  uint32_t k_color = 9;          // stage-1 color/feature clusters
  double sampling_rate = 0.05;   // fraction kept per (color, spatial) cluster
  uint32_t spatial_k = 0;        // stage-2 clusters per color cluster; 0 = auto
  uint32_t min_per_cluster = 1;  // floor per (color, spatial) cluster
  uint64_t seed = 0;
};

// What stage 1 clusters on: stain histograms (Yottixel, SISH) or the patch
// feature vectors themselves (deep-feature pipelines).
enum class Stage1Feature { stain, feature };

struct MosaicMember {
  uint32_t patch_index;     // into WsiFeatures arrays
  uint32_t color_cluster;
  uint32_t spatial_cluster;
};

struct Mosaic {
  std::string wsi_id;
  std::vector<MosaicMember> members;  // sorted by patch_index

  size_t size() const { return members.size(); }
};

namespace detail {

inline uint32_t round_half_up(double x) {
  return static_cast<uint32_t>(std::floor(x + 0.5));
}

}  // namespace detail

inline std::vector<uint32_t> cluster_by_stain(const WsiFeatures& wsi, uint32_t k,
                                              uint64_t seed, uint32_t workers = 1) {
  if (!wsi.has_stains()) throw DataError("mosaic: archive has no stain histograms");
  size_t n = wsi.stains.size();
  size_t dim = wsi.stains[0].bins.size();
  std::vector<double> flat(n * dim);
  for (size_t i = 0; i < n; ++i)
    std::copy(wsi.stains[i].bins.begin(), wsi.stains[i].bins.end(), flat.begin() + i * dim);
  KMeansOpts opts;
  opts.workers = workers;
  return kmeans(flat, n, dim, k, seed, opts).assignment;
}

inline std::vector<uint32_t> cluster_by_feature(const WsiFeatures& wsi, uint32_t k,
                                                uint64_t seed, uint32_t workers = 1) {
  size_t n = wsi.features.size();
  size_t dim = wsi.features[0].size();
  std::vector<double> flat(n * dim);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < dim; ++j) flat[i * dim + j] = wsi.features[i][j];
  KMeansOpts opts;
  opts.workers = workers;
  return kmeans(flat, n, dim, k, seed, opts).assignment;
}

// Spatial k-means over grid coordinates of the given patch subset. Returns
// cluster ids aligned with `subset`.
inline std::vector<uint32_t> cluster_spatially(const WsiFeatures& wsi,
                                               const std::vector<uint32_t>& subset,
                                               uint32_t k, uint64_t seed) {
  std::vector<double> flat(subset.size() * 2);
  for (size_t i = 0; i < subset.size(); ++i) {
    flat[i * 2] = static_cast<double>(wsi.patches[subset[i]].grid_x);
    flat[i * 2 + 1] = static_cast<double>(wsi.patches[subset[i]].grid_y);
  }
  return kmeans(flat, subset.size(), 2, k, seed).assignment;
}

// Two-stage mosaic: color clustering, per-color spatial clustering, then
// per-cell sampling nearest to the cell's spatial centroid. The auto spatial
// k of ceil(cluster_size * sampling_rate) makes the final mosaic track
// sampling_rate * patch_count with one member per cell.
inline Mosaic build_mosaic(const WsiFeatures& wsi, const MosaicParams& params,
                           Stage1Feature stage1 = Stage1Feature::stain,
                           uint32_t workers = 1) {
  if (wsi.patches.empty()) throw DataError("mosaic: empty WSI");
  if (params.k_color == 0) throw UsageError("mosaic: k_color must be positive");
  if (params.sampling_rate < 0.0 || params.sampling_rate > 1.0)
    throw UsageError("mosaic: sampling_rate must be in [0,1]");

  Mosaic mosaic;
  mosaic.wsi_id = wsi.patches[0].wsi_id;

  std::vector<uint32_t> color = stage1 == Stage1Feature::stain
                                    ? cluster_by_stain(wsi, params.k_color,
                                                       mix_seed(params.seed, 1), workers)
                                    : cluster_by_feature(wsi, params.k_color,
                                                         mix_seed(params.seed, 1), workers);
  uint32_t k_color = *std::max_element(color.begin(), color.end()) + 1;

  for (uint32_t c = 0; c < k_color; ++c) {
    std::vector<uint32_t> members;
    for (uint32_t i = 0; i < color.size(); ++i)
      if (color[i] == c) members.push_back(i);
    if (members.empty()) continue;

    uint32_t k_sp = params.spatial_k;
    if (k_sp == 0) {
      k_sp = static_cast<uint32_t>(
          std::ceil(static_cast<double>(members.size()) * params.sampling_rate));
      k_sp = std::max(1u, k_sp);
    }
    std::vector<uint32_t> sp =
        cluster_spatially(wsi, members, k_sp, mix_seed(params.seed, 0x100 + c));
    uint32_t k_cells = *std::max_element(sp.begin(), sp.end()) + 1;

    for (uint32_t cell = 0; cell < k_cells; ++cell) {
      std::vector<uint32_t> in_cell;
      for (size_t i = 0; i < sp.size(); ++i)
        if (sp[i] == cell) in_cell.push_back(members[i]);
      if (in_cell.empty()) continue;
      uint32_t take = std::max(
          params.min_per_cluster,
          detail::round_half_up(static_cast<double>(in_cell.size()) * params.sampling_rate));
      take = std::min<uint32_t>(take, static_cast<uint32_t>(in_cell.size()));
      if (take == 0) continue;

      // Pick the patches nearest the cell's spatial centroid; ties resolve to
      // the lower patch index. Deterministic without any random draw.
      double cx = 0.0, cy = 0.0;
      for (uint32_t idx : in_cell) {
        cx += wsi.patches[idx].grid_x;
        cy += wsi.patches[idx].grid_y;
      }
      cx /= static_cast<double>(in_cell.size());
      cy /= static_cast<double>(in_cell.size());
      std::vector<std::pair<double, uint32_t>> order;
      order.reserve(in_cell.size());
      for (uint32_t idx : in_cell) {
        double dx = wsi.patches[idx].grid_x - cx;
        double dy = wsi.patches[idx].grid_y - cy;
        order.emplace_back(dx * dx + dy * dy, idx);
      }
      std::sort(order.begin(), order.end());
      for (uint32_t t = 0; t < take; ++t)
        mosaic.members.push_back({order[t].second, c, cell});
    }
  }

  std::sort(mosaic.members.begin(), mosaic.members.end(),
            [](const MosaicMember& a, const MosaicMember& b) {
              return a.patch_index < b.patch_index;
            });
  return mosaic;
}

// One JSON object per member, one per line.
inline std::string mosaic_to_jsonl(const Mosaic& mosaic, const WsiFeatures& wsi) {
  std::string out;
  for (const auto& m : mosaic.members) {
    nlohmann::ordered_json j;
    j["wsi_id"] = mosaic.wsi_id;
    j["grid_x"] = wsi.patches[m.patch_index].grid_x;
    j["grid_y"] = wsi.patches[m.patch_index].grid_y;
    j["color_cluster"] = m.color_cluster;
    j["spatial_cluster"] = m.spatial_cluster;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace hs
