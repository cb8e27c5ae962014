#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "hsearch/archive.hpp"
#include "hsearch/common.hpp"

namespace hs {

// Raw pixels of one patch, 8-bit RGB, row-major.
struct PatchPixels {
  uint32_t width = 0;
  uint32_t height = 0;
  std::vector<uint8_t> rgb;  // width * height * 3

  uint8_t at(uint32_t x, uint32_t y, uint32_t ch) const {
    return rgb[(static_cast<size_t>(y) * width + x) * 3 + ch];
  }
};

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::string name() const = 0;
  virtual uint32_t dim() const = 0;

  virtual FeatureVector extract(const PatchPixels&) const {
    throw UsageError(name() + ": no pixel extraction path");
  }

  // Store-backed providers resolve patches by reference instead.
  virtual FeatureVector extract(const PatchRef&) const {
    throw UsageError(name() + ": no reference extraction path");
  }
};

// Concatenated per-channel color histogram, jointly L1-normalized.
class ColorHistogramProvider : public FeatureProvider {
 public:
  explicit ColorHistogramProvider(uint32_t bins_per_channel = 16)
      : bins_(bins_per_channel) {
    if (bins_ == 0 || bins_ > 256) throw UsageError("color histogram: bins must be in [1,256]");
  }

  std::string name() const override { return "color_histogram"; }
  uint32_t dim() const override { return 3 * bins_; }

  FeatureVector extract(const PatchPixels& px) const override {
    if (px.width == 0 || px.height == 0 || px.rgb.size() != size_t(px.width) * px.height * 3)
      throw DataError("color histogram: malformed patch");
    std::vector<uint64_t> counts(3 * bins_, 0);
    for (size_t i = 0; i < px.rgb.size(); i += 3)
      for (uint32_t ch = 0; ch < 3; ++ch)
        ++counts[ch * bins_ + (static_cast<uint32_t>(px.rgb[i + ch]) * bins_) / 256];
    double total = static_cast<double>(px.width) * px.height * 3.0;
    FeatureVector f(3 * bins_);
    for (size_t i = 0; i < f.size(); ++i)
      f[i] = static_cast<float>(static_cast<double>(counts[i]) / total);
    return f;
  }
};

// 8-neighbor local binary patterns on the gray image, 256-bin histogram over
// interior pixels. A neighbor >= center sets its bit, so a constant patch
// lands entirely on code 255.
class LbpProvider : public FeatureProvider {
 public:
  std::string name() const override { return "lbp"; }
  uint32_t dim() const override { return 256; }

  FeatureVector extract(const PatchPixels& px) const override {
    if (px.width < 3 || px.height < 3)
      throw DataError("lbp: patch must be at least 3x3");
    if (px.rgb.size() != size_t(px.width) * px.height * 3)
      throw DataError("lbp: malformed patch");
    auto gray = [&](uint32_t x, uint32_t y) {
      return (static_cast<double>(px.at(x, y, 0)) + px.at(x, y, 1) + px.at(x, y, 2)) / 3.0;
    };
    // Clockwise from top-left; bit i is neighbor i.
    static constexpr int kOff[8][2] = {{-1, -1}, {0, -1}, {1, -1}, {1, 0},
                                       {1, 1},   {0, 1},  {-1, 1}, {-1, 0}};
    std::vector<uint64_t> counts(256, 0);
    for (uint32_t y = 1; y + 1 < px.height; ++y) {
      for (uint32_t x = 1; x + 1 < px.width; ++x) {
        double c = gray(x, y);
        uint32_t code = 0;
        for (uint32_t i = 0; i < 8; ++i) {
          uint32_t nx = x + static_cast<uint32_t>(kOff[i][0]);
          uint32_t ny = y + static_cast<uint32_t>(kOff[i][1]);
          if (gray(nx, ny) >= c) code |= 1u << i;
        }
        ++counts[code];
      }
    }
    double total = static_cast<double>(px.width - 2) * (px.height - 2);
    FeatureVector f(256);
    for (size_t i = 0; i < 256; ++i)
      f[i] = static_cast<float>(static_cast<double>(counts[i]) / total);
    return f;
  }
};

// Pass-through provider over a feature store. Never touches pixels.
class PrecomputedProvider : public FeatureProvider {
 public:
  explicit PrecomputedProvider(const ArchiveManifest& manifest) : manifest_(manifest) {}

  std::string name() const override { return "precomputed"; }
  uint32_t dim() const override { return manifest_.feature_dim; }

  FeatureVector extract(const PatchRef& ref) const override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(ref.wsi_id);
    if (it == cache_.end()) {
      CachedWsi c;
      c.data = load_features(manifest_, ref.wsi_id);
      for (size_t i = 0; i < c.data.patches.size(); ++i) {
        uint64_t key = (static_cast<uint64_t>(c.data.patches[i].grid_y) << 32) |
                       c.data.patches[i].grid_x;
        c.by_coord.emplace(key, i);
      }
      it = cache_.emplace(ref.wsi_id, std::move(c)).first;
    }
    uint64_t key = (static_cast<uint64_t>(ref.grid_y) << 32) | ref.grid_x;
    auto hit = it->second.by_coord.find(key);
    if (hit == it->second.by_coord.end())
      throw DataError(ref.wsi_id + ": no stored feature for patch (" +
                      std::to_string(ref.grid_x) + "," + std::to_string(ref.grid_y) + ")");
    return it->second.data.features[hit->second];
  }

 private:
  struct CachedWsi {
    WsiFeatures data;
    std::map<uint64_t, size_t> by_coord;
  };
  const ArchiveManifest& manifest_;
  mutable std::mutex mu_;
  mutable std::map<std::string, CachedWsi> cache_;
};

}  // namespace hs
