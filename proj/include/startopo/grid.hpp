#pragma once

// Raster types shared by every module, plus strip patching, dataset
// normalization and binarization.
//
// Orientation is normative: storage is row-major, row 0 is the top of the
// image (shallowest depth) and increasing row means increasing depth.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "startopo/error.hpp"

namespace startopo {

struct GrayTag {
  static constexpr const char* name = "GrayImage";
  static bool valid(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }
};

struct ProbabilityTag {
  static constexpr const char* name = "ProbabilityMap";
  static bool valid(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }
};

struct MaskTag {
  static constexpr const char* name = "BinaryMask";
  static bool valid(std::uint8_t v) { return v == 0 || v == 1; }
};

// Network-input raster: (value - mean) / std, unbounded.
struct NormalizedTag {
  static constexpr const char* name = "NormalizedImage";
  static bool valid(double v) { return std::isfinite(v); }
};

// Unconstrained real raster (loss gradients, SSIM inputs).
struct RealTag {
  static constexpr const char* name = "RealGrid";
  static bool valid(double) { return true; }
};

/// Dense row-major raster whose value domain is fixed by `Tag`.
///
/// Distinct tags make distinct types, so a normalized network input can
/// never be passed where a [0,1] image is expected. Construction from a
/// value vector validates every pixel; mutable element access is available
/// for builders and does not re-validate (call `validate()` at trust
/// boundaries).
template <typename T, typename Tag>
class Grid {
 public:
  using value_type = T;
  using tag_type = Tag;

  Grid() = default;

  Grid(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), values_(height * width, fill) {
    check_dims();
    if (!Tag::valid(fill)) {
      throw ValueError(std::string(Tag::name) + ": fill value out of domain");
    }
  }

  Grid(std::size_t height, std::size_t width, std::vector<T> values)
      : height_(height), width_(width), values_(std::move(values)) {
    check_dims();
    if (values_.size() != height_ * width_) {
      throw DimensionError(std::string(Tag::name) + ": value count " +
                           std::to_string(values_.size()) + " does not match " +
                           std::to_string(height_) + "x" + std::to_string(width_));
    }
    validate();
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(std::size_t row, std::size_t col) noexcept { return values_[row * width_ + col]; }
  const T& operator()(std::size_t row, std::size_t col) const noexcept {
    return values_[row * width_ + col];
  }
  T& operator[](std::size_t index) noexcept { return values_[index]; }
  const T& operator[](std::size_t index) const noexcept { return values_[index]; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  const std::vector<T>& storage() const noexcept { return values_; }

  void validate() const {
    for (const T& v : values_) {
      if (!Tag::valid(v)) {
        throw ValueError(std::string(Tag::name) + ": pixel value out of domain");
      }
    }
  }

  bool same_shape(std::size_t height, std::size_t width) const noexcept {
    return height_ == height && width_ == width;
  }
  template <typename OtherGrid>
  bool same_shape(const OtherGrid& other) const noexcept {
    return same_shape(other.height(), other.width());
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  void check_dims() const {
    if (height_ == 0 || width_ == 0) {
      throw DimensionError(std::string(Tag::name) + ": height and width must be >= 1");
    }
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> values_;
};

using GrayImage = Grid<double, GrayTag>;
using ProbabilityMap = Grid<double, ProbabilityTag>;
using BinaryMask = Grid<std::uint8_t, MaskTag>;
using NormalizedImage = Grid<double, NormalizedTag>;
using RealGrid = Grid<double, RealTag>;

template <typename Dst, typename Src>
Dst grid_cast(const Src& src) {
  std::vector<typename Dst::value_type> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i] = static_cast<typename Dst::value_type>(src[i]);
  }
  return Dst(src.height(), src.width(), std::move(out));
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (!a.same_shape(b.height(), b.width())) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.height()) +
                         "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                         "x" + std::to_string(b.width()));
  }
}

// ---------------------------------------------------------------------------
// Patching

/// Ordered vertical strips of a raster. Strips are full height and
/// `strip_width` wide, left to right, contiguous and non-overlapping.
template <typename G>
struct PatchSet {
  std::vector<G> patches;
  std::size_t source_height = 0;
  std::size_t source_width = 0;
  std::size_t strip_width = 0;
};

template <typename G>
PatchSet<G> crop_to_patches(const G& image, std::size_t strip_width) {
  if (strip_width == 0 || image.width() % strip_width != 0) {
    throw DimensionError("crop_to_patches: strip width " + std::to_string(strip_width) +
                         " does not divide image width " + std::to_string(image.width()));
  }
  PatchSet<G> set;
  set.source_height = image.height();
  set.source_width = image.width();
  set.strip_width = strip_width;
  const std::size_t count = image.width() / strip_width;
  set.patches.reserve(count);
  for (std::size_t p = 0; p < count; ++p) {
    std::vector<typename G::value_type> values(image.height() * strip_width);
    for (std::size_t r = 0; r < image.height(); ++r) {
      const auto* src = &image(r, p * strip_width);
      std::copy(src, src + strip_width, values.begin() + static_cast<std::ptrdiff_t>(r * strip_width));
    }
    set.patches.emplace_back(image.height(), strip_width, std::move(values));
  }
  return set;
}

template <typename G>
G reconstruct_from_patches(const PatchSet<G>& set) {
  if (set.strip_width == 0 || set.patches.empty() ||
      set.patches.size() * set.strip_width != set.source_width) {
    throw DimensionError("reconstruct_from_patches: patch count * strip width != source width");
  }
  std::vector<typename G::value_type> values(set.source_height * set.source_width);
  for (std::size_t p = 0; p < set.patches.size(); ++p) {
    const G& patch = set.patches[p];
    if (!patch.same_shape(set.source_height, set.strip_width)) {
      throw DimensionError("reconstruct_from_patches: patch " + std::to_string(p) +
                           " has inconsistent dimensions");
    }
    for (std::size_t r = 0; r < set.source_height; ++r) {
      const auto* src = &patch(r, 0);
      std::copy(src, src + set.strip_width,
                values.begin() + static_cast<std::ptrdiff_t>(r * set.source_width + p * set.strip_width));
    }
  }
  return G(set.source_height, set.source_width, std::move(values));
}

// ---------------------------------------------------------------------------
// Normalization

inline constexpr double kStdFloor = 1e-6;

struct NormalizationStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Pooled mean and population standard deviation over every pixel of every
/// image; the standard deviation is floored at kStdFloor.
inline NormalizationStats compute_dataset_stats(std::span<const GrayImage> images) {
  if (images.empty()) throw EmptyDatasetError("compute_dataset_stats: empty image list");
  double count = 0.0;
  double sum = 0.0;
  for (const auto& img : images) {
    for (double v : img.values()) sum += v;
    count += static_cast<double>(img.size());
  }
  const double mean = sum / count;
  double sq = 0.0;
  for (const auto& img : images) {
    for (double v : img.values()) sq += (v - mean) * (v - mean);
  }
  return {mean, std::max(std::sqrt(sq / count), kStdFloor)};
}

inline NormalizedImage normalize(const GrayImage& image, const NormalizationStats& stats) {
  if (!(stats.std > 0.0)) throw ValueError("normalize: std must be positive");
  std::vector<double> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = (image[i] - stats.mean) / stats.std;
  return NormalizedImage(image.height(), image.width(), std::move(out));
}

/// Inverse of normalize; returns a free real raster because round-off can
/// leave values a hair outside [0,1].
inline RealGrid denormalize(const NormalizedImage& image, const NormalizationStats& stats) {
  std::vector<double> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = image[i] * stats.std + stats.mean;
  return RealGrid(image.height(), image.width(), std::move(out));
}

// ---------------------------------------------------------------------------
// Binarization

inline constexpr double kDefaultThreshold = 0.5;

inline BinaryMask binarize(const ProbabilityMap& probs, double threshold = kDefaultThreshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValueError("binarize: threshold must lie in (0,1)");
  }
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1 : 0;
  return BinaryMask(probs.height(), probs.width(), std::move(out));
}

}  // namespace startopo
