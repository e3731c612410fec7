#pragma once

// Synthetic M-mode corneal phantoms and the artifact model used to degrade
// them.
//
// A phantom is a dark background holding the corneal band: a bright
// epithelium band at the top edge, a dimmer stroma whose intensity decays
// with depth, and a bright Descemet's membrane band at the bottom edge.
// Both edges wobble smoothly across columns. The label is exactly the band
// [E_i, D_i] of every column.
//
// All randomness comes from Xoshiro256 streams derived from the caller's
// seed, so (config, seed) fully determines the output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "startopo/error.hpp"
#include "startopo/grid.hpp"
#include "startopo/rng.hpp"

namespace startopo {

struct IntRange {
  int min = 0;
  int max = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct LayerIntensity {
  double background = 0.06;
  double epithelium = 0.90;
  double stroma = 0.42;
  double dm = 0.78;
  friend bool operator==(const LayerIntensity&, const LayerIntensity&) = default;
};

struct BandThickness {
  int epithelium = 10;
  int dm = 6;
  friend bool operator==(const BandThickness&, const BandThickness&) = default;
};

struct PhantomConfig {
  int height = 512;
  int width = 512;
  IntRange epithelium_depth_range{96, 160};
  IntRange cornea_thickness_range{150, 230};
  double boundary_wobble_amplitude = 8.0;
  double boundary_wobble_wavelength = 320.0;
  LayerIntensity layer_intensity{};
  BandThickness band_thickness{};
  // Minimum clearance between the band and the top/bottom image edge.
  int margin = 16;

  friend bool operator==(const PhantomConfig&, const PhantomConfig&) = default;

  // Deepest possible DM row; the thickness wobble has half the edge amplitude.
  double max_dm_row() const {
    return epithelium_depth_range.max + boundary_wobble_amplitude + cornea_thickness_range.max +
           0.5 * boundary_wobble_amplitude;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("phantom config: " + msg); };
    auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    if (height < 16 || width < 1) fail("image must be at least 16 rows and 1 column");
    if (epithelium_depth_range.min > epithelium_depth_range.max ||
        cornea_thickness_range.min > cornea_thickness_range.max) {
      fail("ranges must satisfy min <= max");
    }
    if (cornea_thickness_range.min < 2) fail("cornea thickness must be at least 2 rows");
    if (!unit(layer_intensity.background) || !unit(layer_intensity.epithelium) ||
        !unit(layer_intensity.stroma) || !unit(layer_intensity.dm)) {
      fail("layer intensities must lie in [0,1]");
    }
    if (!(boundary_wobble_amplitude >= 0.0) || !std::isfinite(boundary_wobble_amplitude)) {
      fail("wobble amplitude must be >= 0");
    }
    if (!(boundary_wobble_amplitude < cornea_thickness_range.min / 4.0)) {
      fail("wobble amplitude must be below a quarter of the minimum cornea thickness");
    }
    if (!(boundary_wobble_wavelength > 0.0)) fail("wobble wavelength must be positive");
    if (band_thickness.epithelium < 1 || band_thickness.dm < 1 ||
        band_thickness.epithelium + band_thickness.dm > cornea_thickness_range.min) {
      fail("band thicknesses must be >= 1 and fit inside the thinnest cornea");
    }
    if (margin < 0) fail("margin must be >= 0");
    if (epithelium_depth_range.min - boundary_wobble_amplitude < margin) {
      fail("epithelium can come closer than the margin to the top edge");
    }
    if (!(max_dm_row() + margin < height)) {
      fail("epithelium depth + cornea thickness + wobble + margin must stay below the image height");
    }
  }
};

struct DegradationConfig {
  double speckle_sigma = 0.30;
  double dropout_column_prob = 0.10;
  IntRange dropout_depth_range{200, 420};
  IntRange hollow_region_count_range{1, 4};
  IntRange hollow_region_axes_range{6, 40};
  double intensity_drift_amplitude = 0.20;
  int column_jitter_amplitude = 1;

  friend bool operator==(const DegradationConfig&, const DegradationConfig&) = default;

  /// Configuration under which degrade() is the identity.
  static DegradationConfig none() {
    return DegradationConfig{0.0, 0.0, {0, 0}, {0, 0}, {0, 0}, 0.0, 0};
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("degradation config: " + msg); };
    if (!(speckle_sigma >= 0.0) || !std::isfinite(speckle_sigma)) fail("speckle sigma must be >= 0");
    if (!(dropout_column_prob >= 0.0 && dropout_column_prob <= 1.0)) {
      fail("dropout column probability must lie in [0,1]");
    }
    if (dropout_depth_range.min < 0 || dropout_depth_range.min > dropout_depth_range.max) {
      fail("dropout depth range must satisfy 0 <= min <= max");
    }
    if (hollow_region_count_range.min < 0 ||
        hollow_region_count_range.min > hollow_region_count_range.max) {
      fail("hollow region count range must satisfy 0 <= min <= max");
    }
    if (hollow_region_axes_range.min < 0 ||
        hollow_region_axes_range.min > hollow_region_axes_range.max) {
      fail("hollow region axes range must satisfy 0 <= min <= max");
    }
    if (!(intensity_drift_amplitude >= 0.0 && intensity_drift_amplitude < 1.0)) {
      fail("intensity drift amplitude must lie in [0,1)");
    }
    if (column_jitter_amplitude < 0) fail("column jitter amplitude must be >= 0");
  }
};

struct SamplePair {
  GrayImage image;
  BinaryMask label;
  std::vector<int> epithelium_rows;
  std::vector<int> dm_rows;
};

namespace detail {

// Random stream identifiers.
inline constexpr std::uint64_t kPhantomStream = 0x70686e74;  // "phnt"
inline constexpr std::uint64_t kDegradeStream = 0x64677264;  // "dgrd"

struct Wobble {
  std::vector<double> weight;
  std::vector<double> wavelength;
  std::vector<double> phase;

  static Wobble sample(Xoshiro256& rng, double base_wavelength) {
    Wobble w;
    const auto terms = static_cast<std::size_t>(rng.uniform_int(2, 3));
    double total = 0.0;
    for (std::size_t k = 0; k < terms; ++k) {
      w.weight.push_back(rng.uniform(0.5, 1.0));
      w.wavelength.push_back(base_wavelength * rng.uniform(0.6, 1.4));
      w.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
      total += w.weight.back();
    }
    for (double& x : w.weight) x /= total;
    return w;
  }

  // Bounded by the amplitude because the weights sum to one.
  double at(double col, double amplitude) const {
    if (amplitude == 0.0) return 0.0;
    double s = 0.0;
    for (std::size_t k = 0; k < weight.size(); ++k) {
      s += weight[k] * std::sin(2.0 * std::numbers::pi * col / wavelength[k] + phase[k]);
    }
    return amplitude * s;
  }
};

}  // namespace detail

inline SamplePair generate_phantom(const PhantomConfig& config, std::uint64_t seed) {
  config.validate();
  Xoshiro256 rng(derive_seed(seed, detail::kPhantomStream));
  const int h = config.height;
  const int w = config.width;
  const double amp = config.boundary_wobble_amplitude;
  const auto e0 = static_cast<double>(
      rng.uniform_int(config.epithelium_depth_range.min, config.epithelium_depth_range.max));
  const auto thickness = static_cast<double>(
      rng.uniform_int(config.cornea_thickness_range.min, config.cornea_thickness_range.max));
  const auto edge = detail::Wobble::sample(rng, config.boundary_wobble_wavelength);
  const auto thick = detail::Wobble::sample(rng, config.boundary_wobble_wavelength);

  SamplePair out{GrayImage(static_cast<std::size_t>(h), static_cast<std::size_t>(w)),
                 BinaryMask(static_cast<std::size_t>(h), static_cast<std::size_t>(w)),
                 std::vector<int>(static_cast<std::size_t>(w)),
                 std::vector<int>(static_cast<std::size_t>(w))};
  const auto& li = config.layer_intensity;
  for (int c = 0; c < w; ++c) {
    const int e = static_cast<int>(std::lround(e0 + edge.at(c, amp)));
    const int d = static_cast<int>(std::lround(e + thickness + thick.at(c, 0.5 * amp)));
    out.epithelium_rows[static_cast<std::size_t>(c)] = e;
    out.dm_rows[static_cast<std::size_t>(c)] = d;
    for (int r = 0; r < h; ++r) {
      double v = li.background;
      if (r >= e && r <= d) {
        if (r < e + config.band_thickness.epithelium) {
          v = li.epithelium;
        } else if (r > d - config.band_thickness.dm) {
          v = li.dm;
        } else {
          v = li.stroma * (1.0 - 0.25 * static_cast<double>(r - e) / static_cast<double>(d - e));
        }
        out.label(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 1;
      }
      out.image(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = v;
    }
  }
  return out;
}

namespace detail {
inline double low_quantile(std::span<const double> values, double q) {
  std::vector<double> copy(values.begin(), values.end());
  const auto k = static_cast<std::size_t>(q * static_cast<double>(copy.size() - 1));
  std::nth_element(copy.begin(), copy.begin() + static_cast<std::ptrdiff_t>(k), copy.end());
  return copy[k];
}
}  // namespace detail

/// Applies, in this order: multiplicative speckle, per-column signal
/// dropout below a random depth, elliptical hollow regions pulled toward the
/// background level, a slow horizontal intensity drift, and a per-column
/// circular vertical shift. The label of the source sample is unaffected.
inline GrayImage degrade(const GrayImage& image, const DegradationConfig& config,
                         std::uint64_t seed) {
  config.validate();
  Xoshiro256 rng(derive_seed(seed, detail::kDegradeStream));
  GrayImage out = image;
  const std::size_t h = image.height();
  const std::size_t w = image.width();

  if (config.speckle_sigma > 0.0) {
    for (double& v : out.values()) {
      v = std::clamp(v * (1.0 + config.speckle_sigma * rng.normal()), 0.0, 1.0);
    }
  }

  for (std::size_t c = 0; c < w; ++c) {
    if (!rng.bernoulli(config.dropout_column_prob)) continue;
    const auto depth = static_cast<std::size_t>(
        rng.uniform_int(config.dropout_depth_range.min, config.dropout_depth_range.max));
    const double keep = rng.uniform(0.05, 0.30);
    for (std::size_t r = std::min(depth, h); r < h; ++r) out(r, c) *= keep;
  }

  const auto hollows =
      rng.uniform_int(config.hollow_region_count_range.min, config.hollow_region_count_range.max);
  if (hollows > 0) {
    const double floor_level = detail::low_quantile(out.values(), 0.10);
    for (std::int64_t k = 0; k < hollows; ++k) {
      const auto col = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(w) - 1));
      // Centers land on the bright structure of the chosen column.
      double col_mean = 0.0;
      for (std::size_t r = 0; r < h; ++r) col_mean += out(r, col);
      col_mean /= static_cast<double>(h);
      std::vector<std::size_t> bright;
      for (std::size_t r = 0; r < h; ++r) {
        if (out(r, col) >= col_mean) bright.push_back(r);
      }
      const std::size_t row =
          bright.empty() ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(h) - 1))
                         : bright[static_cast<std::size_t>(
                               rng.uniform_int(0, static_cast<std::int64_t>(bright.size()) - 1))];
      const double axis_r = std::max(
          0.5, rng.uniform(config.hollow_region_axes_range.min, config.hollow_region_axes_range.max));
      const double axis_c = std::max(
          0.5, rng.uniform(config.hollow_region_axes_range.min, config.hollow_region_axes_range.max));
      const double strength = rng.uniform(0.7, 1.0);
      const auto r0 = static_cast<std::int64_t>(std::floor(static_cast<double>(row) - axis_r));
      const auto r1 = static_cast<std::int64_t>(std::ceil(static_cast<double>(row) + axis_r));
      const auto c0 = static_cast<std::int64_t>(std::floor(static_cast<double>(col) - axis_c));
      const auto c1 = static_cast<std::int64_t>(std::ceil(static_cast<double>(col) + axis_c));
      for (std::int64_t r = std::max<std::int64_t>(r0, 0); r <= std::min<std::int64_t>(r1, h - 1); ++r) {
        for (std::int64_t c = std::max<std::int64_t>(c0, 0); c <= std::min<std::int64_t>(c1, w - 1); ++c) {
          const double dr = (static_cast<double>(r) - static_cast<double>(row)) / axis_r;
          const double dc = (static_cast<double>(c) - static_cast<double>(col)) / axis_c;
          const double q2 = dr * dr + dc * dc;
          if (q2 >= 1.0) continue;
          const double weight = strength * (1.0 - q2 * q2);
          double& v = out(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
          v += weight * (floor_level - v);
        }
      }
    }
  }

  if (config.intensity_drift_amplitude > 0.0) {
    const double cycles = rng.uniform(0.5, 2.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t c = 0; c < w; ++c) {
      const double factor =
          1.0 + config.intensity_drift_amplitude *
                    std::sin(2.0 * std::numbers::pi * cycles * static_cast<double>(c) /
                                 static_cast<double>(w) + phase);
      for (std::size_t r = 0; r < h; ++r) out(r, c) = std::clamp(out(r, c) * factor, 0.0, 1.0);
    }
  }

  if (config.column_jitter_amplitude > 0) {
    const auto hi = static_cast<std::int64_t>(h);
    std::vector<double> column(h);
    for (std::size_t c = 0; c < w; ++c) {
      const std::int64_t shift =
          rng.uniform_int(-config.column_jitter_amplitude, config.column_jitter_amplitude);
      if (shift == 0) continue;
      for (std::size_t r = 0; r < h; ++r) column[r] = out(r, c);
      for (std::int64_t r = 0; r < hi; ++r) {
        const std::int64_t src = ((r - shift) % hi + hi) % hi;
        out(static_cast<std::size_t>(r), c) = column[static_cast<std::size_t>(src)];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const IntRange& r) { j = nlohmann::json::array({r.min, r.max}); }
inline void from_json(const nlohmann::json& j, IntRange& r) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("range must be a [min, max] array");
  r.min = j.at(0).get<int>();
  r.max = j.at(1).get<int>();
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LayerIntensity, background, epithelium, stroma, dm)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BandThickness, epithelium, dm)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PhantomConfig, height, width, epithelium_depth_range,
                                                cornea_thickness_range, boundary_wobble_amplitude,
                                                boundary_wobble_wavelength, layer_intensity,
                                                band_thickness, margin)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DegradationConfig, speckle_sigma, dropout_column_prob,
                                                dropout_depth_range, hollow_region_count_range,
                                                hollow_region_axes_range, intensity_drift_amplitude,
                                                column_jitter_amplitude)

}  // namespace startopo
