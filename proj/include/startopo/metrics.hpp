#pragma once

// Overlap, fidelity and boundary-tracking metrics used by the evaluation
// protocol.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "startopo/error.hpp"
#include "startopo/grid.hpp"

namespace startopo {

inline constexpr double kPixelPitchUm = 2.61;
inline constexpr double kPsnrCapDb = 100.0;

struct OverlapCounts {
  std::size_t intersection = 0;
  std::size_t pred = 0;
  std::size_t truth = 0;
};

inline OverlapCounts overlap_counts(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_shape(pred, truth, "overlap");
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    c.pred += pred[i];
    c.truth += truth[i];
    c.intersection += pred[i] & truth[i];
  }
  return c;
}

/// |A ∩ B| / |A ∪ B|; two empty masks agree perfectly (1).
inline double iou(const BinaryMask& pred, const BinaryMask& truth) {
  const auto c = overlap_counts(pred, truth);
  const std::size_t uni = c.pred + c.truth - c.intersection;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.intersection) / static_cast<double>(uni);
}

/// 2|A ∩ B| / (|A| + |B|); two empty masks agree perfectly (1).
inline double dice(const BinaryMask& pred, const BinaryMask& truth) {
  const auto c = overlap_counts(pred, truth);
  const std::size_t total = c.pred + c.truth;
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(c.intersection) / static_cast<double>(total);
}

/// Peak signal-to-noise ratio with dynamic range 1. Returns +infinity when
/// the rasters are identical; see psnr_for_aggregate.
template <typename A, typename B>
double psnr(const A& pred, const B& truth) {
  require_same_shape(pred, truth, "psnr");
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(pred.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline double psnr_for_aggregate(double db) { return std::isinf(db) ? kPsnrCapDb : db; }

// ---------------------------------------------------------------------------
// SSIM

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(window));
  const double half = (window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    const double x = i - half;
    taps[static_cast<std::size_t>(i)] = std::exp(-(x * x) / (2.0 * sigma * sigma));
    sum += taps[static_cast<std::size_t>(i)];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

namespace detail {
// Valid-region separable filtering: output is (H - win + 1) x (W - win + 1).
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                        const std::vector<double>& taps) {
  const std::size_t win = taps.size();
  const std::size_t oh = h - win + 1;
  const std::size_t ow = w - win + 1;
  std::vector<double> horiz(h * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < win; ++k) acc += taps[k] * img[r * w + c + k];
      horiz[r * ow + c] = acc;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < win; ++k) acc += taps[k] * horiz[(r + k) * ow + c];
      out[r * ow + c] = acc;
    }
  }
  return out;
}
}  // namespace detail

/// Mean structural similarity over every fully contained Gaussian window.
template <typename A, typename B>
double ssim(const A& a, const B& b, const SsimParams& params = {}) {
  require_same_shape(a, b, "ssim");
  const auto win = static_cast<std::size_t>(params.window);
  if (a.height() < win || a.width() < win) {
    throw DimensionError("ssim: image smaller than the " + std::to_string(params.window) + "x" +
                         std::to_string(params.window) + " window");
  }
  const std::size_t h = a.height();
  const std::size_t w = a.width();
  std::vector<double> x(a.size()), y(a.size()), xx(a.size()), yy(a.size()), xy(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    x[i] = static_cast<double>(a[i]);
    y[i] = static_cast<double>(b[i]);
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto taps = gaussian_taps(params.window, params.sigma);
  const auto mx = detail::filter_valid(x, h, w, taps);
  const auto my = detail::filter_valid(y, h, w, taps);
  const auto exx = detail::filter_valid(xx, h, w, taps);
  const auto eyy = detail::filter_valid(yy, h, w, taps);
  const auto exy = detail::filter_valid(xy, h, w, taps);
  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double mu_x = mx[i];
    const double mu_y = my[i];
    const double var_x = exx[i] - mu_x * mu_x;
    const double var_y = eyy[i] - mu_y * mu_y;
    const double cov = exy[i] - mu_x * mu_y;
    total += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) /
             ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
  }
  return total / static_cast<double>(mx.size());
}

// ---------------------------------------------------------------------------
// Boundary tracking

/// Per-column epithelium (top) and Descemet's membrane (bottom) rows of the
/// segmented band. Columns without foreground hold nullopt.
struct BoundaryTrace {
  std::size_t height = 0;
  std::vector<std::optional<int>> epithelium_rows;
  std::vector<std::optional<int>> dm_rows;

  std::size_t width() const { return epithelium_rows.size(); }
  std::size_t valid_columns() const {
    std::size_t n = 0;
    for (const auto& e : epithelium_rows) n += e.has_value();
    return n;
  }
};

inline BoundaryTrace extract_boundaries(const BinaryMask& mask) {
  BoundaryTrace trace;
  trace.height = mask.height();
  trace.epithelium_rows.assign(mask.width(), std::nullopt);
  trace.dm_rows.assign(mask.width(), std::nullopt);
  for (std::size_t r = 0; r < mask.height(); ++r) {
    for (std::size_t c = 0; c < mask.width(); ++c) {
      if (!mask(r, c)) continue;
      if (!trace.epithelium_rows[c]) trace.epithelium_rows[c] = static_cast<int>(r);
      trace.dm_rows[c] = static_cast<int>(r);
    }
  }
  return trace;
}

struct TrackingErrorReport {
  double epithelium_error_px = 0.0;
  double dm_error_px = 0.0;
  double epithelium_error_um = 0.0;
  double dm_error_um = 0.0;
  double pixel_pitch_um = kPixelPitchUm;
  double invalid_column_fraction = 0.0;
  std::size_t compared_columns = 0;
};

inline double pixels_to_um(double px) { return px * kPixelPitchUm; }

/// Mean absolute boundary displacement over columns valid in both traces.
/// Prediction holes (columns valid in the truth only) are reported as a
/// fraction of the image width instead of being mixed into the distances.
/// With no comparable column the errors are NaN.
inline TrackingErrorReport tracking_error(const BoundaryTrace& pred, const BoundaryTrace& truth) {
  if (pred.width() != truth.width()) {
    throw DimensionError("tracking_error: trace widths differ (" + std::to_string(pred.width()) +
                         " vs " + std::to_string(truth.width()) + ")");
  }
  TrackingErrorReport rep;
  double epi = 0.0;
  double dm = 0.0;
  std::size_t holes = 0;
  for (std::size_t c = 0; c < pred.width(); ++c) {
    const bool p_ok = pred.epithelium_rows[c].has_value();
    const bool t_ok = truth.epithelium_rows[c].has_value();
    if (t_ok && !p_ok) ++holes;
    if (!p_ok || !t_ok) continue;
    epi += std::abs(*pred.epithelium_rows[c] - *truth.epithelium_rows[c]);
    dm += std::abs(*pred.dm_rows[c] - *truth.dm_rows[c]);
    ++rep.compared_columns;
  }
  if (rep.compared_columns == 0) {
    rep.epithelium_error_px = std::numeric_limits<double>::quiet_NaN();
    rep.dm_error_px = std::numeric_limits<double>::quiet_NaN();
  } else {
    const auto n = static_cast<double>(rep.compared_columns);
    rep.epithelium_error_px = epi / n;
    rep.dm_error_px = dm / n;
  }
  rep.epithelium_error_um = pixels_to_um(rep.epithelium_error_px);
  rep.dm_error_um = pixels_to_um(rep.dm_error_px);
  rep.invalid_column_fraction =
      pred.width() == 0 ? 0.0 : static_cast<double>(holes) / static_cast<double>(pred.width());
  return rep;
}

}  // namespace startopo
