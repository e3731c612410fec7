#pragma once

// Pixel-wise binary cross-entropy, the star-shape topological loss and
// their weighted combination. Every loss returns its value together with
// the analytic gradient with respect to the predicted probabilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "startopo/bresenham.hpp"
#include "startopo/error.hpp"
#include "startopo/grid.hpp"
#include "startopo/rng.hpp"

namespace startopo {

inline constexpr double kLogClamp = 1e-7;

struct LossWeights {
  double alpha = 1.0;
  double beta = 2.0;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0) || !std::isfinite(alpha) ||
        !std::isfinite(beta)) {
      throw ConfigError("loss weights require alpha >= 0, beta >= 0 and alpha + beta > 0");
    }
  }
};

struct LossResult {
  double value = 0.0;
  RealGrid gradient;
};

namespace detail {
inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
}  // namespace detail

/// Sum-reduced BCE. Predictions are clamped to [eps, 1 - eps] before the
/// logarithms; the gradient is that of the clamped expression, so it is zero
/// where the clamp is active.
inline LossResult bce_loss(const ProbabilityMap& pred, const BinaryMask& truth,
                           double eps = kLogClamp) {
  require_same_shape(pred, truth, "bce_loss");
  LossResult out{0.0, RealGrid(pred.height(), pred.width())};
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i];
    const double pc = std::clamp(p, eps, 1.0 - eps);
    const bool saturated = p < eps || p > 1.0 - eps;
    if (truth[i] == 1) {
      total -= std::log(pc);
      out.gradient[i] = saturated ? 0.0 : -1.0 / pc;
    } else {
      total -= std::log1p(-pc);
      out.gradient[i] = saturated ? 0.0 : 1.0 / (1.0 - pc);
    }
  }
  out.value = total;
  return out;
}

// ---------------------------------------------------------------------------
// Star geometry

/// Region center plus one rasterized ray per (sampled) foreground pixel.
///
/// Rays are stored in compressed form: the ray of `sources[s]` occupies
/// `ray_indices[ray_offsets[s] .. ray_offsets[s + 1])`. All pixel references
/// are flat row-major indices. A ray runs from its source toward the
/// center, excludes the source and includes the center.
struct StarGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  Pixel center{};
  bool empty = true;
  std::size_t foreground_count = 0;
  std::size_t ray_stride = 1;
  std::vector<std::uint32_t> sources;
  std::vector<std::uint32_t> ray_offsets{0};
  std::vector<std::uint32_t> ray_indices;

  std::span<const std::uint32_t> ray(std::size_t s) const {
    return std::span<const std::uint32_t>(ray_indices)
        .subspan(ray_offsets[s], ray_offsets[s + 1] - ray_offsets[s]);
  }
};

/// Centroid of the foreground rounded to the nearest pixel, snapped to the
/// nearest foreground pixel (Euclidean, first in row-major order on ties)
/// when the rounded centroid is background. Empty foreground yields nullopt.
inline std::optional<Pixel> find_star_center(const BinaryMask& truth) {
  double sum_r = 0.0;
  double sum_c = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < truth.height(); ++r) {
    for (std::size_t c = 0; c < truth.width(); ++c) {
      if (truth(r, c)) {
        sum_r += static_cast<double>(r);
        sum_c += static_cast<double>(c);
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  const auto n = static_cast<double>(count);
  Pixel center{static_cast<int>(std::lround(sum_r / n)), static_cast<int>(std::lround(sum_c / n))};
  if (truth(static_cast<std::size_t>(center.row), static_cast<std::size_t>(center.col))) {
    return center;
  }
  long best = -1;
  Pixel snapped{};
  for (std::size_t r = 0; r < truth.height(); ++r) {
    for (std::size_t c = 0; c < truth.width(); ++c) {
      if (!truth(r, c)) continue;
      const long dr = static_cast<long>(r) - center.row;
      const long dc = static_cast<long>(c) - center.col;
      const long d2 = dr * dr + dc * dc;
      if (best < 0 || d2 < best) {
        best = d2;
        snapped = Pixel{static_cast<int>(r), static_cast<int>(c)};
      }
    }
  }
  return snapped;
}

/// Builds rays toward an explicit center. Used directly when the center is
/// known (e.g. a mirrored geometry); `center` must be a foreground pixel
/// unless the mask is empty.
inline StarGeometry build_star_geometry(const BinaryMask& truth, Pixel center,
                                        std::size_t ray_stride = 1) {
  if (ray_stride == 0) throw ConfigError("ray stride must be >= 1");
  StarGeometry geom;
  geom.height = truth.height();
  geom.width = truth.width();
  geom.ray_stride = ray_stride;
  for (std::uint8_t v : truth.values()) geom.foreground_count += v;
  geom.empty = geom.foreground_count == 0;
  if (geom.empty) return geom;

  if (center.row < 0 || center.col < 0 || static_cast<std::size_t>(center.row) >= truth.height() ||
      static_cast<std::size_t>(center.col) >= truth.width() ||
      !truth(static_cast<std::size_t>(center.row), static_cast<std::size_t>(center.col))) {
    throw ConsistencyError("star center must be a foreground pixel inside the image");
  }
  geom.center = center;
  const auto w = static_cast<std::uint32_t>(truth.width());
  std::size_t seen = 0;
  for (std::size_t idx = 0; idx < truth.size(); ++idx) {
    if (!truth[idx]) continue;
    if (seen++ % ray_stride != 0) continue;
    geom.sources.push_back(static_cast<std::uint32_t>(idx));
    const Pixel from{static_cast<int>(idx / w), static_cast<int>(idx % w)};
    trace_ray(from, center, [&](Pixel p) {
      geom.ray_indices.push_back(static_cast<std::uint32_t>(p.row) * w +
                                 static_cast<std::uint32_t>(p.col));
    });
    geom.ray_offsets.push_back(static_cast<std::uint32_t>(geom.ray_indices.size()));
  }
  return geom;
}

inline StarGeometry build_star_geometry(const BinaryMask& truth, std::size_t ray_stride = 1) {
  const auto center = find_star_center(truth);
  if (!center) {
    StarGeometry geom;
    geom.height = truth.height();
    geom.width = truth.width();
    geom.ray_stride = ray_stride;
    return geom;
  }
  return build_star_geometry(truth, *center, ray_stride);
}

namespace detail {
inline void check_geometry(const BinaryMask& truth, const StarGeometry& geom) {
  if (!truth.same_shape(geom.height, geom.width)) {
    throw ConsistencyError("star geometry was built for a different raster shape");
  }
  std::size_t fg = 0;
  for (std::uint8_t v : truth.values()) fg += v;
  const std::size_t expected_sources = geom.ray_stride == 0 ? 0 : (fg + geom.ray_stride - 1) / geom.ray_stride;
  if (fg != geom.foreground_count || geom.sources.size() != expected_sources ||
      geom.ray_offsets.size() != geom.sources.size() + 1) {
    throw ConsistencyError("star geometry does not match the ground-truth foreground");
  }
  for (std::uint32_t s : geom.sources) {
    if (s >= truth.size() || !truth[s]) {
      throw ConsistencyError("star geometry source is not a ground-truth foreground pixel");
    }
  }
}
}  // namespace detail

/// Star-shape topological loss
///   sum_{i in O} sum_{j on ray(i)} B_ij |y_i - p_i| |p_i - p_j|
/// with O the ground-truth foreground and B_ij = [y_i == y_j]. The gradient
/// is the subgradient with sign(0) = 0.
inline LossResult topological_loss(const ProbabilityMap& pred, const BinaryMask& truth,
                                   const StarGeometry& geom) {
  require_same_shape(pred, truth, "topological_loss");
  detail::check_geometry(truth, geom);
  LossResult out{0.0, RealGrid(pred.height(), pred.width())};
  auto& grad = out.gradient;
  double total = 0.0;
  for (std::size_t s = 0; s < geom.sources.size(); ++s) {
    const std::uint32_t i = geom.sources[s];
    const std::uint8_t yi = truth[i];
    const double pi = pred[i];
    const double a = static_cast<double>(yi) - pi;
    const double abs_a = std::abs(a);
    const double sign_a = detail::sign0(a);
    double gi = 0.0;
    for (std::uint32_t j : geom.ray(s)) {
      if (truth[j] != yi) continue;
      const double b = pi - pred[j];
      const double abs_b = std::abs(b);
      const double sign_b = detail::sign0(b);
      total += abs_a * abs_b;
      gi += -sign_a * abs_b + abs_a * sign_b;
      grad[j] -= abs_a * sign_b;
    }
    grad[i] += gi;
  }
  out.value = total;
  return out;
}

inline LossResult hybrid_loss(const ProbabilityMap& pred, const BinaryMask& truth,
                              const LossWeights& weights, const StarGeometry& geom) {
  weights.validate();
  LossResult bce = bce_loss(pred, truth);
  if (weights.beta == 0.0) {
    if (weights.alpha != 1.0) {
      bce.value *= weights.alpha;
      for (double& g : bce.gradient.values()) g *= weights.alpha;
    }
    return bce;
  }
  const LossResult topo = topological_loss(pred, truth, geom);
  LossResult out{weights.alpha * bce.value + weights.beta * topo.value,
                 RealGrid(pred.height(), pred.width())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.gradient[i] = weights.alpha * bce.gradient[i] + weights.beta * topo.gradient[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient verification

using LossFunction = std::function<LossResult(const ProbabilityMap&)>;

/// Flags pixels whose finite-difference stencil [p - h, p + h] would cross a
/// non-differentiable point of the loss.
using KinkPredicate = std::function<bool(std::size_t pixel, double step)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t tested = 0;
  std::size_t skipped = 0;
};

// Below this magnitude gradients are compared on an absolute scale.
inline constexpr double kGradCheckFloor = 1e-3;

/// Pixels within 2h of the log clamp edges.
inline KinkPredicate bce_kinks(const ProbabilityMap& pred, double eps = kLogClamp) {
  return [&pred, eps](std::size_t k, double h) {
    const double p = pred[k];
    return std::abs(p - eps) < 2.0 * h || std::abs(p - (1.0 - eps)) < 2.0 * h;
  };
}

/// Pixels taking part in a topological term whose |y_i - p_i| or
/// |p_i - p_j| factor is within 2h of zero.
inline KinkPredicate topological_kinks(const ProbabilityMap& pred, const BinaryMask& truth,
                                       const StarGeometry& geom, double step) {
  std::vector<std::uint8_t> flagged(pred.size(), 0);
  for (std::size_t s = 0; s < geom.sources.size(); ++s) {
    const std::uint32_t i = geom.sources[s];
    if (std::abs(static_cast<double>(truth[i]) - pred[i]) < 2.0 * step) flagged[i] = 1;
    for (std::uint32_t j : geom.ray(s)) {
      if (truth[j] != truth[i]) continue;
      if (std::abs(pred[i] - pred[j]) < 2.0 * step) {
        flagged[i] = 1;
        flagged[j] = 1;
      }
    }
  }
  return [flagged = std::move(flagged)](std::size_t k, double) { return flagged[k] != 0; };
}

/// Compares the analytic gradient of `loss` with central differences at
/// `trials` randomly drawn pixels and returns the largest relative error,
/// |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
/// Pixels flagged by `kinks`, or whose stencil leaves [0,1], are skipped.
inline GradCheckReport finite_difference_check(const LossFunction& loss, const ProbabilityMap& pred,
                                               double step, std::size_t trials, std::uint64_t seed,
                                               const KinkPredicate& kinks = {}) {
  if (!(step > 0.0 && step <= 1e-2)) throw ConfigError("finite-difference step must be in (0, 1e-2]");
  const LossResult base = loss(pred);
  ProbabilityMap probe = pred;
  Xoshiro256 rng(seed);
  GradCheckReport report;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pred.size()) - 1));
    const double p = pred[k];
    if (p - step < 0.0 || p + step > 1.0 || (kinks && kinks(k, step))) {
      ++report.skipped;
      continue;
    }
    probe[k] = p + step;
    const double plus = loss(probe).value;
    probe[k] = p - step;
    const double minus = loss(probe).value;
    probe[k] = p;
    const double numeric = (plus - minus) / (2.0 * step);
    const double analytic = base.gradient[k];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
    report.max_relative_error = std::max(report.max_relative_error, std::abs(analytic - numeric) / denom);
    ++report.tested;
  }
  return report;
}

}  // namespace startopo
