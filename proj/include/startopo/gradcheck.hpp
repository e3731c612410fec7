#pragma once

// Seeded finite-difference verification of the three losses over random
// instances.

#include <array>
#include <cstdint>
#include <string>

#include "startopo/losses.hpp"
#include "startopo/rng.hpp"

namespace startopo {

struct GradCheckConfig {
  std::uint64_t seed = 0;
  int instances = 50;
  int size = 16;
  double step = 1e-5;
  int trials = 256;  // random pixel draws per instance and loss
  double tolerance = 1e-3;
  LossWeights weights{};
  // Test hook: "bce", "topological" or "hybrid" scales that loss's analytic
  // gradient by 1.01 so the check must fail.
  std::string corrupt;
};

struct LossInstance {
  ProbabilityMap pred;
  BinaryMask truth;
};

/// Band-shaped or scattered random mask with uniform predictions in
/// [0.02, 0.98].
inline LossInstance random_loss_instance(Xoshiro256& rng, std::size_t height, std::size_t width) {
  LossInstance inst{ProbabilityMap(height, width), BinaryMask(height, width)};
  if (rng.bernoulli(0.5)) {
    const auto h = static_cast<std::int64_t>(height);
    std::int64_t top = rng.uniform_int(0, h / 2);
    std::int64_t bottom = rng.uniform_int(top, h - 1);
    for (std::size_t c = 0; c < width; ++c) {
      for (auto r = top; r <= bottom; ++r) inst.truth(static_cast<std::size_t>(r), c) = 1;
      top = std::clamp<std::int64_t>(top + rng.uniform_int(-1, 1), 0, h - 1);
      bottom = std::clamp<std::int64_t>(bottom + rng.uniform_int(-1, 1), top, h - 1);
    }
  } else {
    const double density = rng.uniform(0.2, 0.8);
    for (auto& v : inst.truth.values()) v = rng.bernoulli(density) ? 1 : 0;
  }
  for (auto& p : inst.pred.values()) p = rng.uniform(0.02, 0.98);
  return inst;
}

struct LossCheckSummary {
  std::string loss;
  double max_relative_error = 0.0;
  std::size_t tested = 0;
  std::size_t skipped = 0;
};

struct GradCheckOutcome {
  std::array<LossCheckSummary, 3> losses{{{"bce"}, {"topological"}, {"hybrid"}}};
  bool passed = false;
};

inline GradCheckOutcome run_gradcheck(const GradCheckConfig& cfg) {
  if (cfg.instances < 1 || cfg.size < 1 || cfg.trials < 1) {
    throw ConfigError("gradcheck: instances, size and trials must be positive");
  }
  if (!(cfg.tolerance > 0.0)) throw ConfigError("gradcheck: tolerance must be positive");
  if (!cfg.corrupt.empty() && cfg.corrupt != "bce" && cfg.corrupt != "topological" && cfg.corrupt != "hybrid") {
    throw ConfigError("gradcheck: unknown loss '" + cfg.corrupt + "' for gradient corruption");
  }
  cfg.weights.validate();
  GradCheckOutcome out;
  Xoshiro256 rng(cfg.seed);
  const auto n = static_cast<std::size_t>(cfg.size);
  for (int t = 0; t < cfg.instances; ++t) {
    const LossInstance inst = random_loss_instance(rng, n, n);
    const StarGeometry geom = build_star_geometry(inst.truth);
    const auto corrupted = [&](const std::string& name, LossResult r) {
      if (cfg.corrupt == name) {
        for (double& g : r.gradient.values()) g *= 1.01;
      }
      return r;
    };
    const std::array<LossFunction, 3> fns{
        [&](const ProbabilityMap& p) { return corrupted("bce", bce_loss(p, inst.truth)); },
        [&](const ProbabilityMap& p) { return corrupted("topological", topological_loss(p, inst.truth, geom)); },
        [&](const ProbabilityMap& p) {
          return corrupted("hybrid", hybrid_loss(p, inst.truth, cfg.weights, geom));
        }};
    const auto bk = bce_kinks(inst.pred);
    const auto tk = topological_kinks(inst.pred, inst.truth, geom, cfg.step);
    const std::array<KinkPredicate, 3> kinks{bk, tk, [&](std::size_t k, double h) { return bk(k, h) || tk(k, h); }};
    for (std::size_t l = 0; l < 3; ++l) {
      const auto rep = finite_difference_check(fns[l], inst.pred, cfg.step, static_cast<std::size_t>(cfg.trials),
                                               derive_seed(cfg.seed, static_cast<std::uint64_t>(t) * 3 + l), kinks[l]);
      auto& s = out.losses[l];
      s.max_relative_error = std::max(s.max_relative_error, rep.max_relative_error);
      s.tested += rep.tested;
      s.skipped += rep.skipped;
    }
  }
  out.passed = true;
  for (const auto& s : out.losses) out.passed = out.passed && s.tested > 0 && s.max_relative_error <= cfg.tolerance;
  return out;
}

}  // namespace startopo
