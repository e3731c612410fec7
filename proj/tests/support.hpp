#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "startopo/grid.hpp"
#include "startopo/rng.hpp"
#include "startopo/synth.hpp"

namespace startopo::testing {

inline BinaryMask random_mask(Xoshiro256& rng, std::size_t h, std::size_t w, double density = 0.5) {
  BinaryMask m(h, w);
  for (auto& v : m.values()) v = rng.bernoulli(density) ? 1 : 0;
  return m;
}

inline ProbabilityMap random_probs(Xoshiro256& rng, std::size_t h, std::size_t w, double lo = 0.0, double hi = 1.0) {
  ProbabilityMap p(h, w);
  for (auto& v : p.values()) v = rng.uniform(lo, hi);
  return p;
}

inline GrayImage random_gray(Xoshiro256& rng, std::size_t h, std::size_t w) {
  GrayImage g(h, w);
  for (auto& v : g.values()) v = rng.uniform01();
  return g;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("startopo_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 64x64 phantoms: small enough for fast end-to-end tests.
inline PhantomConfig small_phantom() {
  PhantomConfig c;
  c.height = 64;
  c.width = 64;
  c.epithelium_depth_range = {14, 20};
  c.cornea_thickness_range = {22, 30};
  c.boundary_wobble_amplitude = 2.0;
  c.boundary_wobble_wavelength = 48.0;
  c.band_thickness = {3, 2};
  c.margin = 4;
  return c;
}

inline DegradationConfig small_degradation() {
  DegradationConfig d;
  d.dropout_depth_range = {20, 50};
  d.hollow_region_count_range = {0, 1};
  d.hollow_region_axes_range = {2, 6};
  return d;
}

}  // namespace startopo::testing

#include "startopo/checkpoint.hpp"
#include "startopo/segnet.hpp"

namespace startopo::testing {

// Untrained but valid checkpoint for pipeline plumbing tests.
inline Checkpoint random_checkpoint(int levels, int base, int strip_width, std::uint64_t seed = 1) {
  Checkpoint c;
  c.network.levels = levels;
  c.network.base_channels = base;
  c.params = SegNet(c.network, seed).params();
  c.training.strip_width = strip_width;
  c.normalization = {0.3, 0.2};
  c.history = {{1, 2.0, 3.0, 0.5}};
  c.best_epoch = 1;
  return c;
}

}  // namespace startopo::testing
