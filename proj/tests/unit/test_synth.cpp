#include <gtest/gtest.h>

#include <numeric>

#include "startopo/dataset.hpp"
#include "startopo/losses.hpp"
#include "startopo/png_io.hpp"
#include "startopo/synth.hpp"
#include "support.hpp"

using namespace startopo;
using startopo::testing::slurp;
using startopo::testing::TempDir;

namespace {

double mean(const GrayImage& g) {
  return std::accumulate(g.values().begin(), g.values().end(), 0.0) / static_cast<double>(g.size());
}

}  // namespace

TEST(Phantom, DeterministicPerSeed) {
  const PhantomConfig cfg;
  const auto a = generate_phantom(cfg, 11);
  const auto b = generate_phantom(cfg, 11);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.label, b.label);
  EXPECT_EQ(a.epithelium_rows, b.epithelium_rows);
  EXPECT_NE(generate_phantom(cfg, 12).image, a.image);
}

TEST(Phantom, LabelIsTheBandBetweenBoundaries) {
  const PhantomConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_phantom(cfg, seed);
    ASSERT_EQ(s.epithelium_rows.size(), static_cast<std::size_t>(cfg.width));
    for (std::size_t c = 0; c < s.label.width(); ++c) {
      const int e = s.epithelium_rows[c];
      const int d = s.dm_rows[c];
      ASSERT_GT(e, 0);
      ASSERT_LT(e, d);
      ASSERT_LT(d, cfg.height - 1);
      int runs = 0;
      for (std::size_t r = 0; r < s.label.height(); ++r) {
        const bool inside = static_cast<int>(r) >= e && static_cast<int>(r) <= d;
        ASSERT_EQ(s.label(r, c), inside ? 1 : 0);
        if (s.label(r, c) && (r == 0 || !s.label(r - 1, c))) ++runs;
      }
      EXPECT_EQ(runs, 1);
    }
  }
}

TEST(Phantom, ZeroWobbleGivesFlatEpithelium) {
  PhantomConfig cfg;
  cfg.boundary_wobble_amplitude = 0.0;
  const auto s = generate_phantom(cfg, 3);
  for (int e : s.epithelium_rows) EXPECT_EQ(e, s.epithelium_rows.front());
}

TEST(Phantom, ForegroundFractionIsBalanced) {
  const auto s = generate_phantom(PhantomConfig{}, 0);
  const double fg = std::accumulate(s.label.values().begin(), s.label.values().end(), 0.0) /
                    static_cast<double>(s.label.size());
  EXPECT_GE(fg, 0.1);
  EXPECT_LE(fg, 0.6);
}

TEST(Phantom, InvalidConfigRejected) {
  PhantomConfig cfg;
  cfg.boundary_wobble_amplitude = 60.0;
  EXPECT_THROW(generate_phantom(cfg, 0), ConfigError);
  cfg = PhantomConfig{};
  cfg.layer_intensity.stroma = 1.2;
  EXPECT_THROW(generate_phantom(cfg, 0), ConfigError);
  cfg = PhantomConfig{};
  cfg.cornea_thickness_range = {300, 400};
  EXPECT_THROW(generate_phantom(cfg, 0), ConfigError);
}

TEST(Phantom, BandIsStarShapedPerStrip) {
  // Every ray from a band pixel to the strip's star center stays inside the
  // band, for the 64-column strips the loss is evaluated on.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = generate_phantom(PhantomConfig{}, seed);
    for (const auto& strip : crop_to_patches(s.label, 64).patches) {
      const auto geom = build_star_geometry(strip);
      ASSERT_FALSE(geom.empty);
      for (std::size_t k = 0; k < geom.sources.size(); ++k) {
        for (std::uint32_t j : geom.ray(k)) ASSERT_EQ(strip[j], 1) << "seed " << seed;
      }
    }
  }
}

TEST(Degrade, ZeroConfigIsIdentity) {
  const auto s = generate_phantom(PhantomConfig{}, 5);
  EXPECT_EQ(degrade(s.image, DegradationConfig::none(), 5), s.image);
}

TEST(Degrade, DeterministicAndChangesImage) {
  const auto s = generate_phantom(PhantomConfig{}, 6);
  const auto a = degrade(s.image, DegradationConfig{}, 6);
  EXPECT_EQ(a, degrade(s.image, DegradationConfig{}, 6));
  EXPECT_NE(a, s.image);
}

TEST(Degrade, FullDropoutDarkensImage) {
  const auto s = generate_phantom(PhantomConfig{}, 7);
  auto cfg = DegradationConfig::none();
  cfg.dropout_column_prob = 1.0;
  cfg.dropout_depth_range = {0, 511};
  EXPECT_LT(mean(degrade(s.image, cfg, 7)), mean(s.image));
}

TEST(Degrade, InvalidConfigRejected) {
  DegradationConfig cfg;
  cfg.dropout_column_prob = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = DegradationConfig{};
  cfg.speckle_sigma = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Dataset, WritesFilesManifestAndSplits) {
  TempDir dir("synth");
  const auto m = generate_dataset(10, startopo::testing::small_phantom(), startopo::testing::small_degradation(), 3,
                                  dir.path());
  EXPECT_EQ(m.samples.size(), 10u);
  EXPECT_EQ(m.indices(Split::Test).size(), 2u);
  EXPECT_EQ(m.indices(Split::Val).size(), 2u);
  EXPECT_EQ(m.indices(Split::Train).size(), 6u);
  const auto loaded = load_manifest(dir.path());
  ASSERT_EQ(loaded.samples.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(loaded.samples[i].sample_seed, 3 + i);
    EXPECT_EQ(loaded.samples[i].split, m.samples[i].split);
    // Labels on disk are the untouched phantom labels.
    const auto truth = generate_phantom(startopo::testing::small_phantom(), 3 + i);
    EXPECT_EQ(load_sample(loaded, i, ImageSource::Degraded).label, truth.label);
    EXPECT_EQ(load_sample(loaded, i, ImageSource::Clean).label, truth.label);
  }
}

TEST(Dataset, ByteIdenticalRegeneration) {
  TempDir a("synth_a");
  TempDir b("synth_b");
  generate_dataset(6, startopo::testing::small_phantom(), startopo::testing::small_degradation(), 9, a.path());
  generate_dataset(6, startopo::testing::small_phantom(), startopo::testing::small_degradation(), 9, b.path());
  for (const auto& entry : std::filesystem::directory_iterator(a.path())) {
    const auto name = entry.path().filename();
    EXPECT_EQ(slurp(entry.path()), slurp(b.path() / name)) << name;
  }
}

TEST(Dataset, ZeroCountRejected) {
  TempDir dir("synth_zero");
  EXPECT_THROW(generate_dataset(0, PhantomConfig{}, DegradationConfig{}, 0, dir.path()), ConfigError);
}

TEST(Dataset, FullSizeSplitCounts) {
  // 250 samples: 50 test, then 20% of the remaining 200 for validation.
  TempDir dir("synth_250");
  PhantomConfig p = startopo::testing::small_phantom();
  const auto m = generate_dataset(250, p, startopo::testing::small_degradation(), 1, dir.path());
  EXPECT_EQ(m.indices(Split::Test).size(), 50u);
  EXPECT_EQ(m.indices(Split::Val).size(), 40u);
  EXPECT_EQ(m.indices(Split::Train).size(), 160u);
}

TEST(PngIo, RoundTripsAndRejectsBadMasks) {
  TempDir dir("png");
  std::vector<double> v{0.0, 1.0 / 255.0, 128.0 / 255.0, 1.0};
  const GrayImage img(2, 2, v);
  write_gray_png(dir / "g.png", img);
  EXPECT_EQ(read_gray_png(dir / "g.png"), img);
  const BinaryMask mask(2, 2, std::vector<std::uint8_t>{0, 1, 1, 0});
  write_mask_png(dir / "m.png", mask);
  EXPECT_EQ(read_mask_png(dir / "m.png"), mask);
  EXPECT_THROW(read_mask_png(dir / "g.png"), IoError);
  EXPECT_THROW(read_gray_png(dir / "missing.png"), IoError);
}
