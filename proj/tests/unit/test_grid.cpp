#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "startopo/grid.hpp"
#include "support.hpp"

using namespace startopo;
using startopo::testing::random_gray;
using startopo::testing::random_probs;

TEST(Grid, ConstructorsValidateDomain) {
  EXPECT_THROW(GrayImage(2, 2, std::vector<double>{0.0, 0.5, 1.5, 0.2}), ValueError);
  EXPECT_THROW(ProbabilityMap(1, 1, std::vector<double>{NAN}), ValueError);
  EXPECT_THROW(BinaryMask(1, 2, std::vector<std::uint8_t>{0, 2}), ValueError);
  EXPECT_THROW(GrayImage(0, 4), DimensionError);
  EXPECT_THROW(GrayImage(2, 2, std::vector<double>{0.1, 0.2, 0.3}), DimensionError);
  EXPECT_NO_THROW(NormalizedImage(1, 2, std::vector<double>{-7.0, 12.0}));
}

TEST(Patches, FullSizeImageGivesEightStrips) {
  Xoshiro256 rng(1);
  const auto img = random_gray(rng, 512, 512);
  const auto set = crop_to_patches(img, 64);
  ASSERT_EQ(set.patches.size(), 8u);
  for (const auto& p : set.patches) {
    EXPECT_EQ(p.height(), 512u);
    EXPECT_EQ(p.width(), 64u);
  }
  const auto single = crop_to_patches(img, 512);
  ASSERT_EQ(single.patches.size(), 1u);
  EXPECT_EQ(single.patches[0], img);
}

TEST(Patches, SmallImageColumnsByHand) {
  std::vector<double> v(24);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i) / 23.0;
  const GrayImage img(4, 6, v);
  const auto set = crop_to_patches(img, 3);
  ASSERT_EQ(set.patches.size(), 2u);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(set.patches[0](r, c), img(r, c));
      EXPECT_EQ(set.patches[1](r, c), img(r, c + 3));
    }
  }
}

TEST(Patches, NonDivisibleWidthRejected) {
  const GrayImage img(4, 6);
  EXPECT_THROW(crop_to_patches(img, 4), DimensionError);
  EXPECT_THROW(crop_to_patches(img, 0), DimensionError);
}

TEST(Patches, RoundTripIsBitExact) {
  Xoshiro256 rng(2);
  for (std::size_t w : {1u, 2u, 3u, 6u, 12u}) {
    const auto img = random_gray(rng, 5, 12);
    const auto set = crop_to_patches(img, w);
    std::size_t pixels = 0;
    for (const auto& p : set.patches) pixels += p.size();
    EXPECT_EQ(pixels, img.size());
    EXPECT_EQ(reconstruct_from_patches(set), img);
  }
  const auto probs = random_probs(rng, 512, 512);
  EXPECT_EQ(reconstruct_from_patches(crop_to_patches(probs, 64)), probs);
}

TEST(Patches, InconsistentPatchRejected) {
  Xoshiro256 rng(3);
  auto set = crop_to_patches(random_gray(rng, 4, 6), 3);
  set.patches[1] = GrayImage(4, 2);
  EXPECT_THROW(reconstruct_from_patches(set), DimensionError);
  set.patches.pop_back();
  EXPECT_THROW(reconstruct_from_patches(set), DimensionError);
}

TEST(Normalization, PooledPopulationStats) {
  const std::vector<GrayImage> imgs{GrayImage(1, 2, std::vector<double>{0.0, 1.0}),
                                    GrayImage(1, 2, std::vector<double>{1.0, 0.0})};
  const auto s = compute_dataset_stats(imgs);
  EXPECT_DOUBLE_EQ(s.mean, 0.5);
  EXPECT_DOUBLE_EQ(s.std, 0.5);
}

TEST(Normalization, ConstantImageStdIsFloored) {
  const std::vector<GrayImage> imgs{GrayImage(3, 3, 0.5)};
  const auto s = compute_dataset_stats(imgs);
  EXPECT_DOUBLE_EQ(s.mean, 0.5);
  EXPECT_EQ(s.std, kStdFloor);
}

TEST(Normalization, EmptyListRejected) {
  EXPECT_THROW(compute_dataset_stats(std::vector<GrayImage>{}), EmptyDatasetError);
}

TEST(Normalization, ArithmeticAndInverse) {
  const GrayImage img(1, 2, std::vector<double>{0.5, 1.0});
  const auto n = normalize(img, {0.5, 0.25});
  EXPECT_EQ(n[0], 0.0);
  EXPECT_EQ(n[1], 2.0);
  EXPECT_EQ(normalize(img, {0.0, 1.0}).storage(), img.storage());

  Xoshiro256 rng(4);
  const auto g = random_gray(rng, 32, 32);
  const NormalizationStats stats{0.37, 0.13};
  const auto back = denormalize(normalize(g, stats), stats);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(back[i], g[i], 1e-12);
}

TEST(Binarize, ThresholdIncludesEquality) {
  const ProbabilityMap p(1, 3, std::vector<double>{0.49, 0.5, 0.51});
  const auto m = binarize(p);
  EXPECT_EQ(m.storage(), (std::vector<std::uint8_t>{0, 1, 1}));
  EXPECT_EQ(binarize(ProbabilityMap(2, 2, 0.9)), BinaryMask(2, 2, 1));
  EXPECT_THROW(binarize(p, 0.0), ValueError);
  EXPECT_THROW(binarize(p, 1.0), ValueError);
}

TEST(Binarize, IdempotentOnMasks) {
  Xoshiro256 rng(5);
  const auto p = random_probs(rng, 16, 16);
  const auto m = binarize(p);
  for (auto v : m.values()) EXPECT_TRUE(v == 0 || v == 1);
  ProbabilityMap as_probs(16, 16);
  for (std::size_t i = 0; i < m.size(); ++i) as_probs[i] = m[i];
  EXPECT_EQ(binarize(as_probs), m);
  EXPECT_EQ(binarize(p), m);
}
