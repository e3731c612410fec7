#include <gtest/gtest.h>

#include "startopo/dataset.hpp"
#include "startopo/train.hpp"
#include "support.hpp"

using namespace startopo;
using startopo::testing::small_phantom;

namespace {

TrainingData small_data(std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
  TrainingData d;
  for (std::size_t i = 0; i < n_train + n_val; ++i) {
    const auto s = generate_phantom(small_phantom(), seed + i);
    LabeledImage li{degrade(s.image, startopo::testing::small_degradation(), seed + i), s.label};
    (i < n_train ? d.train : d.validation).push_back(std::move(li));
  }
  return d;
}

NetworkConfig small_net() {
  NetworkConfig n;
  n.levels = 2;
  n.base_channels = 4;
  return n;
}

TrainingConfig small_cfg(int epochs) {
  TrainingConfig t;
  t.epochs = epochs;
  t.batch = 4;
  t.strip_width = 16;
  t.seed = 3;
  t.early_stop_patience = 100;
  t.optimizer.learning_rate = 3e-3;
  return t;
}

}  // namespace

TEST(Train, DeterministicHistoryAndWeights) {
  const auto data = small_data(6, 2, 10);
  const auto a = train(data, small_net(), small_cfg(3));
  const auto b = train(data, small_net(), small_cfg(3));
  ASSERT_EQ(a.history.size(), 3u);
  EXPECT_EQ(a.history, b.history);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
}

TEST(Train, TopologicalTermChangesTraining) {
  const auto data = small_data(6, 2, 20);
  auto cfg = small_cfg(2);
  const auto hybrid = train(data, small_net(), cfg);
  cfg.loss_weights = {1.0, 0.0};
  const auto bce = train(data, small_net(), cfg);
  EXPECT_NE(hybrid.history, bce.history);
  EXPECT_EQ(bce.training.loss_weights.beta, 0.0);
}

TEST(Train, LearnsAndKeepsBestEpoch) {
  const auto data = small_data(12, 4, 30);
  std::vector<EpochRecord> seen;
  const auto ckpt = train(data, small_net(), small_cfg(10), [&](const EpochRecord& r, bool) { seen.push_back(r); });
  ASSERT_EQ(seen, ckpt.history);
  EXPECT_LT(ckpt.history.back().train_loss, ckpt.history.front().train_loss);
  double best = -1.0;
  int best_epoch = 0;
  for (const auto& r : ckpt.history) {
    if (r.val_dice > best) {
      best = r.val_dice;
      best_epoch = r.epoch;
    }
  }
  EXPECT_EQ(ckpt.best_epoch, best_epoch);
  EXPECT_GT(best, 0.8);
  // The normalization stats come from the training images.
  std::vector<GrayImage> imgs;
  for (const auto& s : data.train) imgs.push_back(s.image);
  const auto stats = compute_dataset_stats(imgs);
  EXPECT_EQ(ckpt.normalization.mean, stats.mean);
  EXPECT_EQ(ckpt.normalization.std, stats.std);
}

TEST(Train, EarlyStoppingHonoursPatience) {
  const auto data = small_data(4, 2, 40);
  auto cfg = small_cfg(30);
  cfg.early_stop_patience = 2;
  cfg.optimizer.learning_rate = 1e-6;  // barely moves, so validation stalls
  const auto ckpt = train(data, small_net(), cfg);
  ASSERT_LT(ckpt.history.size(), 30u);
  EXPECT_EQ(static_cast<int>(ckpt.history.size()) - ckpt.best_epoch, 2);
}

TEST(Train, EmptySplitsRejected) {
  auto data = small_data(2, 1, 50);
  TrainingData no_train{{}, data.validation};
  EXPECT_THROW(train(no_train, small_net(), small_cfg(1)), EmptyDatasetError);
  TrainingData no_val{data.train, {}};
  EXPECT_THROW(train(no_val, small_net(), small_cfg(1)), EmptyDatasetError);
}

TEST(Train, IndivisiblePatchRejected) {
  const auto data = small_data(2, 1, 60);
  auto cfg = small_cfg(1);
  cfg.strip_width = 8;
  NetworkConfig deep = small_net();
  deep.levels = 4;
  EXPECT_THROW(train(data, deep, cfg), DimensionError);
}

TEST(Train, ValidationCarvedWhenManifestHasNone) {
  startopo::testing::TempDir dir("carve");
  DatasetOptions opt;
  opt.test_fraction = 0.0;
  opt.validation_fraction = 0.0;
  const auto m = generate_dataset(10, small_phantom(), startopo::testing::small_degradation(), 5, dir.path(), opt);
  ASSERT_TRUE(m.indices(Split::Val).empty());
  const auto data = load_training_data(m, small_cfg(1));
  EXPECT_EQ(data.validation.size(), 2u);
  EXPECT_EQ(data.train.size(), 8u);

  Manifest empty = m;
  for (auto& s : empty.samples) s.split = "test";
  EXPECT_THROW(load_training_data(empty, small_cfg(1)), EmptyDatasetError);
}
