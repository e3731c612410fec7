#pragma once

#include <functional>
#include <vector>

#include "startopo/checkpoint.hpp"
#include "startopo/dataset.hpp"
#include "startopo/grid.hpp"
#include "startopo/segnet.hpp"

namespace startopo {

struct LabeledImage {
  GrayImage image;
  BinaryMask label;
};

struct TrainingData {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> validation;
};

/// Called after every epoch; `improved` is set when the epoch became the
/// new best-validation snapshot.
using EpochObserver = std::function<void(const EpochRecord& record, bool improved)>;

/// Loads the manifest's train split (degraded images) and its validation
/// split. When the manifest has no validation split, validation_fraction of
/// the training images is carved out with a seeded permutation.
TrainingData load_training_data(const Manifest& manifest, const TrainingConfig& config);

/// Trains from a deterministic initialization and returns the checkpoint
/// of the epoch with the best validation Dice.
Checkpoint train(const TrainingData& data, const NetworkConfig& network, const TrainingConfig& config,
                 const EpochObserver& observer = {});

Checkpoint train(const Manifest& manifest, const NetworkConfig& network, const TrainingConfig& config,
                 const EpochObserver& observer = {});

}  // namespace startopo
