#include "startopo/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "startopo/error.hpp"
#include "startopo/losses.hpp"
#include "startopo/metrics.hpp"
#include "startopo/parallel.hpp"
#include "startopo/pipeline.hpp"
#include "startopo/rng.hpp"

namespace startopo {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566;  // "shuf"
constexpr std::uint64_t kCarveStream = 0x63617276;    // "carv"

struct StripLoss {
  double value = 0.0;
  RealGrid gradient;
};

// Hybrid loss of every strip, evaluated in parallel into fixed slots.
std::vector<StripLoss> strip_losses(const std::vector<ProbabilityMap>& probs,
                                    const std::vector<const BinaryMask*>& labels,
                                    const TrainingConfig& config) {
  std::vector<StripLoss> out(probs.size());
  parallel_for(probs.size(), [&](std::size_t k) {
    const auto geom = build_star_geometry(*labels[k], static_cast<std::size_t>(config.ray_stride));
    auto res = hybrid_loss(probs[k], *labels[k], config.loss_weights, geom);
    out[k] = {res.value, std::move(res.gradient)};
  });
  return out;
}

struct Validation {
  double loss = 0.0;
  double dice = 0.0;
};

Validation validate(SegNet& net, const NormalizationStats& stats, const TrainingData& data,
                    const TrainingConfig& config) {
  const auto strip = static_cast<std::size_t>(config.strip_width);
  double loss = 0.0;
  double dice_sum = 0.0;
  std::size_t strips = 0;
  for (const auto& sample : data.validation) {
    const auto seg = segment_image(net, stats, strip, sample.image);
    dice_sum += dice(seg.mask, sample.label);
    const auto probs = crop_to_patches(seg.probabilities, strip).patches;
    const auto truth = crop_to_patches(sample.label, strip).patches;
    std::vector<const BinaryMask*> labels;
    for (const auto& t : truth) labels.push_back(&t);
    for (const auto& l : strip_losses(probs, labels, config)) loss += l.value;
    strips += probs.size();
  }
  return {loss / static_cast<double>(strips), dice_sum / static_cast<double>(data.validation.size())};
}

void check_sample_shapes(const std::vector<LabeledImage>& samples, const char* split) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].image.same_shape(samples[i].label)) {
      throw DimensionError(std::string("train: ") + split + " sample " + std::to_string(i) +
                           " image and label shapes differ");
    }
  }
}

}  // namespace

TrainingData load_training_data(const Manifest& manifest, const TrainingConfig& config) {
  auto train_idx = manifest.indices(Split::Train);
  auto val_idx = manifest.indices(Split::Val);
  if (train_idx.empty()) throw EmptyDatasetError("train: manifest has no train split");
  if (val_idx.empty() && config.validation_fraction > 0.0) {
    Xoshiro256 rng(derive_seed(config.seed, kCarveStream));
    rng.shuffle(train_idx);
    const auto n_val = static_cast<std::size_t>(
        std::lround(config.validation_fraction * static_cast<double>(train_idx.size())));
    val_idx.assign(train_idx.begin(), train_idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.erase(train_idx.begin(), train_idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
  }
  TrainingData data;
  const auto load = [&](const std::vector<std::size_t>& idx, std::vector<LabeledImage>& out) {
    out.resize(idx.size());
    parallel_for(idx.size(), [&](std::size_t k) {
      auto s = load_sample(manifest, idx[k], ImageSource::Degraded);
      out[k] = {std::move(s.image), std::move(s.label)};
    });
  };
  load(train_idx, data.train);
  load(val_idx, data.validation);
  return data;
}

Checkpoint train(const TrainingData& data, const NetworkConfig& network, const TrainingConfig& config,
                 const EpochObserver& observer) {
  network.validate();
  config.validate();
  if (data.train.empty()) throw EmptyDatasetError("train: no training images");
  if (data.validation.empty()) {
    throw EmptyDatasetError("train: no validation images (provide a val split or validation_fraction > 0)");
  }
  check_sample_shapes(data.train, "train");
  check_sample_shapes(data.validation, "validation");
  const auto strip = static_cast<std::size_t>(config.strip_width);
  for (const auto* split : {&data.train, &data.validation}) {
    for (const auto& s : *split) network.check_input(s.image.height(), strip);
  }

  std::vector<GrayImage> images;
  images.reserve(data.train.size());
  for (const auto& s : data.train) images.push_back(s.image);
  const NormalizationStats stats = compute_dataset_stats(images);
  images.clear();

  // Strip inputs and labels for every training image, cut once up front.
  std::vector<std::vector<NormalizedImage>> inputs(data.train.size());
  std::vector<std::vector<BinaryMask>> labels(data.train.size());
  parallel_for(data.train.size(), [&](std::size_t i) {
    inputs[i] = crop_to_patches(normalize(data.train[i].image, stats), strip).patches;
    labels[i] = crop_to_patches(data.train[i].label, strip).patches;
  });

  SegNet net(network, config.seed);
  AdamOptimizer optimizer(config.optimizer);
  Xoshiro256 shuffle_rng(derive_seed(config.seed, kShuffleStream));

  Checkpoint best;
  best.network = network;
  best.training = config;
  best.normalization = stats;
  best.params = net.params();
  double best_dice = -1.0;
  int stale = 0;

  std::vector<std::size_t> order(data.train.size());
  const auto batch = static_cast<std::size_t>(config.batch);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    std::vector<std::pair<std::size_t, std::size_t>> queue;
    for (std::size_t i : order) {
      for (std::size_t p = 0; p < inputs[i].size(); ++p) queue.emplace_back(i, p);
    }

    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < queue.size(); start += batch) {
      const std::size_t end = std::min(queue.size(), start + batch);
      std::vector<NormalizedImage> x;
      std::vector<const BinaryMask*> y;
      for (std::size_t q = start; q < end; ++q) {
        x.push_back(inputs[queue[q].first][queue[q].second]);
        y.push_back(&labels[queue[q].first][queue[q].second]);
      }
      const auto probs = net.forward(x, Mode::Train);
      auto losses = strip_losses(probs, y, config);
      const auto n = static_cast<double>(losses.size());
      double value = 0.0;
      std::vector<RealGrid> grads;
      grads.reserve(losses.size());
      for (auto& l : losses) {
        value += l.value;
        for (double& g : l.gradient.values()) g /= n;
        grads.push_back(std::move(l.gradient));
      }
      value /= n;
      if (!std::isfinite(value)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(steps + 1));
      }
      net.params().zero_grad();
      net.backward(grads);
      optimizer.step(net.params());
      if (!net.params().all_finite()) {
        throw DivergenceError("train: non-finite parameters after epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(steps + 1));
      }
      epoch_loss += value;
      ++steps;
    }

    const Validation val = validate(net, stats, data, config);
    EpochRecord record{epoch, epoch_loss / static_cast<double>(steps), val.loss, val.dice};
    if (!std::isfinite(record.val_loss)) {
      throw DivergenceError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    best.history.push_back(record);
    const bool improved = val.dice > best_dice;
    if (improved) {
      best_dice = val.dice;
      best.params = net.params();
      best.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
    if (observer) observer(record, improved);
    if (stale >= config.early_stop_patience) break;
  }
  for (auto& block : best.params.blocks()) block.grad.assign(block.grad.size(), 0.0f);
  return best;
}

Checkpoint train(const Manifest& manifest, const NetworkConfig& network, const TrainingConfig& config,
                 const EpochObserver& observer) {
  config.validate();
  return train(load_training_data(manifest, config), network, config, observer);
}

}  // namespace startopo
