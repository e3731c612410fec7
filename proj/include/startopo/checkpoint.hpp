#pragma once

// Versioned binary checkpoint container.
//
// Layout (all integers little-endian):
//   "STOPOCKP"                      8-byte magic
//   u32 format version
//   u32 n, n bytes                  JSON: network, training, normalization,
//                                   history, best_epoch
//   u32 block count
//   per block: u32 name length, name bytes, u8 learnable, u32 rank,
//              rank x u32 dims, u64 element count
//   per block, same order: element count x f32 values

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "startopo/grid.hpp"
#include "startopo/losses.hpp"
#include "startopo/segnet.hpp"

namespace startopo {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'O', 'P', 'O', 'C', 'K', 'P'};

struct TrainingConfig {
  LossWeights loss_weights{};
  AdamConfig optimizer{};
  int epochs = 50;
  int batch = 8;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  int early_stop_patience = 10;
  int ray_stride = 1;
  int strip_width = 64;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_dice = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  NetworkConfig network{};
  ModelParams params;
  TrainingConfig training{};
  NormalizationStats normalization{};
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Training history plus the configuration it was produced under.
nlohmann::json history_json(const Checkpoint& checkpoint);

}  // namespace startopo
