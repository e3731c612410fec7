#pragma once

// On-disk synthetic datasets: PNG image/label pairs plus a JSON manifest.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "startopo/grid.hpp"
#include "startopo/synth.hpp"

namespace startopo {

enum class Split { Train, Val, Test };

std::string to_string(Split split);
Split parse_split(const std::string& name);

/// Which rendering of a sample to load: the degraded acquisition the
/// network sees, or the clean phantom it was derived from.
enum class ImageSource { Degraded, Clean };

std::string to_string(ImageSource source);
ImageSource parse_image_source(const std::string& name);

struct SampleRecord {
  std::string image_path;
  std::string clean_image_path;
  std::string label_path;
  std::uint64_t sample_seed = 0;
  std::string split;
};

inline constexpr int kManifestVersion = 1;

struct Manifest {
  int version = kManifestVersion;
  PhantomConfig phantom_config{};
  DegradationConfig degradation_config{};
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  double validation_fraction = 0.2;
  std::vector<SampleRecord> samples;
  // Directory that relative sample paths resolve against; not serialized.
  std::filesystem::path root;

  std::vector<std::size_t> indices(Split split) const;
  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

struct DatasetOptions {
  double test_fraction = 0.2;
  double validation_fraction = 0.2;
};

void to_json(nlohmann::json& j, const Manifest& m);
/// `path` may name the manifest file or the dataset directory holding
/// manifest.json.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& file);

/// Renders `count` phantoms (per-sample seed = seed + index), degrades them
/// and writes image, clean image and label PNGs plus manifest.json into
/// `out`. Splits come from a seeded permutation: the first test_fraction of
/// samples form the test split and validation_fraction of the remainder is
/// carved out as validation.
Manifest generate_dataset(std::size_t count, const PhantomConfig& phantom,
                          const DegradationConfig& degradation, std::uint64_t seed,
                          const std::filesystem::path& out, const DatasetOptions& options = {});

/// Writes `count` degraded phantoms as frame_0000.png, frame_0001.png, ...
/// for the streaming harness; no labels or manifest.
std::vector<std::filesystem::path> generate_frames(std::size_t count, const PhantomConfig& phantom,
                                                   const DegradationConfig& degradation, std::uint64_t seed,
                                                   const std::filesystem::path& out);

struct LoadedSample {
  GrayImage image;
  BinaryMask label;
};

LoadedSample load_sample(const Manifest& manifest, std::size_t index, ImageSource source);

/// 64-bit FNV-1a digest of a file, as "fnv1a64:<16 hex digits>".
std::string file_digest(const std::filesystem::path& path);
std::string bytes_digest(const std::vector<std::uint8_t>& bytes);

}  // namespace startopo
