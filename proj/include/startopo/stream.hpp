#pragma once

// Sequential frame-by-frame inference with latency statistics. Exactly one
// frame is in flight: frame k's result is handed to the sink before frame
// k+1 is requested from the source.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "startopo/checkpoint.hpp"
#include "startopo/grid.hpp"
#include "startopo/pipeline.hpp"

namespace startopo {

struct StreamStats {
  std::size_t frame_count = 0;
  double mean_latency = 0.0;  // seconds
  double p95_latency = 0.0;   // seconds, nearest rank
  double frequency = 0.0;     // Hz, 1 / mean_latency
  std::vector<double> per_frame_latencies;
};

/// Summarizes per-frame latencies in seconds. Throws EmptyDatasetError on
/// an empty list.
StreamStats summarize_latencies(std::vector<double> latencies);

void to_json(nlohmann::json& j, const StreamStats& s);

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  /// Next frame in temporal order, or nullopt at the end of the stream.
  virtual std::optional<GrayImage> next() = 0;
};

/// Frames held in memory.
class VectorFrameSource final : public FrameSource {
 public:
  explicit VectorFrameSource(std::span<const GrayImage> frames) : frames_(frames) {}
  std::optional<GrayImage> next() override;

 private:
  std::span<const GrayImage> frames_;
  std::size_t pos_ = 0;
};

/// PNG frames in a directory, named with a trailing frame number
/// (e.g. frame_0007.png). Numbers must be consecutive; a gap is an I/O
/// error naming the missing frame.
class DirectoryFrameSource final : public FrameSource {
 public:
  explicit DirectoryFrameSource(const std::filesystem::path& dir);
  std::optional<GrayImage> next() override;
  std::size_t size() const { return files_.size(); }
  const std::vector<std::filesystem::path>& files() const { return files_; }

 private:
  std::vector<std::filesystem::path> files_;
  std::size_t pos_ = 0;
};

struct StreamFrame {
  std::size_t index = 0;  // position in the stream, warmup frames included
  bool warmup = false;
  double latency = 0.0;
  const GrayImage* image = nullptr;
  const Segmentation* result = nullptr;
};

using FrameSink = std::function<void(const StreamFrame& frame)>;

/// Feeds every frame through `segmenter` one at a time. The first `warmup`
/// frames are processed but excluded from the statistics.
StreamStats run_stream(Segmenter& segmenter, FrameSource& source, std::size_t warmup,
                       const FrameSink& sink = {});

StreamStats measure_inference_frequency(const Checkpoint& checkpoint, std::span<const GrayImage> images,
                                        std::size_t warmup);

}  // namespace startopo
