#include "startopo/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <regex>

#include "startopo/error.hpp"
#include "startopo/png_io.hpp"

namespace startopo {

StreamStats summarize_latencies(std::vector<double> latencies) {
  if (latencies.empty()) throw EmptyDatasetError("stream: no frames left after warmup");
  StreamStats s;
  s.frame_count = latencies.size();
  double sum = 0.0;
  for (double l : latencies) sum += l;
  s.mean_latency = sum / static_cast<double>(latencies.size());
  s.frequency = 1.0 / s.mean_latency;
  auto sorted = latencies;
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted.size())));
  s.p95_latency = sorted[std::max<std::size_t>(rank, 1) - 1];
  s.per_frame_latencies = std::move(latencies);
  return s;
}

void to_json(nlohmann::json& j, const StreamStats& s) {
  j = nlohmann::json{{"frame_count", s.frame_count},
                     {"mean_latency_s", s.mean_latency},
                     {"p95_latency_s", s.p95_latency},
                     {"frequency_hz", s.frequency},
                     {"timing", "full pipeline: normalize, strip, forward, reconstruct, threshold"},
                     {"per_frame_latencies_s", s.per_frame_latencies}};
}

std::optional<GrayImage> VectorFrameSource::next() {
  if (pos_ >= frames_.size()) return std::nullopt;
  return frames_[pos_++];
}

DirectoryFrameSource::DirectoryFrameSource(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("frame directory '" + dir.string() + "' does not exist");
  }
  static const std::regex numbered(R"((.*?)(\d+)\.png)", std::regex::icase);
  std::map<long long, std::filesystem::path> frames;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, numbered)) continue;
    const long long n = std::stoll(m[2].str());
    if (!frames.emplace(n, entry.path()).second) {
      throw IoError("frame directory '" + dir.string() + "' has two files numbered " + std::to_string(n));
    }
  }
  if (frames.empty()) throw IoError("frame directory '" + dir.string() + "' holds no numbered PNG frames");
  long long expected = frames.begin()->first;
  for (const auto& [n, path] : frames) {
    if (n != expected) {
      throw IoError("frame directory '" + dir.string() + "' is missing frame " + std::to_string(expected));
    }
    files_.push_back(path);
    ++expected;
  }
}

std::optional<GrayImage> DirectoryFrameSource::next() {
  if (pos_ >= files_.size()) return std::nullopt;
  return read_gray_png(files_[pos_++]);
}

StreamStats run_stream(Segmenter& segmenter, FrameSource& source, std::size_t warmup, const FrameSink& sink) {
  using Clock = std::chrono::steady_clock;
  std::vector<double> latencies;
  for (std::size_t index = 0;; ++index) {
    auto frame = source.next();
    if (!frame) break;
    const auto t0 = Clock::now();
    const Segmentation result = segmenter(*frame);
    const double latency = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool is_warmup = index < warmup;
    if (!is_warmup) latencies.push_back(latency);
    if (sink) sink(StreamFrame{index, is_warmup, latency, &*frame, &result});
  }
  return summarize_latencies(std::move(latencies));
}

StreamStats measure_inference_frequency(const Checkpoint& checkpoint, std::span<const GrayImage> images,
                                        std::size_t warmup) {
  if (images.size() <= warmup) throw EmptyDatasetError("measure_inference_frequency: no frames after warmup");
  Segmenter segmenter(checkpoint);
  VectorFrameSource source(images);
  return run_stream(segmenter, source, warmup);
}

}  // namespace startopo
