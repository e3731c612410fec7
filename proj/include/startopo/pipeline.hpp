#pragma once

// Full-image inference: normalize, cut into strips, run every strip as one
// batch, stitch the probabilities back together and threshold.

#include <cstddef>

#include "startopo/checkpoint.hpp"
#include "startopo/grid.hpp"
#include "startopo/segnet.hpp"

namespace startopo {

struct Segmentation {
  ProbabilityMap probabilities;
  BinaryMask mask;
};

Segmentation segment_image(SegNet& net, const NormalizationStats& stats, std::size_t strip_width,
                           const GrayImage& image);

/// A trained model ready for inference.
class Segmenter {
 public:
  explicit Segmenter(const Checkpoint& checkpoint);

  Segmentation operator()(const GrayImage& image);

  const NormalizationStats& stats() const { return stats_; }
  std::size_t strip_width() const { return strip_width_; }

 private:
  SegNet net_;
  NormalizationStats stats_;
  std::size_t strip_width_;
};

Segmentation infer_image(const Checkpoint& checkpoint, const GrayImage& image);

}  // namespace startopo
