#pragma once

// Dataset-level evaluation: per-image overlap, fidelity and boundary
// tracking metrics with their means. SSIM and PSNR compare the thresholded
// prediction with the label mask.

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "startopo/checkpoint.hpp"
#include "startopo/dataset.hpp"
#include "startopo/metrics.hpp"
#include "startopo/pipeline.hpp"

namespace startopo {

struct ImageMetrics {
  std::size_t index = 0;  // manifest sample index
  std::string image;
  double ssim = 0.0;
  double psnr_db = 0.0;  // +inf for a perfect mask
  double iou = 0.0;
  double dice = 0.0;
  TrackingErrorReport tracking;
};

struct MetricsAggregate {
  double ssim = 0.0;
  double psnr_db = 0.0;  // per-image infinities capped at kPsnrCapDb
  double iou = 0.0;
  double dice = 0.0;
  double epi_err_px = 0.0;
  double epi_err_um = 0.0;
  double dm_err_px = 0.0;
  double dm_err_um = 0.0;
  double invalid_column_fraction = 0.0;
};

struct EvaluationReport {
  std::string split;
  std::string image_source;
  std::vector<ImageMetrics> per_image;
  MetricsAggregate aggregates;
  std::string checkpoint_hash;
  std::string manifest_hash;
};

ImageMetrics score_image(const BinaryMask& pred, const BinaryMask& truth);

/// Means over images. Boundary errors average the images that had at least
/// one comparable column; µm means are the px means times the pixel pitch.
MetricsAggregate aggregate(const std::vector<ImageMetrics>& images);

void to_json(nlohmann::json& j, const EvaluationReport& report);

/// Produces the segmentation for a sample image; `index` is its manifest
/// index.
using Predictor = std::function<Segmentation(const GrayImage& image, std::size_t index)>;

EvaluationReport evaluate_dataset(const Predictor& predict, const Manifest& manifest, Split split,
                                  ImageSource source);

EvaluationReport evaluate_dataset(const Checkpoint& checkpoint, const Manifest& manifest, Split split,
                                  ImageSource source);

}  // namespace startopo
