#include "startopo/evaluate.hpp"

#include <cmath>

#include "startopo/error.hpp"
#include "startopo/parallel.hpp"

namespace startopo {

ImageMetrics score_image(const BinaryMask& pred, const BinaryMask& truth) {
  ImageMetrics m;
  m.ssim = ssim(pred, truth);
  m.psnr_db = psnr(pred, truth);
  m.iou = iou(pred, truth);
  m.dice = dice(pred, truth);
  m.tracking = tracking_error(extract_boundaries(pred), extract_boundaries(truth));
  return m;
}

MetricsAggregate aggregate(const std::vector<ImageMetrics>& images) {
  MetricsAggregate a;
  if (images.empty()) return a;
  std::size_t tracked = 0;
  for (const auto& m : images) {
    a.ssim += m.ssim;
    a.psnr_db += psnr_for_aggregate(m.psnr_db);
    a.iou += m.iou;
    a.dice += m.dice;
    a.invalid_column_fraction += m.tracking.invalid_column_fraction;
    if (m.tracking.compared_columns > 0) {
      a.epi_err_px += m.tracking.epithelium_error_px;
      a.dm_err_px += m.tracking.dm_error_px;
      ++tracked;
    }
  }
  const auto n = static_cast<double>(images.size());
  a.ssim /= n;
  a.psnr_db /= n;
  a.iou /= n;
  a.dice /= n;
  a.invalid_column_fraction /= n;
  if (tracked == 0) {
    a.epi_err_px = std::numeric_limits<double>::quiet_NaN();
    a.dm_err_px = std::numeric_limits<double>::quiet_NaN();
  } else {
    a.epi_err_px /= static_cast<double>(tracked);
    a.dm_err_px /= static_cast<double>(tracked);
  }
  a.epi_err_um = pixels_to_um(a.epi_err_px);
  a.dm_err_um = pixels_to_um(a.dm_err_px);
  return a;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

void to_json(nlohmann::json& j, const EvaluationReport& r) {
  nlohmann::json per_image = nlohmann::json::array();
  for (const auto& m : r.per_image) {
    per_image.push_back({{"index", m.index},
                         {"image", m.image},
                         {"ssim", m.ssim},
                         {"psnr_db", std::isinf(m.psnr_db) ? nlohmann::json("inf") : nlohmann::json(m.psnr_db)},
                         {"iou", m.iou},
                         {"dice", m.dice},
                         {"epi_err_px", number_or_null(m.tracking.epithelium_error_px)},
                         {"epi_err_um", number_or_null(m.tracking.epithelium_error_um)},
                         {"dm_err_px", number_or_null(m.tracking.dm_error_px)},
                         {"dm_err_um", number_or_null(m.tracking.dm_error_um)},
                         {"invalid_column_fraction", m.tracking.invalid_column_fraction},
                         {"compared_columns", m.tracking.compared_columns}});
  }
  const auto& a = r.aggregates;
  j = nlohmann::json{{"split", r.split},
                     {"image_source", r.image_source},
                     {"conventions",
                      {{"ssim_psnr_inputs", "thresholded prediction mask vs label mask"},
                       {"psnr_aggregate_cap_db", kPsnrCapDb},
                       {"boundary_columns", "mutually valid columns; prediction holes reported separately"},
                       {"pixel_pitch_um", kPixelPitchUm}}},
                     {"per_image", per_image},
                     {"aggregates",
                      {{"ssim", a.ssim},
                       {"psnr_db", a.psnr_db},
                       {"iou", a.iou},
                       {"dice", a.dice},
                       {"epi_err_px", number_or_null(a.epi_err_px)},
                       {"epi_err_um", number_or_null(a.epi_err_um)},
                       {"dm_err_px", number_or_null(a.dm_err_px)},
                       {"dm_err_um", number_or_null(a.dm_err_um)},
                       {"invalid_column_fraction", a.invalid_column_fraction}}},
                     {"provenance", {{"checkpoint_hash", r.checkpoint_hash}, {"manifest_hash", r.manifest_hash}}}};
}

EvaluationReport evaluate_dataset(const Predictor& predict, const Manifest& manifest, Split split,
                                  ImageSource source) {
  const auto idx = manifest.indices(split);
  if (idx.empty()) throw EmptyDatasetError("evaluate: manifest has no " + to_string(split) + " split");
  EvaluationReport report;
  report.split = to_string(split);
  report.image_source = to_string(source);
  nlohmann::json mj = manifest;
  const std::string dumped = mj.dump();
  report.manifest_hash = bytes_digest(std::vector<std::uint8_t>(dumped.begin(), dumped.end()));

  // Inference runs in manifest order on one model; scoring fans out.
  std::vector<BinaryMask> preds(idx.size());
  std::vector<BinaryMask> truths(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& rec = manifest.samples[idx[k]];
    auto sample = load_sample(manifest, idx[k], source);
    auto seg = predict(sample.image, idx[k]);
    if (!seg.mask.same_shape(sample.label)) {
      throw DimensionError("evaluate: prediction for '" + rec.image_path + "' has the wrong shape");
    }
    preds[k] = std::move(seg.mask);
    truths[k] = std::move(sample.label);
  }
  report.per_image.resize(idx.size());
  parallel_for(idx.size(), [&](std::size_t k) {
    report.per_image[k] = score_image(preds[k], truths[k]);
    report.per_image[k].index = idx[k];
    const auto& rec = manifest.samples[idx[k]];
    report.per_image[k].image = source == ImageSource::Clean ? rec.clean_image_path : rec.image_path;
  });
  report.aggregates = aggregate(report.per_image);
  return report;
}

EvaluationReport evaluate_dataset(const Checkpoint& checkpoint, const Manifest& manifest, Split split,
                                  ImageSource source) {
  Segmenter segmenter(checkpoint);
  auto report = evaluate_dataset([&](const GrayImage& image, std::size_t) { return segmenter(image); },
                                 manifest, split, source);
  report.checkpoint_hash = bytes_digest(serialize_checkpoint(checkpoint));
  return report;
}

}  // namespace startopo
