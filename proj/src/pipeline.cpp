#include "startopo/pipeline.hpp"

namespace startopo {

Segmentation segment_image(SegNet& net, const NormalizationStats& stats, std::size_t strip_width,
                           const GrayImage& image) {
  const auto strips = crop_to_patches(normalize(image, stats), strip_width);
  PatchSet<ProbabilityMap> out;
  out.source_height = strips.source_height;
  out.source_width = strips.source_width;
  out.strip_width = strips.strip_width;
  out.patches = net.forward(strips.patches, Mode::Infer);
  Segmentation seg{reconstruct_from_patches(out), BinaryMask{}};
  seg.mask = binarize(seg.probabilities);
  return seg;
}

Segmenter::Segmenter(const Checkpoint& checkpoint)
    : net_(checkpoint.network, checkpoint.params),
      stats_(checkpoint.normalization),
      strip_width_(static_cast<std::size_t>(checkpoint.training.strip_width)) {}

Segmentation Segmenter::operator()(const GrayImage& image) {
  return segment_image(net_, stats_, strip_width_, image);
}

Segmentation infer_image(const Checkpoint& checkpoint, const GrayImage& image) {
  return Segmenter(checkpoint)(image);
}

}  // namespace startopo
