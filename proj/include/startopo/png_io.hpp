#pragma once

#include <filesystem>

#include "startopo/grid.hpp"

namespace startopo {

/// 8-bit grayscale PNG; intensity v is loaded as v / 255.
GrayImage read_gray_png(const std::filesystem::path& path);
/// Writes round(v * 255).
void write_gray_png(const std::filesystem::path& path, const GrayImage& image);

/// Masks are 8-bit PNGs holding only 0 and 255; any other value is a load
/// error.
BinaryMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);

}  // namespace startopo
