#include "startopo/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "startopo/error.hpp"

namespace startopo {
namespace {

struct Raw {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

Raw read_raw(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  Raw raw;
  raw.height = image.height;
  raw.width = image.width;
  raw.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  if (raw.height == 0 || raw.width == 0) throw IoError("empty PNG '" + path.string() + "'");
  return raw;
}

void write_raw(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& pixels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + image.message);
  }
}

}  // namespace

GrayImage read_gray_png(const std::filesystem::path& path) {
  const Raw raw = read_raw(path);
  std::vector<double> values(raw.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = raw.pixels[i] / 255.0;
  return GrayImage(raw.height, raw.width, std::move(values));
}

void write_gray_png(const std::filesystem::path& path, const GrayImage& image) {
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  write_raw(path, image.height(), image.width(), px);
}

BinaryMask read_mask_png(const std::filesystem::path& path) {
  const Raw raw = read_raw(path);
  std::vector<std::uint8_t> values(raw.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint8_t v = raw.pixels[i];
    if (v != 0 && v != 255) {
      throw IoError("mask '" + path.string() + "' holds pixel value " + std::to_string(v) +
                    " at index " + std::to_string(i) + " (only 0 and 255 are allowed)");
    }
    values[i] = v == 255 ? 1 : 0;
  }
  return BinaryMask(raw.height, raw.width, std::move(values));
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask[i] ? 255 : 0;
  write_raw(path, mask.height(), mask.width(), px);
}

}  // namespace startopo
