#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "tased/tensor.hpp"

namespace tased {

/// 8-bit interleaved image, row-major (row, col, channel).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch = 0) {
    return pixels[(r * width + c) * channels + ch];
  }
  std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return pixels[(r * width + c) * channels + ch];
  }
};

/// Decodes any 8/16-bit PNG into `channels` (1 = gray, 3 = RGB) 8-bit
/// channels; alpha is dropped. Throws IoError with the path on failure.
Image read_png(const std::filesystem::path& path, std::size_t channels);
void write_png(const std::filesystem::path& path, const Image& image);

/// Bilinear resize of a (H, W) or (C, H, W) tensor with half-pixel centers
/// and edge clamping. Resizing to the same size returns the input unchanged.
Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width);

/// (C, H, W) tensor of the raw 0..255 channel values.
Tensor image_to_tensor(const Image& image);

}  // namespace tased
