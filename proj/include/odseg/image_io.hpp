#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "odseg/tensor.hpp"

namespace odseg {

/// 8-bit interleaved raster.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

/// PNG (any bit depth/colour type, reduced to 8-bit gray or RGB; alpha is
/// dropped) or binary/ASCII PGM, chosen by file signature.
Image8 read_image(const std::filesystem::path& path);
Image8 decode_png(std::span<const std::uint8_t> bytes);
Image8 decode_pgm(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const Image8& image);
void write_png(const std::filesystem::path& path, const Image8& image);

/// [H,W,3] floats in [0,1] (gray inputs are replicated).
Tensor image_to_tensor(const Image8& image);
/// [H,W,1] or [H,W,3] floats, clamped to [0,1] and scaled by 255.
Image8 tensor_to_image(const Tensor& t);
/// Binary [H,W,1] mask -> gray image with values {0,255}.
Image8 mask_to_image(const Tensor& mask);

}  // namespace odseg
