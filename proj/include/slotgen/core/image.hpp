#pragma once

#include "slotgen/core/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace slotgen {

// 8-bit raster, interleaved channels, row-major.
struct ImageU8 {
  int width = 0, height = 0, channels = 0;
  std::vector<uint8_t> pixels;

  ImageU8() = default;
  ImageU8(int w, int h, int c)
      : width(w), height(h), channels(c),
        pixels(static_cast<size_t>(w) * h * c, 0) {}

  uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// PPM (P6, channels=3) / PGM (P5, channels=1) binary rasters.
void write_raster(const ImageU8& img, const std::string& path);
ImageU8 read_raster(const std::string& path);

// [H,W,3] in [0,1]  <->  8-bit RGB
ImageU8 to_u8(const Tensor& image_hw3);
Tensor from_u8(const ImageU8& img);

// Quantize through 8 bits without touching disk (used by determinism checks).
Tensor quantize8(const Tensor& image_hw3);

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t file_checksum(const std::string& path);

}  // namespace slotgen
