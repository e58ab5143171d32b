#include "slotgen/core/image.hpp"

#include "slotgen/core/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace slotgen {

void write_raster(const ImageU8& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << (img.channels == 3 ? "P6" : "P5") << "\n"
    << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

ImageU8 read_raster(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("missing raster file: " + path);
  std::string magic;
  f >> magic;
  int channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw ValidationError("unsupported raster format in " + path);
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (w <= 0 || h <= 0 || maxval != 255)
    throw ValidationError("malformed raster header in " + path);
  f.get();  // single whitespace after header
  ImageU8 img(w, h, channels);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw ValidationError("truncated raster file: " + path);
  return img;
}

ImageU8 to_u8(const Tensor& image_hw3) {
  const int h = image_hw3.dim(0), w = image_hw3.dim(1);
  ImageU8 img(w, h, 3);
  for (int64_t i = 0; i < image_hw3.numel(); ++i) {
    real v = image_hw3[i];
    v = v < 0 ? 0 : (v > 1 ? 1 : v);
    img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

Tensor from_u8(const ImageU8& img) {
  Tensor t({img.height, img.width, img.channels});
  for (size_t i = 0; i < img.pixels.size(); ++i)
    t.v[i] = static_cast<real>(img.pixels[i]) / real(255);
  return t;
}

Tensor quantize8(const Tensor& image_hw3) { return from_u8(to_u8(image_hw3)); }

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t file_checksum(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for checksum: " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a64(buf.data(), buf.size());
}

}  // namespace slotgen
