#pragma once

#include "slotgen/core/image.hpp"
#include "slotgen/core/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace slotgen {

using Rgb = std::array<uint8_t, 3>;

struct Canvas {
  ImageU8 img;
  Canvas(int w, int h, Rgb bg = {255, 255, 255});
  void set(int x, int y, Rgb c);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  // 3x5 glyphs: digits, '-', '.', 'e'. Numeric labels only.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
};

struct Series {
  std::string name;
  std::vector<real> x, y;
};

// Simple framed line plot with numeric axis ticks.
void plot_lines(const std::string& path, const std::vector<Series>& series,
                int width = 720, int height = 480);

// Color-ramped matrix plot, one cell per entry.
void plot_heatmap(const std::string& path, const Tensor& values_2d, int cell = 24);

// Lay equally sized RGB tiles on a grid. Tiles are row-major.
ImageU8 montage(const std::vector<ImageU8>& tiles, int cols, int pad = 2,
                Rgb bg = {32, 32, 32});

}  // namespace slotgen
