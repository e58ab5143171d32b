#include "slotgen/core/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace slotgen {

namespace {

// 3x5 bitmaps, row-major, LSB = left pixel.
struct Glyph {
  char ch;
  uint8_t rows[5];
};
constexpr Glyph kGlyphs[] = {
    {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}},
    {'3', {7, 1, 7, 1, 7}}, {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}},
    {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 2, 2, 2}}, {'8', {7, 5, 7, 5, 7}},
    {'9', {7, 5, 7, 1, 7}}, {'-', {0, 0, 7, 0, 0}}, {'.', {0, 0, 0, 0, 2}},
    {'e', {0, 7, 7, 4, 7}}, {'+', {0, 2, 7, 2, 0}}, {' ', {0, 0, 0, 0, 0}},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kGlyphs)
    if (g.ch == c) return &g;
  return nullptr;
}

std::string format_tick(real v) {
  char buf[32];
  if (v == 0) return "0";
  const real a = std::abs(v);
  if (a >= 0.01 && a < 10000) {
    std::snprintf(buf, sizeof(buf), "%.3g", v);
  } else {
    std::snprintf(buf, sizeof(buf), "%.1e", v);
  }
  return buf;
}

Rgb ramp(real t) {
  // dark blue -> cyan -> yellow
  t = std::clamp(t, real(0), real(1));
  const real r = std::clamp(3 * t - 1.5, real(0), real(1));
  const real g = std::clamp(2 * t, real(0), real(1)) * 0.9;
  const real b = std::clamp(1.2 - 1.5 * t, real(0.05), real(1));
  return {static_cast<uint8_t>(r * 255), static_cast<uint8_t>(g * 255),
          static_cast<uint8_t>(b * 255)};
}

constexpr Rgb kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                            {214, 39, 40},  {148, 103, 189}, {140, 86, 75}};

}  // namespace

Canvas::Canvas(int w, int h, Rgb bg) : img(w, h, 3) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg[c];
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int i = 0; i < 3; ++i) img.at(y, x, i) = c[i];
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::max(0, y0); y <= std::min(img.height - 1, y1); ++y)
    for (int x = std::max(0, x0); x <= std::min(img.width - 1, x1); ++x) set(x, y, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  int cx = x;
  for (char ch : s) {
    if (const Glyph* g = find_glyph(ch)) {
      for (int r = 0; r < 5; ++r)
        for (int b = 0; b < 3; ++b)
          if (g->rows[r] & (4 >> b))
            fill_rect(cx + b * scale, y + r * scale, cx + b * scale + scale - 1,
                      y + r * scale + scale - 1, c);
    }
    cx += 4 * scale;
  }
}

void plot_lines(const std::string& path, const std::vector<Series>& series, int width,
                int height) {
  Canvas cv(width, height);
  const int ml = 56, mr = 12, mt = 12, mb = 28;
  const int x0 = ml, y0 = mt, x1 = width - mr, y1 = height - mb;
  real xmin = std::numeric_limits<real>::max(), xmax = -xmin;
  real ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!(xmax > xmin)) { xmax = xmin + 1; }
  if (!(ymax > ymin)) { ymax = ymin + 1; }
  const real ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  auto px = [&](real x) { return x0 + static_cast<int>((x - xmin) / (xmax - xmin) * (x1 - x0)); };
  auto py = [&](real y) { return y1 - static_cast<int>((y - ymin) / (ymax - ymin) * (y1 - y0)); };

  cv.fill_rect(x0, y0, x1, y1, {250, 250, 250});
  for (int t = 0; t <= 4; ++t) {
    const real xv = xmin + (xmax - xmin) * t / 4;
    const real yv = ymin + (ymax - ymin) * t / 4;
    cv.line(px(xv), y1, px(xv), y1 + 4, {0, 0, 0});
    cv.text(px(xv) - 10, y1 + 8, format_tick(xv), {0, 0, 0});
    cv.line(x0 - 4, py(yv), x0, py(yv), {0, 0, 0});
    cv.text(4, py(yv) - 2, format_tick(yv), {0, 0, 0});
    cv.line(x0, py(yv), x1, py(yv), {225, 225, 225});
  }
  cv.line(x0, y0, x0, y1, {0, 0, 0});
  cv.line(x0, y1, x1, y1, {0, 0, 0});
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const Rgb c = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    for (size_t i = 1; i < s.x.size(); ++i)
      cv.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), c);
    cv.fill_rect(x1 - 60, y0 + 6 + static_cast<int>(si) * 10,
                 x1 - 48, y0 + 10 + static_cast<int>(si) * 10, c);
  }
  write_raster(cv.img, path);
}

void plot_heatmap(const std::string& path, const Tensor& values, int cell) {
  const int rows = values.dim(0), cols = values.dim(1);
  real lo = values.v[0], hi = values.v[0];
  for (real v : values.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) hi = lo + 1;
  Canvas cv(cols * cell + 2, rows * cell + 2, {0, 0, 0});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const real t = (values.at(r, c) - lo) / (hi - lo);
      cv.fill_rect(1 + c * cell, 1 + r * cell, c * cell + cell - 1, r * cell + cell - 1,
                   ramp(t));
    }
  write_raster(cv.img, path);
}

ImageU8 montage(const std::vector<ImageU8>& tiles, int cols, int pad, Rgb bg) {
  if (tiles.empty()) return ImageU8(1, 1, 3);
  const int tw = tiles[0].width, th = tiles[0].height;
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  Canvas cv(cols * (tw + pad) + pad, rows * (th + pad) + pad, bg);
  for (size_t i = 0; i < tiles.size(); ++i) {
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    const int ox = pad + c * (tw + pad), oy = pad + r * (th + pad);
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x) {
        const auto& t = tiles[i];
        const bool gray = t.channels == 1;
        cv.set(ox + x, oy + y,
               gray ? Rgb{t.at(y, x, 0), t.at(y, x, 0), t.at(y, x, 0)}
                    : Rgb{t.at(y, x, 0), t.at(y, x, 1), t.at(y, x, 2)});
      }
  }
  return cv.img;
}

}  // namespace slotgen
