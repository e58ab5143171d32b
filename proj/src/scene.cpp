#include "slotgen/scene/scene.hpp"

#include "slotgen/core/errors.hpp"
#include "slotgen/core/image.hpp"
#include "slotgen/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace slotgen::scene {

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::kCircle: return "circle";
    case Shape::kSquare: return "square";
    case Shape::kTriangle: return "triangle";
  }
  return "circle";
}

Shape shape_from_name(const std::string& name) {
  if (name == "circle") return Shape::kCircle;
  if (name == "square") return Shape::kSquare;
  if (name == "triangle") return Shape::kTriangle;
  throw ValidationError("unknown shape: " + name);
}

std::vector<std::array<real, 3>> SceneSpec::default_palette() {
  return {{0.95, 0.25, 0.22}, {0.25, 0.85, 0.30}, {0.25, 0.45, 0.95},
          {0.95, 0.85, 0.25}, {0.90, 0.30, 0.90}, {0.25, 0.90, 0.90}};
}

void SceneSpec::validate() const {
  if (image_size < 32) throw ValidationError("image_size must be >= 32");
  if (object_count_min < 1) throw ValidationError("object_count_min must be >= 1");
  if (object_count_max < object_count_min)
    throw ValidationError("object_count_max < object_count_min");
  if (!(size_min > 0 && size_max <= 0.6 && size_min <= size_max))
    throw ValidationError("size_range must lie within (0, 0.6]");
  if (shape_vocabulary.empty()) throw ValidationError("shape_vocabulary is empty");
  if (color_vocabulary.empty()) throw ValidationError("color_vocabulary is empty");
  for (const auto& c : color_vocabulary)
    for (real v : c)
      if (v < 0 || v > 1) throw ValidationError("colors must be RGB in [0,1]");
}

namespace {

struct Sprite {
  Shape shape;
  real cx, cy, size;  // normalized
};

bool inside(const Sprite& sp, real x, real y) {
  // x, y in normalized image coordinates
  const real h = sp.size / 2;
  switch (sp.shape) {
    case Shape::kCircle: {
      const real dx = x - sp.cx, dy = y - sp.cy;
      return dx * dx + dy * dy <= h * h;
    }
    case Shape::kSquare:
      return std::abs(x - sp.cx) <= h && std::abs(y - sp.cy) <= h;
    case Shape::kTriangle: {
      // equilateral, apex up, side = size
      const real side = sp.size;
      const real ht = side * std::sqrt(real(3)) / 2;
      const real ay = sp.cy - 2 * ht / 3;
      const real by = sp.cy + ht / 3;
      if (y < ay || y > by) return false;
      const real half_width_at_y = (y - ay) / ht * (side / 2);
      return std::abs(x - sp.cx) <= half_width_at_y;
    }
  }
  return false;
}

std::vector<uint8_t> hard_mask(const Sprite& sp, int s) {
  std::vector<uint8_t> m(static_cast<size_t>(s) * s, 0);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      m[static_cast<size_t>(y) * s + x] =
          inside(sp, (x + real(0.5)) / s, (y + real(0.5)) / s) ? 1 : 0;
  return m;
}

// 4x4 subsample coverage for the RGB raster; masks stay hard.
real coverage(const Sprite& sp, int px, int py, int s) {
  int hits = 0;
  for (int sy = 0; sy < 4; ++sy)
    for (int sx = 0; sx < 4; ++sx)
      if (inside(sp, (px + (sx + real(0.5)) / 4) / s, (py + (sy + real(0.5)) / 4) / s))
        ++hits;
  return hits / real(16);
}

void paint_background(Tensor& img, const SceneSpec& spec, Rng& rng) {
  const int s = spec.image_size;
  if (spec.background_mode == Background::kFlat) {
    std::fill(img.v.begin(), img.v.end(), real(0.12));
    return;
  }
  // Low-frequency value noise: a coarse node grid, bilinearly upsampled.
  const int g = 5;
  std::vector<real> nodes(static_cast<size_t>(g) * g * 3);
  for (auto& v : nodes) v = rng.uniform(0.10, 0.45);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const real gy = static_cast<real>(y) / (s - 1) * (g - 1);
      const real gx = static_cast<real>(x) / (s - 1) * (g - 1);
      const int y0 = std::min(static_cast<int>(gy), g - 2);
      const int x0 = std::min(static_cast<int>(gx), g - 2);
      const real fy = gy - y0, fx = gx - x0;
      for (int c = 0; c < 3; ++c) {
        auto node = [&](int yy, int xx) {
          return nodes[(static_cast<size_t>(yy) * g + xx) * 3 + c];
        };
        const real v = node(y0, x0) * (1 - fy) * (1 - fx) + node(y0, x0 + 1) * (1 - fy) * fx +
                       node(y0 + 1, x0) * fy * (1 - fx) + node(y0 + 1, x0 + 1) * fy * fx;
        img.at(y, x, c) = v;
      }
    }
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng = derive_rng(seed, /*stream=*/0x5C12E);
  const int s = spec.image_size;

  Scene out;
  out.image = Tensor({s, s, 3});
  out.masks.assign(static_cast<size_t>(s) * s, 0);
  paint_background(out.image, spec, rng);

  const int count =
      spec.object_count_min + rng.uniform_int(spec.object_count_max - spec.object_count_min + 1);

  std::vector<Sprite> placed;
  for (int k = 1; k <= count; ++k) {
    const Shape shape = spec.shape_vocabulary[rng.uniform_int(
        static_cast<int>(spec.shape_vocabulary.size()))];
    const int color_index =
        rng.uniform_int(static_cast<int>(spec.color_vocabulary.size()));
    const real size = rng.uniform(spec.size_min, spec.size_max);

    bool ok = false;
    Sprite sp{shape, 0, 0, size};
    std::vector<uint8_t> mask;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      sp.cx = rng.uniform(0.15, 0.85);
      sp.cy = rng.uniform(0.15, 0.85);
      mask = hard_mask(sp, s);
      const int visible = static_cast<int>(std::count(mask.begin(), mask.end(), 1));
      if (visible < kMinVisiblePixels) continue;
      if (!spec.overlap_allowed) {
        bool overlaps = false;
        for (size_t i = 0; i < mask.size() && !overlaps; ++i)
          overlaps = mask[i] && out.masks[i] != 0;
        if (overlaps) continue;
      } else {
        // Occluding this sprite must keep every earlier instance visible enough.
        std::vector<int> remaining(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < mask.size(); ++i)
          if (!mask[i] && out.masks[i] > 0) ++remaining[static_cast<size_t>(out.masks[i] - 1)];
        bool starves = false;
        for (int j = 0; j < k - 1 && !starves; ++j)
          starves = remaining[static_cast<size_t>(j)] < kMinVisiblePixels;
        if (starves) continue;
      }
      ok = true;
    }
    if (!ok)
      throw std::runtime_error(
          "generate_scene: could not place object " + std::to_string(k) +
          " with >= " + std::to_string(kMinVisiblePixels) +
          " visible pixels after 100 retries (objects too small or spec too crowded)");

    const auto& col = spec.color_vocabulary[static_cast<size_t>(color_index)];
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const real a = coverage(sp, x, y, s);
        if (a > 0)
          for (int c = 0; c < 3; ++c)
            out.image.at(y, x, c) = (1 - a) * out.image.at(y, x, c) + a * col[c];
        if (mask[static_cast<size_t>(y) * s + x])
          out.masks[static_cast<size_t>(y) * s + x] = k;
      }
    out.properties.push_back({k, shape, color_index, sp.cx, sp.cy, size});
    placed.push_back(sp);
  }
  return out;
}

void save_scene(const Scene& sc, const std::string& dir) {
  fs::create_directories(dir);
  write_raster(to_u8(sc.image), dir + "/image");
  ImageU8 mask(sc.width(), sc.height(), 1);
  for (size_t i = 0; i < sc.masks.size(); ++i)
    mask.pixels[i] = static_cast<uint8_t>(sc.masks[i]);
  write_raster(mask, dir + "/mask");
  std::ofstream props(dir + "/props");
  if (!props) throw std::runtime_error("cannot write " + dir + "/props");
  for (const auto& o : sc.properties) {
    char line[256];
    std::snprintf(line, sizeof(line), "id=%d shape=%s color_index=%d cx=%.17g cy=%.17g size=%.17g\n",
                  o.id, shape_name(o.shape), o.color_index, o.cx, o.cy, o.size);
    props << line;
  }
}

namespace {
std::string expect_key(std::istringstream& ss, const std::string& key,
                       const std::string& ctx) {
  std::string tok;
  if (!(ss >> tok) || tok.rfind(key + "=", 0) != 0)
    throw ValidationError("malformed " + ctx + ": expected " + key + "=");
  return tok.substr(key.size() + 1);
}
}  // namespace

Scene load_scene(const std::string& dir) {
  Scene sc;
  const ImageU8 img = read_raster(dir + "/image");
  if (img.channels != 3) throw ValidationError(dir + "/image is not RGB");
  sc.image = from_u8(img);
  const ImageU8 mask = read_raster(dir + "/mask");
  if (mask.channels != 1 || mask.width != img.width || mask.height != img.height)
    throw ValidationError(dir + "/mask does not match image dimensions");
  sc.masks.assign(mask.pixels.begin(), mask.pixels.end());

  std::ifstream props(dir + "/props");
  if (!props) throw ValidationError("missing props file: " + dir + "/props");
  std::string line;
  while (std::getline(props, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ObjectRecord o;
    o.id = std::stoi(expect_key(ss, "id", dir + "/props"));
    o.shape = shape_from_name(expect_key(ss, "shape", dir + "/props"));
    o.color_index = std::stoi(expect_key(ss, "color_index", dir + "/props"));
    o.cx = std::stod(expect_key(ss, "cx", dir + "/props"));
    o.cy = std::stod(expect_key(ss, "cy", dir + "/props"));
    o.size = std::stod(expect_key(ss, "size", dir + "/props"));
    sc.properties.push_back(o);
  }

  // Mask labels must be exactly the contiguous ids 1..K present in props.
  std::set<int> mask_labels;
  for (int m : sc.masks)
    if (m != 0) mask_labels.insert(m);
  std::set<int> prop_ids;
  for (const auto& o : sc.properties) prop_ids.insert(o.id);
  const int k = static_cast<int>(prop_ids.size());
  for (int want = 1; want <= k; ++want)
    if (!prop_ids.count(want))
      throw ValidationError(dir + ": property ids are not contiguous 1..K");
  if (mask_labels != prop_ids)
    throw ValidationError(dir + ": mask labels do not match property ids");
  return sc;
}

DatasetManifest generate_dataset(const SceneSpec& spec, int count, uint64_t seed,
                                 const std::string& root) {
  spec.validate();
  if (count < 0) throw ValidationError("dataset count must be >= 0");
  fs::create_directories(root);
  DatasetManifest m;
  m.root = root;
  m.count = count;
  m.seed = seed;
  m.spec = spec;
  for (int i = 0; i < count; ++i) m.scene_dirs.push_back("scene_" + std::to_string(i));
  // Per-scene seeds are independent, so scenes can be generated in parallel.
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    const Scene sc = generate_scene(spec, seed + static_cast<uint64_t>(i));
    save_scene(sc, root + "/" + m.scene_dirs[static_cast<size_t>(i)]);
  }
  save_manifest(m);
  return m;
}

void save_manifest(const DatasetManifest& m) {
  std::ofstream f(m.root + "/manifest");
  if (!f) throw std::runtime_error("cannot write manifest in " + m.root);
  f << "format_version = " << m.format_version << "\n";
  f << "count = " << m.count << "\n";
  f << "seed = " << m.seed << "\n";
  const auto& sp = m.spec;
  f << "image_size = " << sp.image_size << "\n";
  f << "object_count_min = " << sp.object_count_min << "\n";
  f << "object_count_max = " << sp.object_count_max << "\n";
  f << "shapes =";
  for (auto s : sp.shape_vocabulary) f << " " << shape_name(s);
  f << "\ncolors =";
  char buf[96];
  for (const auto& c : sp.color_vocabulary) {
    std::snprintf(buf, sizeof(buf), " %.17g:%.17g:%.17g", c[0], c[1], c[2]);
    f << buf;
  }
  std::snprintf(buf, sizeof(buf), "\nsize_min = %.17g\nsize_max = %.17g\n", sp.size_min,
                sp.size_max);
  f << buf;
  f << "background = " << (sp.background_mode == Background::kFlat ? "flat" : "textured")
    << "\n";
  f << "overlap_allowed = " << (sp.overlap_allowed ? 1 : 0) << "\n";
  for (const auto& d : m.scene_dirs) f << "scene = " << d << "\n";
}

DatasetManifest load_manifest(const std::string& root) {
  std::ifstream f(root + "/manifest");
  if (!f) throw ValidationError("missing manifest in " + root);
  DatasetManifest m;
  m.root = root;
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
    };
    trim(key);
    trim(val);
    if (key == "format_version") m.format_version = val;
    else if (key == "count") m.count = std::stoi(val);
    else if (key == "seed") m.seed = std::stoull(val);
    else if (key == "image_size") m.spec.image_size = std::stoi(val);
    else if (key == "object_count_min") m.spec.object_count_min = std::stoi(val);
    else if (key == "object_count_max") m.spec.object_count_max = std::stoi(val);
    else if (key == "size_min") m.spec.size_min = std::stod(val);
    else if (key == "size_max") m.spec.size_max = std::stod(val);
    else if (key == "background")
      m.spec.background_mode = val == "flat" ? Background::kFlat : Background::kTextured;
    else if (key == "overlap_allowed") m.spec.overlap_allowed = val == "1";
    else if (key == "scene") m.scene_dirs.push_back(val);
    else if (key == "shapes") {
      m.spec.shape_vocabulary.clear();
      std::istringstream ss(val);
      std::string tok;
      while (ss >> tok) m.spec.shape_vocabulary.push_back(shape_from_name(tok));
    } else if (key == "colors") {
      m.spec.color_vocabulary.clear();
      std::istringstream ss(val);
      std::string tok;
      while (ss >> tok) {
        std::array<real, 3> c{};
        if (std::sscanf(tok.c_str(), "%lf:%lf:%lf", &c[0], &c[1], &c[2]) != 3)
          throw ValidationError("malformed color entry in manifest: " + tok);
        m.spec.color_vocabulary.push_back(c);
      }
    } else {
      throw ValidationError("unknown manifest key: " + key);
    }
  }
  if (static_cast<int>(m.scene_dirs.size()) != m.count)
    throw ValidationError("manifest count does not match scene list");
  return m;
}

std::vector<Scene> load_all(const DatasetManifest& m) {
  std::vector<Scene> scenes(static_cast<size_t>(m.count));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < m.count; ++i)
    scenes[static_cast<size_t>(i)] = load_scene(m.root + "/" + m.scene_dirs[static_cast<size_t>(i)]);
  return scenes;
}

uint64_t manifest_checksum(const DatasetManifest& m) {
  uint64_t h = file_checksum(m.root + "/manifest");
  for (const auto& d : m.scene_dirs) {
    for (const char* part : {"/image", "/mask", "/props"}) {
      const uint64_t fh = file_checksum(m.root + "/" + d + part);
      h = fnv1a64(&fh, sizeof(fh), h);
    }
  }
  return h;
}

}  // namespace slotgen::scene
