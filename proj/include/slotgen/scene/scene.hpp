#pragma once

#include "slotgen/core/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace slotgen::scene {

enum class Background { kFlat, kTextured };
enum class Shape { kCircle, kSquare, kTriangle };

const char* shape_name(Shape s);
Shape shape_from_name(const std::string& name);

struct SceneSpec {
  int image_size = 64;
  int object_count_min = 2;
  int object_count_max = 4;
  std::vector<Shape> shape_vocabulary = {Shape::kCircle, Shape::kSquare, Shape::kTriangle};
  std::vector<std::array<real, 3>> color_vocabulary = default_palette();
  real size_min = 0.15;
  real size_max = 0.35;
  Background background_mode = Background::kFlat;
  bool overlap_allowed = true;

  static std::vector<std::array<real, 3>> default_palette();
  // Throws ValidationError on violated invariants.
  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

struct ObjectRecord {
  int id = 0;  // matches the mask label
  Shape shape = Shape::kCircle;
  int color_index = 0;
  real cx = 0, cy = 0;  // center in [0,1]^2, x right, y down
  real size = 0;        // fraction of image side
  bool operator==(const ObjectRecord&) const = default;
};

struct Scene {
  Tensor image;            // [H,W,3] in [0,1]
  std::vector<int> masks;  // H*W labels, 0 = background, 1..K visible instances
  std::vector<ObjectRecord> properties;

  int height() const { return image.dim(0); }
  int width() const { return image.dim(1); }
  int mask_at(int y, int x) const { return masks[static_cast<size_t>(y) * width() + x]; }
};

// Deterministic for fixed (spec, seed). Objects are drawn back to front; masks
// hold visible pixels only; every instance keeps >= kMinVisiblePixels of them.
inline constexpr int kMinVisiblePixels = 16;
Scene generate_scene(const SceneSpec& spec, uint64_t seed);

struct DatasetManifest {
  std::string root;
  int count = 0;
  uint64_t seed = 0;
  SceneSpec spec;
  std::string format_version = "1";
  std::vector<std::string> scene_dirs;  // relative to root, manifest order
};

void save_scene(const Scene& s, const std::string& dir);
Scene load_scene(const std::string& dir);

DatasetManifest generate_dataset(const SceneSpec& spec, int count, uint64_t seed,
                                 const std::string& root);
void save_manifest(const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& root);
std::vector<Scene> load_all(const DatasetManifest& m);
uint64_t manifest_checksum(const DatasetManifest& m);

}  // namespace slotgen::scene
