#pragma once

#include "slotgen/model/params.hpp"

namespace slotgen::model {

struct EncoderConfig {
  int image_size = 64;
  int patch = 8;  // power of two; spatial grid = image_size / patch
  int d_input = 64;
  int base_channels = 32;
  bool operator==(const EncoderConfig&) const = default;
};

struct FeatureMap {
  ag::Var features;  // [B, M, d_input], M = h*w
  int h = 0, w = 0;
};

// Strided conv stack with reflect padding (so constant inputs stay constant
// across locations), channel layer norm, and a learned 2-D positional table.
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, ParamStore& store, Rng& rng);
  FeatureMap forward(const ag::Var& images_bchw) const;

  EncoderConfig cfg;
  int grid() const { return cfg.image_size / cfg.patch; }

 private:
  ParamStore* store_;
  int stages_ = 0;
  std::vector<int> chans_;
};

}  // namespace slotgen::model
