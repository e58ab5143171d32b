#include "slotgen/model/encoder.hpp"

#include "slotgen/core/errors.hpp"

namespace slotgen::model {

namespace {
bool is_pow2(int x) { return x > 0 && (x & (x - 1)) == 0; }
}  // namespace

Encoder::Encoder(const EncoderConfig& cfg_in, ParamStore& store, Rng& rng)
    : cfg(cfg_in), store_(&store) {
  if (!is_pow2(cfg.patch)) throw ValidationError("encoder patch must be a power of two");
  if (cfg.image_size % cfg.patch != 0)
    throw ValidationError("image size not divisible by encoder patch");
  while ((1 << stages_) < cfg.patch) ++stages_;
  int in_c = 3;
  for (int s = 0; s < stages_; ++s) {
    const int out_c = s + 1 == stages_ ? cfg.d_input
                                       : std::min(cfg.d_input, cfg.base_channels << s);
    const std::string p = "encoder.conv" + std::to_string(s);
    store.create(p + ".w", kaiming_conv_init(out_c, in_c, 3, 3, rng), Group::kPhi);
    store.create(p + ".b", Tensor::zeros({out_c}), Group::kPhi);
    chans_.push_back(out_c);
    in_c = out_c;
  }
  const int m = grid() * grid();
  store.create("encoder.ln.gamma", Tensor::full({cfg.d_input}, 1), Group::kPhi);
  store.create("encoder.ln.beta", Tensor::zeros({cfg.d_input}), Group::kPhi);
  store.create("encoder.pos", normal_init({m, cfg.d_input}, 0.02, rng), Group::kPhi);
}

FeatureMap Encoder::forward(const ag::Var& images_bchw) const {
  const auto& s = images_bchw->value.shape;
  if (s.size() != 4 || s[1] != 3)
    throw ValidationError("encoder expects [B,3,H,W] input, got " +
                          images_bchw->value.shape_str());
  if (s[2] != cfg.image_size || s[3] != cfg.image_size)
    throw ValidationError("encoder configured for image size " +
                          std::to_string(cfg.image_size));
  const int b = s[0];
  ag::Var x = images_bchw;
  for (int st = 0; st < stages_; ++st) {
    const std::string p = "encoder.conv" + std::to_string(st);
    x = ag::conv2d(x, store_->get(p + ".w"), store_->get(p + ".b"), /*stride=*/2,
                   /*pad=*/1, /*pad_mode=*/1);
    x = ag::silu(x);
  }
  const int g = grid();
  const int m = g * g;
  // [B, D, h, w] -> [B, M, D]
  x = ag::transpose_last2(ag::reshape(x, {b, cfg.d_input, m}));
  x = ag::layernorm(x, store_->get("encoder.ln.gamma"), store_->get("encoder.ln.beta"));
  x = ag::add(x, ag::expand_batch(store_->get("encoder.pos"), b));
  ag::check_finite(x, "encoder output");
  return FeatureMap{x, g, g};
}

}  // namespace slotgen::model
