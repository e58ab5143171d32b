#include "slotgen/model/denoiser.hpp"

#include "slotgen/core/errors.hpp"

#include <cmath>

namespace slotgen::model {

namespace {

int norm_groups(int channels) {
  if (channels % 8 == 0) return 8;
  if (channels % 4 == 0) return 4;
  return 1;
}

void create_resblock(ParamStore& store, Rng& rng, const std::string& prefix, int cin,
                     int cout, int temb_dim) {
  store.create(prefix + ".gn1.g", Tensor::full({cin}, 1), Group::kTheta);
  store.create(prefix + ".gn1.b", Tensor::zeros({cin}), Group::kTheta);
  store.create(prefix + ".c1.w", kaiming_conv_init(cout, cin, 3, 3, rng), Group::kTheta);
  store.create(prefix + ".c1.b", Tensor::zeros({cout}), Group::kTheta);
  store.create(prefix + ".temb.w", linear_init(cout, temb_dim, rng), Group::kTheta);
  store.create(prefix + ".temb.b", Tensor::zeros({cout}), Group::kTheta);
  store.create(prefix + ".gn2.g", Tensor::full({cout}, 1), Group::kTheta);
  store.create(prefix + ".gn2.b", Tensor::zeros({cout}), Group::kTheta);
  store.create(prefix + ".c2.w", kaiming_conv_init(cout, cout, 3, 3, rng), Group::kTheta);
  store.create(prefix + ".c2.b", Tensor::zeros({cout}), Group::kTheta);
  if (cin != cout)
    store.create(prefix + ".skip.w", kaiming_conv_init(cout, cin, 1, 1, rng), Group::kTheta);
}

void create_xattn(ParamStore& store, Rng& rng, const std::string& prefix, int c,
                  int cond_dim) {
  store.create(prefix + ".ln.g", Tensor::full({c}, 1), Group::kTheta);
  store.create(prefix + ".ln.b", Tensor::zeros({c}), Group::kTheta);
  store.create(prefix + ".q.w", linear_init(c, c, rng), Group::kTheta);
  // The key/value/output projections form the restricted finetuning set.
  store.create(prefix + ".k.w", linear_init(c, cond_dim, rng), Group::kTheta, true, true);
  store.create(prefix + ".v.w", linear_init(c, cond_dim, rng), Group::kTheta, true, true);
  store.create(prefix + ".out.w", linear_init(c, c, rng), Group::kTheta, true, true);
  store.create(prefix + ".out.b", Tensor::zeros({c}), Group::kTheta, true, true);
}

}  // namespace

Denoiser::Denoiser(const DenoiserConfig& cfg_in, ParamStore& store, Rng& rng)
    : cfg(cfg_in), store_(&store) {
  if (cfg.image_size % cfg.patch != 0)
    throw ValidationError("denoiser patch must divide image size");
  if (cfg.levels < 1 || cfg.levels > 2)
    throw ValidationError("denoiser supports 1 or 2 levels");
  grid_ = cfg.image_size / cfg.patch;
  if (cfg.levels == 2 && grid_ % 2 != 0)
    throw ValidationError("two-level denoiser needs an even internal grid");
  const int c0 = cfg.base_channels;
  const int c1 = 2 * c0;
  const int temb_dim = 4 * c0;
  const int pp = cfg.patch * cfg.patch * cfg.in_channels;

  store.create("denoiser.stem.w", kaiming_conv_init(c0, cfg.in_channels, cfg.patch, cfg.patch, rng),
               Group::kTheta);
  store.create("denoiser.stem.b", Tensor::zeros({c0}), Group::kTheta);
  store.create("denoiser.time.w1", linear_init(temb_dim, 2 * cfg.time_freqs, rng), Group::kTheta);
  store.create("denoiser.time.b1", Tensor::zeros({temb_dim}), Group::kTheta);
  store.create("denoiser.time.w2", linear_init(temb_dim, temb_dim, rng), Group::kTheta);
  store.create("denoiser.time.b2", Tensor::zeros({temb_dim}), Group::kTheta);

  create_resblock(store, rng, "denoiser.res0", c0, c0, temb_dim);
  create_xattn(store, rng, "denoiser.xattn0", c0, cfg.cond_dim);
  if (cfg.levels == 2) {
    store.create("denoiser.down.w", kaiming_conv_init(c1, c0, 3, 3, rng), Group::kTheta);
    store.create("denoiser.down.b", Tensor::zeros({c1}), Group::kTheta);
    create_resblock(store, rng, "denoiser.res1", c1, c1, temb_dim);
    create_xattn(store, rng, "denoiser.xattn1", c1, cfg.cond_dim);
    store.create("denoiser.up.w", kaiming_conv_init(c0, c1, 3, 3, rng), Group::kTheta);
    store.create("denoiser.up.b", Tensor::zeros({c0}), Group::kTheta);
    store.create("denoiser.merge.w", kaiming_conv_init(c0, 2 * c0, 3, 3, rng), Group::kTheta);
    store.create("denoiser.merge.b", Tensor::zeros({c0}), Group::kTheta);
    create_resblock(store, rng, "denoiser.res_out", c0, c0, temb_dim);
  }
  store.create("denoiser.head.gn.g", Tensor::full({c0}, 1), Group::kTheta);
  store.create("denoiser.head.gn.b", Tensor::zeros({c0}), Group::kTheta);
  // Zero-initialized output projection: the untrained model predicts zero
  // noise, so the initial denoising loss sits at E||eps||^2.
  store.create("denoiser.head.w", Tensor::zeros({pp, c0, 1, 1}), Group::kTheta);
  store.create("denoiser.head.b", Tensor::zeros({pp}), Group::kTheta);
  // Learned log-SNR-dependent input gain: the prediction is
  // gate(gamma) .* z_noisy + unet(...), so the near-identity regime at low
  // SNR does not have to squeeze through the patchified feature stream.
  store.create("denoiser.gate.w", Tensor::zeros({cfg.in_channels, temb_dim}), Group::kTheta);
  store.create("denoiser.gate.b", Tensor::zeros({cfg.in_channels}), Group::kTheta);
  store.create("denoiser.null_tokens",
               normal_init({cfg.null_tokens, cfg.cond_dim}, 0.5, rng), Group::kTheta);
}

ag::Var Denoiser::p(const std::string& name, bool detach) const {
  return store_->get(name, detach);
}

ag::Var Denoiser::group_norm(const std::string& prefix, const ag::Var& x, bool detach) const {
  const int c = x->value.dim(1);
  const int g = norm_groups(c);
  const int b = x->value.dim(0);
  const int hw = x->value.dim(2) * x->value.dim(3);
  // Rows of [B*G, (C/G)*H*W] normalized, then per-channel affine.
  ag::Var rows = ag::reshape(x, {b * g, (c / g) * hw});
  rows = ag::layernorm(rows, nullptr, nullptr, 1e-6);
  ag::Var y = ag::reshape(rows, x->value.shape);
  y = ag::mul_channel(y, p(prefix + ".g", detach));
  return ag::add_channel(y, p(prefix + ".b", detach));
}

ag::Var Denoiser::resblock(const std::string& prefix, const ag::Var& x, const ag::Var& temb,
                           bool detach) const {
  ag::Var h = group_norm(prefix + ".gn1", x, detach);
  h = ag::silu(h);
  h = ag::conv2d(h, p(prefix + ".c1.w", detach), p(prefix + ".c1.b", detach), 1, 1, 0);
  h = ag::add_channel_bias(
      h, ag::linear(temb, p(prefix + ".temb.w", detach), p(prefix + ".temb.b", detach)));
  h = group_norm(prefix + ".gn2", h, detach);
  h = ag::silu(h);
  h = ag::conv2d(h, p(prefix + ".c2.w", detach), p(prefix + ".c2.b", detach), 1, 1, 0);
  ag::Var skip = x;
  if (store_->has(prefix + ".skip.w"))
    skip = ag::conv2d(x, p(prefix + ".skip.w", detach), nullptr, 1, 0, 0);
  return ag::add(skip, h);
}

ag::Var Denoiser::cross_attention(const std::string& prefix, const ag::Var& x,
                                  const ag::Var& cond, bool detach,
                                  AttentionRecord* record) const {
  const int b = x->value.dim(0), c = x->value.dim(1);
  const int hw = x->value.dim(2) * x->value.dim(3);
  const int dh = c / cfg.heads;
  ag::Var tokens = ag::transpose_last2(ag::reshape(x, {b, c, hw}));  // [B,HW,C]
  ag::Var qin = ag::layernorm(tokens, p(prefix + ".ln.g", detach), p(prefix + ".ln.b", detach));
  const ag::Var q = ag::linear(qin, p(prefix + ".q.w", detach), nullptr);
  const ag::Var k = ag::linear(cond, p(prefix + ".k.w", detach), nullptr);
  const ag::Var v = ag::linear(cond, p(prefix + ".v.w", detach), nullptr);
  const real scale = real(1) / std::sqrt(static_cast<real>(dh));

  AttentionRecord::Layer layer;
  layer.name = prefix;
  ag::Var heads_out;
  for (int h = 0; h < cfg.heads; ++h) {
    const ag::Var qh = ag::slice_last(q, h * dh, dh);
    const ag::Var kh = ag::slice_last(k, h * dh, dh);
    const ag::Var vh = ag::slice_last(v, h * dh, dh);
    const ag::Var probs = ag::softmax_last(ag::scale(ag::bmm_nt(qh, kh), scale));
    if (record) layer.head_probs.push_back(probs->value);
    const ag::Var oh = ag::bmm_nn(probs, vh);
    heads_out = h == 0 ? oh : ag::concat_last(heads_out, oh);
  }
  if (record) record->layers.push_back(std::move(layer));
  const ag::Var out =
      ag::linear(heads_out, p(prefix + ".out.w", detach), p(prefix + ".out.b", detach));
  return ag::reshape(ag::transpose_last2(ag::add(tokens, out)),
                     {b, c, x->value.dim(2), x->value.dim(3)});
}

ag::Var Denoiser::null_semantic_tokens(int batch, int n_semantic, bool detach_params) const {
  if (n_semantic > cfg.null_tokens)
    throw ValidationError("requested more null tokens than configured");
  ag::Var rows = p("denoiser.null_tokens", detach_params);
  if (n_semantic < cfg.null_tokens) rows = ag::slice_rows(rows, 0, n_semantic);
  return ag::expand_batch(rows, batch);
}

ag::Var Denoiser::forward(const Tensor& z_noisy_bchw, const Tensor& gamma_b,
                          const ag::Var& cond, bool detach_params,
                          AttentionRecord* record) const {
  const auto& zs = z_noisy_bchw.shape;
  if (zs.size() != 4 || zs[1] != cfg.in_channels || zs[2] != cfg.image_size ||
      zs[3] != cfg.image_size)
    throw ValidationError("denoiser input shape mismatch");
  const int b = zs[0];
  if (gamma_b.numel() != b) throw ValidationError("gamma must have one entry per batch element");
  if (cond->value.ndim() != 3 || cond->value.dim(0) != b ||
      cond->value.dim(2) != cfg.cond_dim)
    throw ValidationError("conditioning must be [B, T, cond_dim]");
  const bool d = detach_params;

  // Sinusoidal log-SNR features, log-spaced frequencies spanning the schedule.
  Tensor tf({b, 2 * cfg.time_freqs});
  for (int i = 0; i < b; ++i)
    for (int kf = 0; kf < cfg.time_freqs; ++kf) {
      const real omega =
          real(0.1) * std::pow(real(100), static_cast<real>(kf) / (cfg.time_freqs - 1));
      tf.at(i, 2 * kf) = std::sin(gamma_b[i] * omega);
      tf.at(i, 2 * kf + 1) = std::cos(gamma_b[i] * omega);
    }
  ag::Var temb = ag::silu(
      ag::linear(ag::constant(tf), p("denoiser.time.w1", d), p("denoiser.time.b1", d)));
  temb = ag::linear(temb, p("denoiser.time.w2", d), p("denoiser.time.b2", d));

  ag::Var x = ag::conv2d(ag::constant(z_noisy_bchw), p("denoiser.stem.w", d),
                         p("denoiser.stem.b", d), cfg.patch, 0, 0);
  x = resblock("denoiser.res0", x, temb, d);
  x = cross_attention("denoiser.xattn0", x, cond, d, record);
  ag::check_finite(x, "denoiser level 0");
  if (cfg.levels == 2) {
    const ag::Var skip = x;
    x = ag::conv2d(ag::silu(x), p("denoiser.down.w", d), p("denoiser.down.b", d), 2, 1, 0);
    x = resblock("denoiser.res1", x, temb, d);
    x = cross_attention("denoiser.xattn1", x, cond, d, record);
    ag::check_finite(x, "denoiser level 1");
    x = ag::conv2d(ag::upsample_nearest2(x), p("denoiser.up.w", d), p("denoiser.up.b", d), 1,
                   1, 0);
    x = ag::conv2d(ag::concat_channels(skip, x), p("denoiser.merge.w", d),
                   p("denoiser.merge.b", d), 1, 1, 0);
    x = resblock("denoiser.res_out", x, temb, d);
  }
  x = group_norm("denoiser.head.gn", x, d);
  x = ag::silu(x);
  x = ag::conv2d(x, p("denoiser.head.w", d), p("denoiser.head.b", d), 1, 0, 0);
  x = ag::unpatchify(x, cfg.patch);
  const ag::Var gate =
      ag::linear(temb, p("denoiser.gate.w", d), p("denoiser.gate.b", d));
  x = ag::add(x, ag::mul_channel_bias(ag::constant(z_noisy_bchw), gate));
  ag::check_finite(x, "denoiser head");
  return x;
}

}  // namespace slotgen::model
