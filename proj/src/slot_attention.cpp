#include "slotgen/model/slot_attention.hpp"

#include "slotgen/core/errors.hpp"

#include <cmath>

namespace slotgen::model {

SlotAttention::SlotAttention(const SlotAttentionConfig& cfg_in, ParamStore& store, Rng& rng)
    : cfg(cfg_in), store_(&store) {
  const int d = cfg.slot_dim;
  store.create("sa.mu", Tensor::zeros({d}), Group::kPhi);
  store.create("sa.log_sigma", Tensor::zeros({d}), Group::kPhi);
  store.create("sa.ln_input.gamma", Tensor::full({cfg.d_input}, 1), Group::kPhi);
  store.create("sa.ln_input.beta", Tensor::zeros({cfg.d_input}), Group::kPhi);
  store.create("sa.ln_slots.gamma", Tensor::full({d}, 1), Group::kPhi);
  store.create("sa.ln_slots.beta", Tensor::zeros({d}), Group::kPhi);
  store.create("sa.ln_mlp.gamma", Tensor::full({d}, 1), Group::kPhi);
  store.create("sa.ln_mlp.beta", Tensor::zeros({d}), Group::kPhi);
  store.create("sa.q.w", linear_init(d, d, rng), Group::kPhi);
  store.create("sa.k.w", linear_init(d, cfg.d_input, rng), Group::kPhi);
  store.create("sa.v.w", linear_init(d, cfg.d_input, rng), Group::kPhi);
  for (const char* gate : {"z", "r", "h"}) {
    const std::string p = std::string("sa.gru.") + gate;
    store.create(p + ".wu", linear_init(d, d, rng), Group::kPhi);
    store.create(p + ".wh", linear_init(d, d, rng), Group::kPhi);
    store.create(p + ".b", Tensor::zeros({d}), Group::kPhi);
  }
  store.create("sa.mlp.w1", linear_init(cfg.mlp_hidden, d, rng), Group::kPhi);
  store.create("sa.mlp.b1", Tensor::zeros({cfg.mlp_hidden}), Group::kPhi);
  store.create("sa.mlp.w2", linear_init(d, cfg.mlp_hidden, rng), Group::kPhi);
  store.create("sa.mlp.b2", Tensor::zeros({d}), Group::kPhi);
}

Tensor SlotAttention::draw_init_noise(int n, int d, uint64_t seed) {
  Rng rng = derive_rng(seed, 0x510715);
  Tensor noise({n, d});
  rng.fill_normal(noise);
  return noise;
}

ag::Var SlotAttention::make_init(const Tensor& noise_nd, int batch) const {
  if (noise_nd.ndim() != 2 || noise_nd.dim(1) != cfg.slot_dim)
    throw ValidationError("init noise must be [N, slot_dim]");
  const int n = noise_nd.dim(0);
  // init = mu + exp(log_sigma) * noise, broadcast over slots then batch.
  ag::Var mu = store_->get("sa.mu");
  ag::Var sig = ag::exp_(store_->get("sa.log_sigma"));
  ag::Var mu_rows = ag::expand_batch(mu, n);         // [N, D]
  ag::Var sig_rows = ag::expand_batch(sig, n);       // [N, D]
  ag::Var init = ag::add(mu_rows, ag::mul(sig_rows, ag::constant(noise_nd)));
  return ag::expand_batch(init, batch);  // [B, N, D]
}

ag::Var SlotAttention::gru(const ag::Var& h_rows, const ag::Var& u_rows) const {
  auto gate = [&](const char* g, const ag::Var& u, const ag::Var& h) {
    const std::string p = std::string("sa.gru.") + g;
    return ag::add(ag::linear(u, store_->get(p + ".wu"), store_->get(p + ".b")),
                   ag::linear(h, store_->get(p + ".wh"), nullptr));
  };
  const ag::Var z = ag::sigmoid(gate("z", u_rows, h_rows));
  const ag::Var r = ag::sigmoid(gate("r", u_rows, h_rows));
  const std::string p = "sa.gru.h";
  const ag::Var h_cand = ag::tanh_(
      ag::add(ag::linear(u_rows, store_->get(p + ".wu"), store_->get(p + ".b")),
              ag::linear(ag::mul(r, h_rows), store_->get(p + ".wh"), nullptr)));
  // h' = h + z * (h_cand - h)
  return ag::add(h_rows, ag::mul(z, ag::sub(h_cand, h_rows)));
}

std::pair<SlotSet, AttentionMap> SlotAttention::forward(const FeatureMap& features,
                                                        const ag::Var& init_bnd) const {
  const auto& fs = features.features->value.shape;
  const auto& is = init_bnd->value.shape;
  if (is.size() != 3 || is[2] != cfg.slot_dim)
    throw ValidationError("slot init must be [B, N, slot_dim]");
  if (fs[0] != is[0]) throw ValidationError("feature/init batch mismatch");
  const int b = fs[0], m = fs[1], n = is[1];

  ag::Var f = ag::layernorm(features.features, store_->get("sa.ln_input.gamma"),
                            store_->get("sa.ln_input.beta"));
  const ag::Var k = ag::linear(f, store_->get("sa.k.w"), nullptr);  // [B,M,D]
  const ag::Var v = ag::linear(f, store_->get("sa.v.w"), nullptr);
  const real scale = real(1) / std::sqrt(static_cast<real>(cfg.slot_dim));

  AttentionMap attn_map;
  attn_map.h = features.h;
  attn_map.w = features.w;

  ag::Var slots = init_bnd;
  for (int t = 0; t < cfg.iterations; ++t) {
    const ag::Var s_norm = ag::layernorm(slots, store_->get("sa.ln_slots.gamma"),
                                         store_->get("sa.ln_slots.beta"));
    const ag::Var q = ag::linear(s_norm, store_->get("sa.q.w"), nullptr);  // [B,N,D]
    // softmax over the slot axis: competition among slots per location
    const ag::Var attn = ag::softmax_last(ag::scale(ag::bmm_nt(k, q), scale));  // [B,M,N]
    attn_map.per_iteration.push_back(attn->value);
    // weighted mean over locations per slot
    const ag::Var w = ag::div_rowsum(ag::transpose_last2(attn), 1e-8);  // [B,N,M]
    const ag::Var updates = ag::bmm_nn(w, v);                           // [B,N,D]

    const ag::Var h_rows = ag::reshape(slots, {b * n, cfg.slot_dim});
    const ag::Var u_rows = ag::reshape(updates, {b * n, cfg.slot_dim});
    ag::Var next = ag::reshape(gru(h_rows, u_rows), {b, n, cfg.slot_dim});

    const ag::Var res = ag::layernorm(next, store_->get("sa.ln_mlp.gamma"),
                                      store_->get("sa.ln_mlp.beta"));
    const ag::Var hidden =
        ag::silu(ag::linear(res, store_->get("sa.mlp.w1"), store_->get("sa.mlp.b1")));
    next = ag::add(next, ag::linear(hidden, store_->get("sa.mlp.w2"), store_->get("sa.mlp.b2")));
    ag::check_finite(next, "slot attention iteration " + std::to_string(t + 1));
    slots = next;
  }
  (void)m;
  return {SlotSet{slots, init_bnd, cfg.iterations}, attn_map};
}

MaskSet attention_masks(const Tensor& final_attention_mn, int h, int w) {
  const int m = final_attention_mn.dim(0), n = final_attention_mn.dim(1);
  if (m != h * w) throw ValidationError("attention rows must equal h*w");
  MaskSet out;
  out.h = h;
  out.w = w;
  out.soft = Tensor({n, h, w});
  // Column normalization over locations; an all-zero column stays all-zero
  // and can never win an argmax.
  std::vector<real> colsum(static_cast<size_t>(n), 0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) colsum[static_cast<size_t>(j)] += final_attention_mn.at(i, j);
  Tensor norm({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      norm.at(i, j) = colsum[static_cast<size_t>(j)] > 0
                          ? final_attention_mn.at(i, j) / colsum[static_cast<size_t>(j)]
                          : real(0);
  out.hard.assign(static_cast<size_t>(m), 0);
  for (int i = 0; i < m; ++i) {
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (norm.at(i, j) > norm.at(i, best)) best = j;  // ties keep the lowest index
    out.hard[static_cast<size_t>(i)] = best;
    for (int j = 0; j < n; ++j) out.soft.at(j, i / w, i % w) = norm.at(i, j);
  }
  return out;
}

}  // namespace slotgen::model
