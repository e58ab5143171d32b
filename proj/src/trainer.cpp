#include "slotgen/train/trainer.hpp"

#include "slotgen/core/errors.hpp"

#include <cmath>
#include <sstream>

namespace slotgen::train {

namespace {
// Stream ids for per-step randomness; each draw family is independent of the
// others so adding one never shifts another.
enum Stream : uint64_t {
  kBatch = 1,
  kInit = 2,
  kGamma = 3,
  kEps = 4,
  kNegatives = 5,
  kDropout = 6,
};
}  // namespace

Tensor image_to_signal(const ImageU8& img) {
  Tensor t({img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t[static_cast<int64_t>(c) * img.height * img.width + y * img.width + x] =
            real(2) * (static_cast<real>(img.at(y, x, c)) / 255) - 1;
  return t;
}

Tensor signal_to_image_hw3(const Tensor& signal_chw) {
  const int c = signal_chw.dim(0), h = signal_chw.dim(1), w = signal_chw.dim(2);
  Tensor img({h, w, c});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        real v = (signal_chw[static_cast<int64_t>(ch) * h * w + y * w + x] + 1) / 2;
        img.at(y, x, ch) = v < 0 ? 0 : (v > 1 ? 1 : v);
      }
  return img;
}

Tensor batch_to_signal(const std::vector<ImageU8>& images, const std::vector<int>& indices) {
  const auto& first = images.at(static_cast<size_t>(indices.at(0)));
  const int b = static_cast<int>(indices.size());
  Tensor out({b, first.channels, first.height, first.width});
  const int64_t stride = out.numel() / b;
  for (int i = 0; i < b; ++i) {
    const Tensor one = image_to_signal(images.at(static_cast<size_t>(indices[static_cast<size_t>(i)])));
    std::copy(one.v.begin(), one.v.end(), out.v.begin() + i * stride);
  }
  return out;
}

Trainer::Trainer(model::Pipeline& pipe, const TrainStepConfig& cfg, uint64_t seed)
    : pipe_(&pipe), cfg_(cfg), seed_(seed) {
  if (cfg_.batch_size < 1) throw ValidationError("batch size must be >= 1");
}

real Trainer::learning_rate(int step_index) const {
  const auto& opt = cfg_.optimizer;
  if (opt.warmup_steps <= 0) return opt.lr;
  const real frac = static_cast<real>(step_index + 1) / opt.warmup_steps;
  return opt.lr * std::min(real(1), frac);
}

Trainer::Graphs Trainer::build_losses(const Tensor& images_bchw, int step_index) const {
  const int b = images_bchw.dim(0);
  const int n = pipe_->cfg.slots.n_slots;
  const int d = pipe_->cfg.slots.slot_dim;

  // Features and slots (phi side).
  const model::FeatureMap feats = pipe_->encoder->forward(ag::constant(images_bchw));
  Rng init_rng = derive_rng(seed_, kInit, static_cast<uint64_t>(step_index));
  Tensor noise({n, d});
  init_rng.fill_normal(noise);
  // One draw for the whole batch: every element (and therefore every
  // positive/negative pair) shares the initialization.
  const ag::Var init = pipe_->sa->make_init(noise, b);
  auto [slots, attn] = pipe_->sa->forward(feats, init);

  // Diffusion state, shared by the denoising and contrastive terms.
  Rng gamma_rng = derive_rng(seed_, kGamma, static_cast<uint64_t>(step_index));
  Tensor gamma({b});
  for (int i = 0; i < b; ++i) gamma[i] = cfg_.schedule.gamma(gamma_rng.uniform());
  Rng eps_rng = derive_rng(seed_, kEps, static_cast<uint64_t>(step_index));
  Tensor eps(images_bchw.shape);
  eps_rng.fill_normal(eps);
  const Tensor z_gamma = diffusion::noising(images_bchw, gamma, eps);

  // Denoising term, with per-element semantic-token dropout to train the
  // null tokens used by guidance and editing.
  ag::Var dm_slots = slots.slots;
  if (cfg_.objective.cond_dropout > 0) {
    Rng drop_rng = derive_rng(seed_, kDropout, static_cast<uint64_t>(step_index));
    Tensor drop({b, n});
    for (int i = 0; i < b; ++i) {
      const bool dropped = drop_rng.uniform() < cfg_.objective.cond_dropout;
      for (int j = 0; j < n; ++j) drop.at(i, j) = dropped ? 1 : 0;
    }
    dm_slots = ag::select_rows(drop, slots.slots,
                               pipe_->denoiser->null_semantic_tokens(b, n));
  }
  Graphs g;
  g.slots = slots;
  g.l_dm = denoising_loss_graph(*pipe_, z_gamma, gamma,
                                model::concat_conditioning(dm_slots, *pipe_->registers), eps,
                                /*detach=*/false);
  if (cfg_.objective.contrastive_enabled()) {
    std::vector<int> shifted(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) shifted[static_cast<size_t>(i)] = (i + 1) % b;
    model::SlotSet partner;
    partner.slots = ag::permute_batch(slots.slots, shifted);
    partner.init = slots.init;  // shared by construction
    partner.iteration_count = slots.iteration_count;
    Rng neg_rng = derive_rng(seed_, kNegatives, static_cast<uint64_t>(step_index));
    const Tensor mask = negative_masks(b, n, cfg_.objective.negative_ratio, neg_rng);
    const ag::Var negatives = compose_negatives(slots, partner, mask);
    g.l_cl = contrastive_loss_graph(
        *pipe_, z_gamma, gamma, model::concat_conditioning(negatives, *pipe_->registers), eps);
    g.l_total = ag::add(g.l_dm, ag::scale(g.l_cl, cfg_.objective.lambda_cl));
  } else {
    g.l_total = g.l_dm;
  }

  if (!std::isfinite(g.l_total->value.v[0])) {
    std::ostringstream oss;
    oss << "non-finite loss at step " << step_index << "; gamma draws:";
    for (int i = 0; i < b; ++i) oss << " " << gamma[i];
    throw std::runtime_error(oss.str());
  }
  return g;
}

std::vector<std::string> Trainer::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& name : pipe_->store.names()) {
    const auto& info = pipe_->store.info(name);
    if (!info.trainable) continue;
    if (info.group == model::Group::kTheta && cfg_.freeze == FreezeMode::kNonCrossAttention &&
        !info.cross_attention_kvo)
      continue;
    out.push_back(name);
  }
  return out;
}

real Trainer::apply_gradients(int step_index) {
  const auto names = trainable_names();
  real sq_norm = 0;
  for (const auto& name : names) {
    const auto& var = pipe_->store.get(name);
    if (!var->has_grad()) continue;
    const auto& g = var->grad;
    real s = 0;
    for (real v : g.v) s += v * v;
    sq_norm += s;
  }
  const real norm = std::sqrt(sq_norm);
  const auto& opt = cfg_.optimizer;
  const real scale = norm > opt.clip_norm ? opt.clip_norm / norm : real(1);
  const real lr = learning_rate(step_index);

  ++adam_t_;
  const real bc1 = 1 - std::pow(opt.beta1, static_cast<real>(adam_t_));
  const real bc2 = 1 - std::pow(opt.beta2, static_cast<real>(adam_t_));
  for (const auto& name : names) {
    const auto& var = pipe_->store.get(name);
    auto& slot = adam_[name];
    if (slot.m.numel() != var->value.numel()) {
      slot.m = Tensor::zeros(var->value.shape);
      slot.v = Tensor::zeros(var->value.shape);
    }
    const bool has_g = var->has_grad();
    real* p = var->value.data();
    real* m = slot.m.data();
    real* v = slot.v.data();
    const real* g = has_g ? var->grad.data() : nullptr;
    const int64_t nel = var->value.numel();
    for (int64_t i = 0; i < nel; ++i) {
      const real gi = has_g ? g[i] * scale : real(0);
      m[i] = opt.beta1 * m[i] + (1 - opt.beta1) * gi;
      v[i] = opt.beta2 * v[i] + (1 - opt.beta2) * gi * gi;
      const real mhat = m[i] / bc1;
      const real vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + opt.adam_eps) + opt.weight_decay * p[i]);
    }
  }
  return norm;
}

LossBreakdown Trainer::step(const std::vector<ImageU8>& dataset, int step_index) {
  if (dataset.empty()) throw ValidationError("train step needs a nonempty dataset");
  Rng batch_rng = derive_rng(seed_, kBatch, static_cast<uint64_t>(step_index));
  std::vector<int> indices(static_cast<size_t>(cfg_.batch_size));
  for (auto& ix : indices) ix = batch_rng.uniform_int(static_cast<int>(dataset.size()));
  const Tensor images = batch_to_signal(dataset, indices);

  pipe_->store.zero_grads();
  Graphs g;
  try {
    g = build_losses(images, step_index);
  } catch (const std::runtime_error& e) {
    std::ostringstream oss;
    oss << e.what() << "; batch indices:";
    for (int ix : indices) oss << " " << ix;
    throw std::runtime_error(oss.str());
  }
  ag::backward(g.l_total);

  LossBreakdown out;
  out.l_dm = g.l_dm->value.v[0];
  out.l_cl = g.l_cl ? g.l_cl->value.v[0] : 0;
  out.lambda_cl = cfg_.objective.lambda_cl;
  out.l_total = g.l_total->value.v[0];
  out.grad_norm = apply_gradients(step_index);
  out.lr = learning_rate(step_index);
  return out;
}

}  // namespace slotgen::train
