#include "doctest.h"

#include "slotgen/core/errors.hpp"
#include "slotgen/model/slot_attention.hpp"
#include "testutil.hpp"

#include <cmath>

using namespace slotgen;
using namespace slotgen::model;
using testutil::param_grad_check;
using testutil::randomize_params;

namespace {

struct EncoderFixture {
  ParamStore store;
  std::unique_ptr<Encoder> enc;
  explicit EncoderFixture(EncoderConfig cfg, uint64_t seed = 1) {
    Rng rng(seed);
    enc = std::make_unique<Encoder>(cfg, store, rng);
  }
};

Tensor random_images(int b, int s, uint64_t seed) {
  Rng rng(seed);
  Tensor t({b, 3, s, s});
  rng.fill_uniform(t, 0, 1);
  return t;
}

}  // namespace

TEST_CASE("encoder shape contract: 64px, patch 8 -> M=64, (8,8)") {
  EncoderFixture f({64, 8, 64, 32});
  const auto fm = f.enc->forward(ag::constant(random_images(2, 64, 3)));
  CHECK(fm.h == 8);
  CHECK(fm.w == 8);
  CHECK(fm.features->value.shape == std::vector<int>{2, 64, 64});
}

TEST_CASE("encoder rejects sizes not divisible by patch") {
  ParamStore store;
  Rng rng(1);
  CHECK_THROWS_AS(Encoder({60, 8, 64, 32}, store, rng), ValidationError);
}

TEST_CASE("constant image gives identical rows once positions are zeroed") {
  EncoderFixture f({32, 4, 16, 8});
  Tensor img({1, 3, 32, 32});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = 0.37;
  // positional table zeroed -> all locations bit-identical
  auto& pos = f.store.get("encoder.pos")->value;
  std::fill(pos.v.begin(), pos.v.end(), real(0));
  const auto fm = f.enc->forward(ag::constant(img));
  const auto& v = fm.features->value;
  const int m = v.dim(1), d = v.dim(2);
  for (int i = 1; i < m; ++i)
    for (int j = 0; j < d; ++j) CHECK(v.at(0, i, j) == v.at(0, 0, j));
}

TEST_CASE("encoder gradient matches finite differences") {
  EncoderFixture f({8, 2, 8, 8});
  randomize_params(f.store, 11);
  const Tensor img = random_images(1, 8, 5);
  for (const char* pname : {"encoder.conv0.w", "encoder.ln.gamma", "encoder.pos"}) {
    const auto r = param_grad_check(f.store, pname, [&] {
      return ag::mean_all(ag::square(f.enc->forward(ag::constant(img)).features));
    });
    INFO(pname, " rel err ", r.max_rel_err);
    CHECK(r.max_rel_err < 1e-4);
  }
}

namespace {
struct SaFixture {
  ParamStore store;
  std::unique_ptr<Encoder> enc;
  std::unique_ptr<SlotAttention> sa;
  SaFixture(int n_slots, int slot_dim, int d_input, int image, int patch,
            uint64_t seed = 2) {
    Rng rng(seed);
    enc = std::make_unique<Encoder>(EncoderConfig{image, patch, d_input, 8}, store, rng);
    sa = std::make_unique<SlotAttention>(SlotAttentionConfig{n_slots, slot_dim, d_input, 3, 2 * slot_dim},
                                         store, rng);
  }
};
}  // namespace

TEST_CASE("init_slots: determinism, shared-init contract, sigma->0 limit") {
  SaFixture f(4, 16, 16, 16, 4);
  const Tensor n1 = SlotAttention::draw_init_noise(4, 16, 9);
  const Tensor n2 = SlotAttention::draw_init_noise(4, 16, 9);
  CHECK(n1.v == n2.v);  // same seed, identical draw
  CHECK(n1.v != SlotAttention::draw_init_noise(4, 16, 10).v);

  // Two "images" (batch of 2) share the same init rows.
  const ag::Var init = f.sa->make_init(n1, 2);
  for (int j = 0; j < 4 * 16; ++j) CHECK(init->value[j] == init->value[4 * 16 + j]);

  // sigma -> 0 collapses every draw onto mu.
  auto& mu = f.store.get("sa.mu")->value;
  for (int i = 0; i < 16; ++i) mu[i] = 0.5 + i * 0.01;
  auto& ls = f.store.get("sa.log_sigma")->value;
  std::fill(ls.v.begin(), ls.v.end(), real(-1e9));
  const ag::Var collapsed = f.sa->make_init(n1, 1);
  for (int s = 0; s < 4; ++s)
    for (int i = 0; i < 16; ++i)
      CHECK(collapsed->value.at(0, s, i) == doctest::Approx(mu[i]).epsilon(1e-12));
}

TEST_CASE("slot attention: N=1 attention is exactly one") {
  SaFixture f(1, 16, 16, 16, 4);
  const auto fm = f.enc->forward(ag::constant(random_images(1, 16, 7)));
  const auto init = f.sa->make_init(SlotAttention::draw_init_noise(1, 16, 0), 1);
  auto [slots, attn] = f.sa->forward(fm, init);
  for (const auto& a : attn.per_iteration)
    for (real v : a.v) CHECK(v == 1.0);
}

TEST_CASE("identical init rows attend 0.5/0.5 at the first iteration") {
  SaFixture f(2, 16, 16, 16, 4);
  randomize_params(f.store, 3);
  Tensor noise({2, 16});  // both rows zero -> identical slots
  const auto fm = f.enc->forward(ag::constant(random_images(1, 16, 8)));
  auto [slots, attn] = f.sa->forward(fm, f.sa->make_init(noise, 1));
  const auto& first = attn.per_iteration.front();
  for (int m = 0; m < first.dim(1); ++m) {
    CHECK(first.at(0, m, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(first.at(0, m, 1) == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("attention rows sum to one at every iteration") {
  SaFixture f(5, 16, 16, 16, 4);
  randomize_params(f.store, 4);
  const auto fm = f.enc->forward(ag::constant(random_images(2, 16, 9)));
  const auto init = f.sa->make_init(SlotAttention::draw_init_noise(5, 16, 1), 2);
  auto [slots, attn] = f.sa->forward(fm, init);
  CHECK(attn.per_iteration.size() == 3);
  for (const auto& a : attn.per_iteration)
    for (int b = 0; b < a.dim(0); ++b)
      for (int m = 0; m < a.dim(1); ++m) {
        real s = 0;
        for (int n = 0; n < a.dim(2); ++n) s += a.at(b, m, n);
        CHECK(std::abs(s - 1) <= 1e-6);
      }
}

TEST_CASE("permutation equivariance: permuting init permutes slots and attention") {
  SaFixture f(4, 16, 16, 16, 4);
  randomize_params(f.store, 5);
  const Tensor img = random_images(1, 16, 10);
  const Tensor noise = SlotAttention::draw_init_noise(4, 16, 2);
  const std::vector<int> perm = {2, 0, 3, 1};
  Tensor noise_p({4, 16});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 16; ++j) noise_p.at(i, j) = noise.at(perm[static_cast<size_t>(i)], j);

  const auto fm = f.enc->forward(ag::constant(img));
  auto [s1, a1] = f.sa->forward(fm, f.sa->make_init(noise, 1));
  auto [s2, a2] = f.sa->forward(fm, f.sa->make_init(noise_p, 1));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 16; ++j)
      CHECK(s2.slots->value.at(0, i, j) ==
            doctest::Approx(s1.slots->value.at(0, perm[static_cast<size_t>(i)], j)).epsilon(1e-10));
  const auto& last1 = a1.per_iteration.back();
  const auto& last2 = a2.per_iteration.back();
  for (int m = 0; m < last1.dim(1); ++m)
    for (int i = 0; i < 4; ++i)
      CHECK(last2.at(0, m, i) ==
            doctest::Approx(last1.at(0, m, perm[static_cast<size_t>(i)])).epsilon(1e-10));
}

TEST_CASE("slot attention gradient matches finite differences (D_slot=8, M=16)") {
  SaFixture f(2, 8, 8, 8, 2);  // 8px image, patch 2 -> 4x4 = 16 locations
  randomize_params(f.store, 6);
  const Tensor img = random_images(1, 8, 11);
  const Tensor noise = SlotAttention::draw_init_noise(2, 8, 3);
  auto build = [&] {
    const auto fm = f.enc->forward(ag::constant(img));
    auto [slots, attn] = f.sa->forward(fm, f.sa->make_init(noise, 1));
    return ag::sum_all(slots.slots);
  };
  for (const char* pname : {"sa.q.w", "sa.k.w", "sa.v.w", "sa.gru.z.wu", "sa.gru.h.wh",
                            "sa.mlp.w1", "sa.mu", "sa.log_sigma", "sa.ln_slots.gamma"}) {
    const auto r = param_grad_check(f.store, pname, build);
    INFO(pname, " rel err ", r.max_rel_err);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("non-finite intermediates abort naming the iteration") {
  SaFixture f(2, 8, 8, 8, 2);
  auto& q = f.store.get("sa.q.w")->value;
  std::fill(q.v.begin(), q.v.end(), std::numeric_limits<real>::quiet_NaN());
  const auto fm = f.enc->forward(ag::constant(random_images(1, 8, 12)));
  const auto init = f.sa->make_init(SlotAttention::draw_init_noise(2, 8, 4), 1);
  CHECK_THROWS_WITH_AS(f.sa->forward(fm, init), doctest::Contains("iteration"),
                       std::runtime_error);
}

TEST_CASE("attention_masks: normalization, argmax, spec example") {
  // 2 slots, M=4, rows (.9,.1),(.9,.1),(.1,.9),(.1,.9)
  Tensor attn({4, 2});
  attn.v = {0.9, 0.1, 0.9, 0.1, 0.1, 0.9, 0.1, 0.9};
  const MaskSet ms = attention_masks(attn, 2, 2);
  CHECK(ms.soft.at(0, 0, 0) == doctest::Approx(0.45));  // .9 / 2.0
  CHECK(ms.soft.at(1, 0, 0) == doctest::Approx(0.05));
  CHECK(ms.hard == std::vector<int>{0, 0, 1, 1});

  // N=1 -> hard mask all zeros
  Tensor one({4, 1});
  one.v = {1, 1, 1, 1};
  CHECK(attention_masks(one, 2, 2).hard == std::vector<int>{0, 0, 0, 0});

  // already column-normalized input is unchanged
  Tensor norm({2, 2});
  norm.v = {0.3, 0.8, 0.7, 0.2};
  const MaskSet ms2 = attention_masks(norm, 1, 2);
  CHECK(ms2.soft.at(0, 0, 0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(ms2.soft.at(1, 0, 0) == doctest::Approx(0.8).epsilon(1e-12));

  // zero-mass slot cannot win any argmax
  Tensor dead({2, 2});
  dead.v = {1.0, 0.0, 1.0, 0.0};
  const MaskSet ms3 = attention_masks(dead, 1, 2);
  CHECK(ms3.hard == std::vector<int>{0, 0});
  CHECK(ms3.soft.at(1, 0, 0) == 0.0);
  CHECK(ms3.soft.at(1, 0, 1) == 0.0);

  // ties break to the lowest slot index
  Tensor tie({2, 2});
  tie.v = {0.5, 0.5, 0.5, 0.5};
  CHECK(attention_masks(tie, 1, 2).hard == std::vector<int>{0, 0});
}

TEST_CASE("hard masks partition every location") {
  SaFixture f(6, 16, 16, 16, 4);
  randomize_params(f.store, 7);
  const auto fm = f.enc->forward(ag::constant(random_images(1, 16, 13)));
  const auto init = f.sa->make_init(SlotAttention::draw_init_noise(6, 16, 5), 1);
  auto [slots, attn] = f.sa->forward(fm, init);
  Tensor final_one({attn.final().dim(1), attn.final().dim(2)});
  for (int m = 0; m < final_one.dim(0); ++m)
    for (int n = 0; n < final_one.dim(1); ++n) final_one.at(m, n) = attn.final().at(0, m, n);
  const MaskSet ms = attention_masks(final_one, attn.h, attn.w);
  CHECK(static_cast<int>(ms.hard.size()) == attn.h * attn.w);
  for (int v : ms.hard) {
    CHECK(v >= 0);
    CHECK(v < 6);
  }
}
