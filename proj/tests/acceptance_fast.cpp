// Acceptance suite, fast criteria: the MI identity, metric oracles, gradient
// correctness, the stop-gradient contract, structural invariants, and
// determinism/persistence. Each criterion prints one pass/fail line.
#include "doctest.h"

#include "oracles.hpp"
#include "slotgen/core/kernels.hpp"
#include "slotgen/diffusion/diffusion.hpp"
#include "slotgen/harness/commands.hpp"
#include "slotgen/metrics/generation.hpp"
#include "slotgen/mi/mi_oracle.hpp"
#include "testutil.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>

using namespace slotgen;
namespace fs = std::filesystem;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct CriterionLine {
  const char* name;
  bool ok = true;
  std::string detail;
  void report() const {
    std::printf("[%s] %s%s%s\n", name, ok ? "PASS" : "FAIL", detail.empty() ? "" : " ",
                detail.c_str());
    std::fflush(stdout);
  }
};

std::string temp_dir(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("slotgen_accept_" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

// The tiny configuration named by the gradient-correctness criterion:
// D_slot = 8, M = 16 feature locations, 1-level denoiser on 8x8 inputs.
model::ModelConfig tiny_model() {
  model::ModelConfig mc;
  mc.encoder = {8, 2, 8, 8};
  mc.slots = {3, 8, 8, 2, 16};
  mc.registers = {2, 8, model::RegisterMode::kFixed, 0};
  mc.denoiser = {8, 3, 2, 8, 1, 2, 8, 16, 3};
  return mc;
}

train::TrainStepConfig tiny_train_config(real lambda) {
  train::TrainStepConfig tc;
  tc.objective.lambda_cl = lambda;
  tc.objective.negative_ratio = 0.5;
  tc.objective.cond_dropout = 0;
  tc.batch_size = 2;
  return tc;
}

std::vector<ImageU8> tiny_images(int count) {
  std::vector<ImageU8> out;
  Rng rng(99);
  for (int i = 0; i < count; ++i) {
    ImageU8 img(8, 8, 3);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
    out.push_back(img);
  }
  return out;
}

harness::ExperimentConfig micro_config() {
  harness::ExperimentConfig c;
  c.dataset.spec.image_size = 32;
  c.dataset.spec.size_min = 0.25;
  c.dataset.spec.size_max = 0.4;
  c.dataset.spec.object_count_min = 1;
  c.dataset.spec.object_count_max = 2;
  c.dataset.count = 12;
  c.dataset.eval_count = 4;
  c.model.n_slots = 3;
  c.model.slot_dim = 16;
  c.model.d_input = 16;
  c.model.encoder_channels = 8;
  c.model.register_count = 2;
  c.model.denoiser_channels = 16;
  c.optimizer.total_steps = 10;
  c.optimizer.batch_size = 4;
  c.optimizer.checkpoint_every = 5;
  c.optimizer.log_every = 1;
  c.optimizer.warmup_steps = 4;
  c.eval.eval_seeds = 2;
  c.eval.sample_steps = 3;
  return c;
}

}  // namespace

TEST_CASE("criterion 1: MI surrogate identity on analytic Gaussians") {
  const double t0 = now_s();
  CriterionLine line{"criterion 1"};
  real worst = 0, worst_mc = 0;
  for (const real rho : {0.0, 0.3, 0.5, 0.8}) {
    for (const int dim : {1, 4}) {
      const auto rep = mi::verify_corollary({dim, rho}, 1e-2, {}, 100000, 12345);
      const real target = -dim * rho * rho / (1 - rho * rho);
      const real err = std::abs(rep.delta_numeric - target);
      worst = std::max(worst, err);
      worst_mc = std::max(worst_mc, rep.max_mc_deviation_se);
      CHECK(err < 1e-2);
      CHECK(rep.passed);
      CHECK(rep.max_mc_deviation_se <= 3.0);
      line.ok = line.ok && err < 1e-2 && rep.passed && rep.max_mc_deviation_se <= 3.0;
    }
  }
  const double dt = now_s() - t0;
  CHECK(dt < 60.0);
  line.ok = line.ok && dt < 60.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "max |delta - closed| = %.2e (tol 1e-2), max MC dev = %.2f SE, %.1fs", worst,
                worst_mc, dt);
  line.detail = buf;
  line.report();
}

TEST_CASE("criterion 2: metric implementations match brute-force oracles exactly") {
  const double t0 = now_s();
  CriterionLine line{"criterion 2"};
  Rng rng(777);
  real max_miou = 0, max_mbo = 0;
  bool ari_exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 2 + rng.uniform_int(7), w = 2 + rng.uniform_int(7);
    const auto gt = oracle::random_partition(rng, h, w, 4, true);
    const auto pred = oracle::random_partition(rng, h, w, 4, false);

    const auto r = metrics::fg_ari(pred, gt);
    const auto s = oracle::ari_pair_scan(pred, gt);
    const bool stats_equal = r.stats.pairs_both == s.pairs_both &&
                             r.stats.pairs_pred == s.pairs_pred &&
                             r.stats.pairs_gt == s.pairs_gt &&
                             r.stats.pairs_total == s.pairs_total;
    ari_exact = ari_exact && stats_equal &&
                (r.degenerate || r.value == metrics::ari_from_stats(s));
    CHECK(stats_equal);

    max_miou = std::max(max_miou, std::abs(metrics::miou(pred, gt, metrics::Level::kInstance) -
                                           oracle::miou_exhaustive(pred, gt)));
    max_mbo = std::max(max_mbo, std::abs(metrics::mbo(pred, gt, metrics::Level::kInstance) -
                                         oracle::mbo_direct(pred, gt)));
  }
  CHECK(ari_exact);
  CHECK(max_miou <= 1e-12);
  CHECK(max_mbo <= 1e-12);

  bool hungarian_exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int p = 1 + rng.uniform_int(6), g = 1 + rng.uniform_int(6);
    Tensor cost({p, g});
    for (auto& v : cost.v) v = rng.uniform_int(128) / real(64) - 1;
    hungarian_exact = hungarian_exact &&
                      metrics::hungarian_match(cost).total_cost == oracle::assignment_min_cost(cost);
  }
  CHECK(hungarian_exact);

  const double dt = now_s() - t0;
  CHECK(dt < 30.0);
  line.ok = ari_exact && hungarian_exact && max_miou <= 1e-12 && max_mbo <= 1e-12 && dt < 30;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "ARI stats exact, assignment exact, |miou-oracle| <= %.1e, |mbo-oracle| <= %.1e, %.1fs",
                max_miou, max_mbo, dt);
  line.detail = buf;
  line.report();
}

TEST_CASE("criterion 3: analytic gradients match finite differences (tiny config)") {
  const double t0 = now_s();
  CriterionLine line{"criterion 3"};
  model::Pipeline pipe(tiny_model());
  testutil::randomize_params(pipe.store, 2024);
  train::Trainer trainer(pipe, tiny_train_config(0.05), 55);
  const auto data = tiny_images(4);
  const Tensor images = train::batch_to_signal(data, {0, 1});

  // Analytic gradients of both losses.
  pipe.store.zero_grads();
  auto graphs = trainer.build_losses(images, 0);
  ag::backward(graphs.l_dm);
  std::map<std::string, Tensor> grad_dm;
  for (const auto& name : pipe.store.names()) {
    const auto v = pipe.store.get(name);
    grad_dm[name] = v->has_grad() ? v->grad : Tensor::zeros(v->value.shape);
  }
  pipe.store.zero_grads();
  ag::backward(graphs.l_cl);
  std::map<std::string, Tensor> grad_cl;
  for (const auto& name : pipe.store.names()) {
    const auto v = pipe.store.get(name);
    grad_cl[name] = v->has_grad() ? v->grad : Tensor::zeros(v->value.shape);
  }

  const real h = 1e-5;
  real worst = 0;
  std::string worst_at;
  int coords = 0;
  for (const auto& name : pipe.store.names()) {
    const auto& info = pipe.store.info(name);
    const auto var = pipe.store.get(name);
    const bool is_phi = info.group == model::Group::kPhi;
    for (int64_t i = 0; i < var->value.numel(); ++i) {
      const real orig = var->value[i];
      var->value[i] = orig + h;
      const auto gp = trainer.build_losses(images, 0);
      const real dm_p = gp.l_dm->value.v[0], cl_p = gp.l_cl->value.v[0];
      var->value[i] = orig - h;
      const auto gm = trainer.build_losses(images, 0);
      const real dm_m = gm.l_dm->value.v[0], cl_m = gm.l_cl->value.v[0];
      var->value[i] = orig;
      ++coords;

      auto rel = [&](real num, real ana) {
        const real diff = std::abs(num - ana);
        if (diff <= 1e-10) return real(0);
        return diff / std::max({std::abs(num), std::abs(ana), real(1e-4)});
      };
      // L_dm w.r.t. every parameter (phi and theta)
      const real r1 = rel((dm_p - dm_m) / (2 * h), grad_dm[name][i]);
      // L_cl w.r.t. phi only: the stop-gradient makes the analytic theta
      // gradient intentionally zero, not equal to the finite difference.
      const real r2 = is_phi ? rel((cl_p - cl_m) / (2 * h), grad_cl[name][i]) : 0;
      const real r = std::max(r1, r2);
      if (r > worst) {
        worst = r;
        worst_at = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  CHECK(worst < 1e-4);
  const double dt = now_s() - t0;
  CHECK(dt < 120.0);
  line.ok = worst < 1e-4 && dt < 120;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%d coordinates, max rel err %.2e at %s, %.1fs", coords,
                worst, worst_at.c_str(), dt);
  line.detail = buf;
  line.report();
}

TEST_CASE("criterion 4: contrastive gradients vanish on the decoder for 10 random batches") {
  CriterionLine line{"criterion 4"};
  model::Pipeline pipe(tiny_model());
  testutil::randomize_params(pipe.store, 31337);
  train::Trainer trainer(pipe, tiny_train_config(0.05), 77);
  const auto data = tiny_images(16);
  Rng rng(5);
  bool all_zero = true;
  for (int batch = 0; batch < 10; ++batch) {
    std::vector<int> ix = {rng.uniform_int(16), rng.uniform_int(16)};
    const Tensor images = train::batch_to_signal(data, ix);
    pipe.store.zero_grads();
    const auto g = trainer.build_losses(images, batch);
    ag::backward(g.l_cl);
    for (const auto& name : pipe.store.names()) {
      if (pipe.store.info(name).group != model::Group::kTheta) continue;
      const auto v = pipe.store.get(name);
      if (!v->has_grad()) continue;
      for (real x : v->grad.v) all_zero = all_zero && x == 0.0;
    }
  }
  CHECK(all_zero);
  line.ok = all_zero;
  line.detail = "d(L_cl)/d(theta) identically zero across 10 batches";
  line.report();
}

TEST_CASE("criterion 5: structural invariants") {
  CriterionLine line{"criterion 5"};
  bool ok = true;

  // slot-axis softmax rows sum to 1 within 1e-6
  {
    model::Pipeline pipe(tiny_model());
    testutil::randomize_params(pipe.store, 11);
    Rng rng(1);
    Tensor img({2, 3, 8, 8});
    rng.fill_uniform(img, 0, 1);
    const auto fm = pipe.encoder->forward(ag::constant(img));
    const auto init = pipe.sa->make_init(model::SlotAttention::draw_init_noise(3, 8, 4), 2);
    auto [slots, attn] = pipe.sa->forward(fm, init);
    for (const auto& a : attn.per_iteration)
      for (int b = 0; b < a.dim(0); ++b)
        for (int m = 0; m < a.dim(1); ++m) {
          real s = 0;
          for (int n = 0; n < a.dim(2); ++n) s += a.at(b, m, n);
          ok = ok && std::abs(s - 1) <= 1e-6;
        }
  }

  // sigma(g) + sigma(-g) == 1 at machine precision
  {
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) {
      const real g = rng.uniform(-30, 30);
      ok = ok && std::abs(diffusion::logistic_sigmoid(g) + diffusion::logistic_sigmoid(-g) - 1) <
                     4e-16;
    }
  }

  // L_dm >= 0 and L_cl <= 0 on every batch
  {
    model::Pipeline pipe(tiny_model());
    testutil::randomize_params(pipe.store, 12);
    train::Trainer trainer(pipe, tiny_train_config(0.05), 3);
    const auto data = tiny_images(8);
    for (int b = 0; b < 5; ++b) {
      const Tensor images = train::batch_to_signal(data, {b, b + 1});
      const auto g = trainer.build_losses(images, b);
      ok = ok && g.l_dm->value.v[0] >= 0 && g.l_cl->value.v[0] <= 0;
    }
  }

  // compose_negatives replaces exactly round_half_up(r*N) indices
  {
    Rng rng(3);
    for (const real ratio : {0.25, 0.5, 0.75, 1.0}) {
      for (const int n : {3, 4, 6, 7}) {
        const Tensor mask = train::negative_masks(16, n, ratio, rng);
        const int expect = train::replaced_count(ratio, n);
        for (int b = 0; b < 16; ++b) {
          int c = 0;
          for (int j = 0; j < n; ++j) c += mask.at(b, j) != 0;
          ok = ok && c == expect;
        }
      }
    }
    ok = ok && train::replaced_count(0.5, 6) == 3 && train::replaced_count(0.25, 6) == 2;
  }

  // CFG w = 1 reproduces the conditional path bit-for-bit
  {
    Rng rng(4);
    Tensor a({64}), b({64});
    rng.fill_normal(a);
    rng.fill_normal(b);
    ok = ok && diffusion::cfg_combine(a, b, 1).v == a.v;
    auto zero_eps = [](const Tensor& x, real) { return Tensor::zeros(x.shape); };
    auto loud_eps = [](const Tensor& x, real) { return Tensor::full(x.shape, 9.0); };
    diffusion::SamplerConfig sc;
    sc.steps = 4;
    sc.cfg_w = 1;
    const Tensor s1 = diffusion::sample(zero_eps, nullptr, {1, 1, 2, 2}, sc, 3);
    const Tensor s2 = diffusion::sample(zero_eps, loud_eps, {1, 1, 2, 2}, sc, 3);
    ok = ok && s1.v == s2.v;
  }

  // uniform-attention stub: register fraction equals R/(N+R)
  {
    const int n = 6, r = 8;
    model::AttentionRecord record;
    model::AttentionRecord::Layer layer;
    Tensor logits({8, n + r});
    Tensor sm(logits.shape);
    kernels::softmax_rows(logits.data(), sm.data(), 8, n + r);
    Tensor probs({1, 8, n + r});
    probs.v = sm.v;
    layer.head_probs.push_back(probs);
    record.layers.push_back(layer);
    const auto frac = metrics::register_fraction_from_record(record, n);
    ok = ok && std::abs(frac[0] - static_cast<real>(r) / (n + r)) < 1e-12;
  }

  CHECK(ok);
  line.ok = ok;
  line.detail =
      "softmax rows, sigmoid complement, loss signs, negative counts, CFG identity, register fraction";
  line.report();
}

TEST_CASE("criterion 8: determinism and persistence") {
  CriterionLine line{"criterion 8"};
  const auto cfg = micro_config();
  bool ok = true;

  // data: bit-identical artifacts
  const std::string d1 = temp_dir("c8_data1"), d2 = temp_dir("c8_data2");
  harness::cmd_data(cfg, d1);
  harness::cmd_data(cfg, d2);
  auto m1 = scene::load_manifest(d1 + "/train");
  auto m2 = scene::load_manifest(d2 + "/train");
  ok = ok && scene::manifest_checksum(m1) == scene::manifest_checksum(m2);

  // train 10 steps twice: identical checkpoints and logs
  const std::string r1 = temp_dir("c8_run1"), r2 = temp_dir("c8_run2");
  const auto t1 = harness::cmd_train(cfg, d1 + "/train", r1, 42);
  const auto t2 = harness::cmd_train(cfg, d1 + "/train", r2, 42);
  ok = ok && file_checksum(t1.final_checkpoint) == file_checksum(t2.final_checkpoint);
  ok = ok && file_checksum(r1 + "/metrics.log") == file_checksum(r2 + "/metrics.log");

  // eval twice: identical reports
  const auto e1 =
      harness::cmd_eval(t1.final_checkpoint, d1 + "/eval", r1 + "/eval", "fg_ari,miou_i", 2, 9);
  const auto e2 =
      harness::cmd_eval(t1.final_checkpoint, d1 + "/eval", r2 + "/eval", "fg_ari,miou_i", 2, 9);
  ok = ok && file_checksum(r1 + "/eval/segmentation.txt") ==
                 file_checksum(r2 + "/eval/segmentation.txt");
  ok = ok && file_checksum(r1 + "/eval/probes.txt") == file_checksum(r2 + "/eval/probes.txt");

  // checkpoint resume: 5 + 5 steps equals uninterrupted 10
  harness::ExperimentConfig half = cfg;
  half.optimizer.total_steps = 5;
  const std::string rp = temp_dir("c8_part");
  harness::cmd_train(half, d1 + "/train", rp, 42);
  {
    harness::Checkpoint mid = harness::load_checkpoint(rp + "/checkpoint_final");
    harness::save_checkpoint(rp + "/checkpoint_mid", cfg, mid.step, mid.train_seed,
                             *mid.pipeline, mid.adam, mid.adam_steps);
  }
  const std::string rr = temp_dir("c8_resumed");
  const auto t3 = harness::cmd_train(cfg, d1 + "/train", rr, 42, rp + "/checkpoint_mid");
  ok = ok && file_checksum(t3.final_checkpoint) == file_checksum(t1.final_checkpoint);

  CHECK(ok);
  line.ok = ok;
  line.detail = "data/train/eval reruns bit-identical; resume matches uninterrupted training";
  line.report();
}
