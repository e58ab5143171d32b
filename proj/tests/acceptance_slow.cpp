// Acceptance suite, long-running criteria: the desk-scale training smoke
// test, the ablation trend, and the figure-layout reproduction on the trained
// model. Training runs land in SLOTGEN_ACCEPT_DIR (default ./acceptance_work)
// and are reused on re-invocation when their stored config and seed match, so
// the suite is resumable at run granularity.
#include "doctest.h"

#include "slotgen/harness/commands.hpp"
#include "slotgen/metrics/generation.hpp"
#include "slotgen/train/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace slotgen;
using namespace slotgen::harness;
namespace fs = std::filesystem;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string work_dir() {
  if (const char* env = std::getenv("SLOTGEN_ACCEPT_DIR")) return env;
  return "acceptance_work";
}

// The criterion-6 setup: 2000 sprite scenes, 64x64, 2-4 objects, flat
// backgrounds; 5000 steps at batch 32. Remaining knobs are the library
// defaults; every step is logged so loss windows can be averaged.
ExperimentConfig smoke_config() {
  ExperimentConfig c;
  c.dataset.count = 2000;
  c.dataset.eval_count = 200;
  c.dataset.spec.image_size = 64;
  c.dataset.spec.object_count_min = 2;
  c.dataset.spec.object_count_max = 4;
  c.dataset.spec.background_mode = scene::Background::kFlat;
  c.optimizer.total_steps = 5000;
  c.optimizer.batch_size = 32;
  c.optimizer.checkpoint_every = 1000;
  c.optimizer.log_every = 1;
  c.eval.eval_seeds = 3;
  // Desk-scale schedule: at 5000 total steps the reference 2500-step warm-up
  // would spend half the run ramping, so this experiment shortens it and
  // raises the peak rate; a finer 16x16 attention grid sharpens the masks.
  c.optimizer.lr = 1.5e-3;
  c.optimizer.warmup_steps = 500;
  c.model.encoder_patch = 4;
  return c;
}

std::string ensure_dataset(const ExperimentConfig& cfg) {
  const std::string root = work_dir() + "/ds";
  if (!fs::exists(root + "/train/manifest") || !fs::exists(root + "/eval/manifest"))
    cmd_data(cfg, root);
  return root;
}

struct RunHandle {
  std::string dir, final_ckpt, init_ckpt;
};

// Train (or reuse) one run. A stored run is reused only when its checkpoint
// carries the same config and seed; a rolling checkpoint resumes a partial run.
RunHandle ensure_run(const ExperimentConfig& cfg, const std::string& data_root,
                     const std::string& label, uint64_t seed) {
  RunHandle h;
  h.dir = work_dir() + "/run_" + label;
  h.final_ckpt = h.dir + "/checkpoint_final";
  h.init_ckpt = h.dir + "/checkpoint_init";
  if (fs::exists(h.final_ckpt)) {
    const Checkpoint ck = load_checkpoint(h.final_ckpt);
    if (ck.config == cfg && ck.train_seed == seed && ck.step == cfg.optimizer.total_steps)
      return h;
    fs::remove_all(h.dir);
  }
  std::string resume;
  if (fs::exists(h.dir + "/checkpoint_last")) {
    const Checkpoint last = load_checkpoint(h.dir + "/checkpoint_last");
    if (last.config == cfg && last.train_seed == seed) resume = h.dir + "/checkpoint_last";
  }
  std::printf("[acceptance] training %s (seed %llu)%s...\n", label.c_str(),
              static_cast<unsigned long long>(seed),
              resume.empty() ? "" : " [resuming]");
  std::fflush(stdout);
  cmd_train(cfg, data_root + "/train", h.dir, seed, resume);
  return h;
}

// Mean l_dm over the first and last 100 logged steps.
std::pair<real, real> loss_windows(const std::string& dir, int total_steps) {
  std::ifstream log(dir + "/metrics.log");
  REQUIRE(log.good());
  std::string line;
  real head = 0, tail = 0;
  int head_n = 0, tail_n = 0;
  while (std::getline(log, line)) {
    int step = -1;
    double l_dm = 0;
    if (std::sscanf(line.c_str(), "step=%d l_dm=%lf", &step, &l_dm) != 2) continue;
    if (step < 100) {
      head += l_dm;
      ++head_n;
    }
    if (step >= total_steps - 100) {
      tail += l_dm;
      ++tail_n;
    }
  }
  REQUIRE(head_n > 0);
  REQUIRE(tail_n > 0);
  return {head / head_n, tail / tail_n};
}

real eval_fg_ari(const std::string& ckpt, const std::string& data_root,
                 const std::string& out, int seeds) {
  const auto res = cmd_eval(ckpt, data_root + "/eval", out, "fg_ari", seeds, 0,
                            /*probes=*/false, /*attention=*/false);
  return res.mean.at("fg_ari");
}

struct SmokeOutcome {
  std::vector<RunHandle> runs;
  real mean_trained_ari = 0;
  real mean_untrained_ari = 0;
  real worst_loss_ratio = 0;
};

SmokeOutcome& smoke_outcome() {
  static SmokeOutcome out;
  return out;
}

}  // namespace

TEST_CASE("criterion 6: training smoke at desk scale") {
  const double t0 = now_s();
  const ExperimentConfig cfg = smoke_config();
  const std::string data = ensure_dataset(cfg);

  auto& out = smoke_outcome();
  real ari_trained = 0, ari_untrained = 0, worst_ratio = 0;
  for (const uint64_t seed : {0ull, 1ull, 2ull}) {
    const RunHandle run = ensure_run(cfg, data, "full_seed" + std::to_string(seed), seed);
    out.runs.push_back(run);
    const auto [head, tail] = loss_windows(run.dir, cfg.optimizer.total_steps);
    const real ratio = tail / head;
    worst_ratio = std::max(worst_ratio, ratio);
    CHECK(ratio <= 0.7);  // l_dm fell by at least 30%
    ari_trained += eval_fg_ari(run.final_ckpt, data, run.dir + "/eval_final", 3);
    ari_untrained += eval_fg_ari(run.init_ckpt, data, run.dir + "/eval_init", 3);
  }
  ari_trained /= 3;
  ari_untrained /= 3;
  out.mean_trained_ari = ari_trained;
  out.mean_untrained_ari = ari_untrained;
  out.worst_loss_ratio = worst_ratio;

  const real gain = ari_trained - ari_untrained;
  CHECK(gain >= 0.2);
  const double hours = (now_s() - t0) / 3600;
  CHECK(hours < 8.0);
  std::printf(
      "[criterion 6] %s fg_ari %.3f -> %.3f (gain %.3f >= 0.2), worst loss ratio %.3f <= "
      "0.7, %.2f h\n",
      gain >= 0.2 && worst_ratio <= 0.7 ? "PASS" : "FAIL", ari_untrained, ari_trained, gain,
      worst_ratio, hours);
  std::fflush(stdout);
}

TEST_CASE("criterion 7: ablation trend is non-decreasing") {
  const ExperimentConfig base = smoke_config();
  const std::string data = ensure_dataset(base);

  ExperimentConfig baseline = base;
  baseline.model.register_count = 0;
  baseline.objective.lambda_cl = 0;
  ExperimentConfig registers_only = base;
  registers_only.objective.lambda_cl = 0;

  auto mean_ari = [&](const ExperimentConfig& cfg, const std::string& label) {
    real total = 0;
    for (const uint64_t seed : {0ull, 1ull, 2ull}) {
      const RunHandle run = ensure_run(cfg, data, label + "_seed" + std::to_string(seed), seed);
      total += eval_fg_ari(run.final_ckpt, data, run.dir + "/eval_final", 3);
    }
    return total / 3;
  };

  const real ari_baseline = mean_ari(baseline, "baseline");
  const real ari_registers = mean_ari(registers_only, "registers");
  // The registers+contrastive runs are the criterion-6 runs.
  const real ari_full = mean_ari(base, "full");

  const bool ok = ari_baseline <= ari_registers && ari_registers <= ari_full;
  CHECK(ari_baseline <= ari_registers);
  CHECK(ari_registers <= ari_full);
  std::printf("[criterion 7] %s 3-seed mean fg_ari: baseline %.3f <= +registers %.3f <= "
              "+registers+contrastive %.3f\n",
              ok ? "PASS" : "FAIL", ari_baseline, ari_registers, ari_full);
  std::fflush(stdout);
}

TEST_CASE("criterion 9: figure layouts and edit locality on the trained model") {
  const ExperimentConfig cfg = smoke_config();
  const std::string data = ensure_dataset(cfg);
  const RunHandle run = ensure_run(cfg, data, "full_seed0", 0);

  Checkpoint ck = load_checkpoint(run.final_ckpt);
  model::Pipeline& pipe = *ck.pipeline;
  const int n = pipe.cfg.slots.n_slots;
  const auto manifest = scene::load_manifest(data + "/eval");
  auto scenes = scene::load_all(manifest);
  REQUIRE(scenes.size() >= 2);

  // single-slot grids in the N+1-column layout
  const std::string grid_dir = work_dir() + "/figures";
  std::vector<scene::Scene> two(scenes.begin(), scenes.begin() + 2);
  metrics::generation_eval(pipe, two, metrics::GenerationMode::kSingleSlot, 1.0, 50, 5,
                           grid_dir);
  const ImageU8 grid = read_raster(grid_dir + "/single_slot_grid.ppm");
  const bool layout_ok = grid.width == (n + 1) * (64 + 2) + 2 && grid.height == 2 * (64 + 2) + 2;
  CHECK(layout_ok);

  // drop edit with an empty index list reproduces the reconstruction
  GenerateOptions noop;
  noop.mode = "edit";
  noop.steps = 50;
  cmd_generate(run.final_ckpt, data + "/eval", grid_dir + "/noop", noop, 11);
  const bool noop_ok = file_checksum(grid_dir + "/noop/reconstruction.ppm") ==
                       file_checksum(grid_dir + "/noop/edited.ppm");
  CHECK(noop_ok);

  // swap edit changes the scene only inside the swapped slot's mask region
  const int swap_slot = 2;
  const uint64_t slot_seed = mix_seed(17, 1);
  const Tensor slots_a = metrics::scene_slots(pipe, scenes[0], slot_seed);
  const Tensor slots_b = metrics::scene_slots(pipe, scenes[1], slot_seed);
  const auto part_a = metrics::predict_partition(pipe, scenes[0], slot_seed);
  const auto part_b = metrics::predict_partition(pipe, scenes[1], slot_seed);

  Tensor edited = slots_a;
  for (int j = 0; j < pipe.cfg.slots.slot_dim; ++j)
    edited.at(swap_slot, j) = slots_b.at(swap_slot, j);
  const Tensor recon = train::signal_to_image_hw3(
      metrics::sample_from_slots(pipe, slots_a, 1.0, 50, 23));
  const Tensor swapped = train::signal_to_image_hw3(
      metrics::sample_from_slots(pipe, edited, 1.0, 50, 23));
  write_raster(to_u8(recon), grid_dir + "/swap_recon.ppm");
  write_raster(to_u8(swapped), grid_dir + "/swap_edited.ppm");

  // The swapped slot's region: its mask in either scene, dilated by one
  // feature cell to absorb the coarse attention grid.
  const int s = scenes[0].height();
  const int cell = s / pipe.encoder->grid();
  std::vector<uint8_t> masked(static_cast<size_t>(s) * s, 0);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      if (part_a.labels[static_cast<size_t>(y) * s + x] == swap_slot + 1 ||
          part_b.labels[static_cast<size_t>(y) * s + x] == swap_slot + 1)
        for (int dy = -cell; dy <= cell; ++dy)
          for (int dx = -cell; dx <= cell; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < s && xx >= 0 && xx < s)
              masked[static_cast<size_t>(yy) * s + xx] = 1;
          }
  real mse = 0;
  int64_t count = 0;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      if (masked[static_cast<size_t>(y) * s + x]) continue;
      for (int c = 0; c < 3; ++c) {
        const real d = recon.at(y, x, c) - swapped.at(y, x, c);
        mse += d * d;
        ++count;
      }
    }
  REQUIRE(count > 0);
  mse /= static_cast<real>(count);
  const bool swap_ok = mse <= 0.02;
  CHECK(swap_ok);
  std::printf("[criterion 9] %s single-slot grid %dx%d (N+1 columns), no-op edit identical: "
              "%s, off-mask swap MSE %.5f <= 0.02\n",
              layout_ok && noop_ok && swap_ok ? "PASS" : "FAIL", grid.width, grid.height,
              noop_ok ? "yes" : "no", mse);
  std::fflush(stdout);
}
