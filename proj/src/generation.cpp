#include "slotgen/metrics/generation.hpp"

#include "slotgen/core/errors.hpp"
#include "slotgen/core/plot.hpp"
#include "slotgen/train/trainer.hpp"

#include <cmath>
#include <filesystem>

namespace slotgen::metrics {

Tensor compositional_mix(const Tensor& slots_bnd, uint64_t seed) {
  if (slots_bnd.ndim() != 3 || slots_bnd.dim(0) < 2)
    throw ValidationError("compositional_mix needs a [B>=2, N, D] batch");
  const int b = slots_bnd.dim(0), n = slots_bnd.dim(1), d = slots_bnd.dim(2);
  Rng rng = derive_rng(seed, 0xC03715);
  Tensor out(slots_bnd.shape);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < n; ++j) {
      const int src = rng.uniform_int(b);
      for (int k = 0; k < d; ++k) out.at(i, j, k) = slots_bnd.at(src, j, k);
    }
  return out;
}

Tensor scene_slots(model::Pipeline& pipe, const scene::Scene& sc, uint64_t seed) {
  Tensor batch({1, 3, sc.height(), sc.width()});
  batch.v = train::image_to_signal(to_u8(sc.image)).v;
  const auto feats = pipe.encoder->forward(ag::constant(batch));
  const Tensor noise = model::SlotAttention::draw_init_noise(
      pipe.cfg.slots.n_slots, pipe.cfg.slots.slot_dim, seed);
  auto [slots, attn] = pipe.sa->forward(feats, pipe.sa->make_init(noise, 1));
  Tensor out({pipe.cfg.slots.n_slots, pipe.cfg.slots.slot_dim});
  out.v.assign(slots.slots->value.v.begin(), slots.slots->value.v.end());
  return out;
}

Tensor sample_from_slots(model::Pipeline& pipe, const Tensor& slots_nd, real cfg_w,
                         int steps, uint64_t seed) {
  const int n = slots_nd.dim(0);
  const int s = pipe.cfg.denoiser.image_size;
  auto cond_from = [&](const Tensor& rows) {
    Tensor batched({1, rows.dim(0), rows.dim(1)});
    batched.v = rows.v;
    return model::concat_conditioning(ag::constant(batched), *pipe.registers);
  };
  const ag::Var cond = cond_from(slots_nd);
  const ag::Var null_cond =
      model::concat_conditioning(pipe.denoiser->null_semantic_tokens(1, n), *pipe.registers);

  diffusion::SamplerConfig sc;
  sc.steps = steps;
  sc.cfg_w = cfg_w;
  sc.schedule = pipe.cfg.schedule;
  auto eps_cond = [&](const Tensor& x, real gamma) {
    Tensor g({1});
    g.v = {gamma};
    return pipe.denoiser->forward(x, g, cond)->value;
  };
  auto eps_uncond = [&](const Tensor& x, real gamma) {
    Tensor g({1});
    g.v = {gamma};
    return pipe.denoiser->forward(x, g, null_cond)->value;
  };
  const Tensor out = diffusion::sample(eps_cond, eps_uncond, {1, 3, s, s}, sc, seed);
  Tensor chw({3, s, s});
  chw.v = out.v;
  return chw;
}

real feature_distance(model::Pipeline& pipe, const std::vector<Tensor>& set_a_hw3,
                      const std::vector<Tensor>& set_b_hw3) {
  const int d = pipe.cfg.encoder.d_input;
  auto pooled_stats = [&](const std::vector<Tensor>& set) {
    std::vector<real> mean(static_cast<size_t>(d), 0), var(static_cast<size_t>(d), 0);
    std::vector<std::vector<real>> pooled;
    for (const auto& img : set) {
      Tensor batch({1, 3, img.dim(0), img.dim(1)});
      batch.v = train::image_to_signal(to_u8(img)).v;
      const auto fm = pipe.encoder->forward(ag::constant(batch));
      const int m = fm.features->value.dim(1);
      std::vector<real> p(static_cast<size_t>(d), 0);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) p[static_cast<size_t>(j)] += fm.features->value.at(0, i, j);
      for (auto& x : p) x /= m;
      pooled.push_back(std::move(p));
    }
    for (const auto& p : pooled)
      for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += p[static_cast<size_t>(j)];
    for (auto& x : mean) x /= static_cast<real>(pooled.size());
    for (const auto& p : pooled)
      for (int j = 0; j < d; ++j) {
        const real dv = p[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)];
        var[static_cast<size_t>(j)] += dv * dv;
      }
    for (auto& x : var) x /= std::max<size_t>(1, pooled.size() - 1);
    return std::pair(mean, var);
  };
  const auto [ma, va] = pooled_stats(set_a_hw3);
  const auto [mb, vb] = pooled_stats(set_b_hw3);
  real dist = 0;
  for (int j = 0; j < d; ++j) {
    const real dm = ma[static_cast<size_t>(j)] - mb[static_cast<size_t>(j)];
    dist += dm * dm + va[static_cast<size_t>(j)] + vb[static_cast<size_t>(j)] -
            2 * std::sqrt(std::max(real(0), va[static_cast<size_t>(j)] * vb[static_cast<size_t>(j)]));
  }
  return dist;
}

GenerationReport generation_eval(model::Pipeline& pipe,
                                 const std::vector<scene::Scene>& scenes,
                                 GenerationMode mode, real cfg_w, int steps,
                                 uint64_t seed, const std::string& out_dir) {
  if (scenes.empty()) throw ValidationError("generation_eval needs at least one scene");
  std::filesystem::create_directories(out_dir);
  GenerationReport rep;
  const int n = pipe.cfg.slots.n_slots;

  std::vector<Tensor> real_images, generated;
  std::vector<ImageU8> tiles;

  if (mode == GenerationMode::kReconstruction) {
    rep.mode = "reconstruction";
    real total_mse = 0;
    for (size_t i = 0; i < scenes.size(); ++i) {
      const Tensor slots = scene_slots(pipe, scenes[i], mix_seed(seed, i));
      const Tensor img = train::signal_to_image_hw3(
          sample_from_slots(pipe, slots, cfg_w, steps, mix_seed(seed, 1000 + i)));
      real se = 0;
      for (int64_t j = 0; j < img.numel(); ++j) {
        const real d = img[j] - scenes[i].image[j];
        se += d * d;
      }
      total_mse += se / img.numel();
      real_images.push_back(scenes[i].image);
      generated.push_back(img);
      tiles.push_back(to_u8(scenes[i].image));
      tiles.push_back(to_u8(img));
    }
    rep.pixel_mse = total_mse / static_cast<real>(scenes.size());
    write_raster(montage(tiles, 2), out_dir + "/reconstruction_grid.ppm");
  } else if (mode == GenerationMode::kCompositional) {
    rep.mode = "compositional";
    const int b = static_cast<int>(scenes.size());
    Tensor batch_slots({b, n, pipe.cfg.slots.slot_dim});
    for (int i = 0; i < b; ++i) {
      const Tensor s = scene_slots(pipe, scenes[static_cast<size_t>(i)], mix_seed(seed, static_cast<uint64_t>(i)));
      std::copy(s.v.begin(), s.v.end(), batch_slots.v.begin() + static_cast<int64_t>(i) * s.numel());
    }
    const Tensor mixed = compositional_mix(batch_slots, seed);
    for (int i = 0; i < b; ++i) {
      Tensor rows({n, pipe.cfg.slots.slot_dim});
      std::copy(mixed.v.begin() + static_cast<int64_t>(i) * rows.numel(),
                mixed.v.begin() + static_cast<int64_t>(i + 1) * rows.numel(), rows.v.begin());
      const Tensor img = train::signal_to_image_hw3(
          sample_from_slots(pipe, rows, cfg_w, steps, mix_seed(seed, 2000 + static_cast<uint64_t>(i))));
      real_images.push_back(scenes[static_cast<size_t>(i)].image);
      generated.push_back(img);
      tiles.push_back(to_u8(img));
    }
    write_raster(montage(tiles, std::min(b, 8)), out_dir + "/compositional_grid.ppm");
  } else {
    rep.mode = "single_slot";
    // N single-slot decodes plus the all-slots reconstruction: N+1 columns.
    for (size_t i = 0; i < scenes.size(); ++i) {
      const Tensor slots = scene_slots(pipe, scenes[i], mix_seed(seed, i));
      const Tensor null_rows = pipe.denoiser->null_semantic_tokens(1, n)->value.reshaped(
          {n, pipe.cfg.slots.slot_dim});
      for (int keep = 0; keep < n; ++keep) {
        Tensor rows = null_rows;
        for (int j = 0; j < pipe.cfg.slots.slot_dim; ++j) rows.at(keep, j) = slots.at(keep, j);
        const Tensor img = train::signal_to_image_hw3(sample_from_slots(
            pipe, rows, cfg_w, steps, mix_seed(seed, 3000 + i)));
        tiles.push_back(to_u8(img));
        generated.push_back(img);
      }
      const Tensor full = train::signal_to_image_hw3(
          sample_from_slots(pipe, slots, cfg_w, steps, mix_seed(seed, 3000 + i)));
      tiles.push_back(to_u8(full));
      real_images.push_back(scenes[i].image);
    }
    write_raster(montage(tiles, n + 1), out_dir + "/single_slot_grid.ppm");
  }
  rep.images = static_cast<int>(generated.size());
  if (!generated.empty() && !real_images.empty())
    rep.feature_distance = feature_distance(pipe, generated, real_images);
  return rep;
}

std::vector<real> register_fraction_from_record(const model::AttentionRecord& record,
                                                int n_semantic) {
  std::vector<real> fractions;
  for (const auto& layer : record.layers) {
    real total = 0;
    int64_t count = 0;
    for (const auto& probs : layer.head_probs) {
      const int b = probs.dim(0), q = probs.dim(1), t = probs.dim(2);
      for (int bi = 0; bi < b; ++bi)
        for (int qi = 0; qi < q; ++qi) {
          real reg = 0;
          for (int ti = n_semantic; ti < t; ++ti) reg += probs.at(bi, qi, ti);
          total += reg;
          ++count;
        }
    }
    fractions.push_back(count ? total / static_cast<real>(count) : 0);
  }
  return fractions;
}

AttentionMassReport attention_mass_report(model::Pipeline& pipe,
                                          const std::vector<scene::Scene>& scenes,
                                          const std::vector<real>& noise_times,
                                          uint64_t seed) {
  if (scenes.empty()) throw ValidationError("attention_mass_report needs scenes");
  const int n = pipe.cfg.slots.n_slots;
  AttentionMassReport rep;
  std::vector<std::vector<real>> sums;       // [layer][token group]
  std::vector<real> frac_sums;
  int samples = 0;

  for (size_t si = 0; si < scenes.size(); ++si) {
    const auto& sc = scenes[si];
    const Tensor slots = scene_slots(pipe, sc, mix_seed(seed, si));
    Tensor batched({1, n, pipe.cfg.slots.slot_dim});
    batched.v = slots.v;
    const ag::Var cond = model::concat_conditioning(ag::constant(batched), *pipe.registers);
    Tensor signal({1, 3, sc.height(), sc.width()});
    signal.v = train::image_to_signal(to_u8(sc.image)).v;
    for (size_t ti = 0; ti < noise_times.size(); ++ti) {
      Rng rng = derive_rng(seed, 0xA77 + si, ti);
      Tensor eps(signal.shape);
      rng.fill_normal(eps);
      const real gamma = pipe.cfg.schedule.gamma(noise_times[ti]);
      const Tensor z_gamma = diffusion::noising(signal, gamma, eps);
      Tensor g({1});
      g.v = {gamma};
      model::AttentionRecord record;
      pipe.denoiser->forward(z_gamma, g, cond, false, &record);
      const auto fractions = register_fraction_from_record(record, n);
      if (rep.layer_names.empty()) {
        for (const auto& layer : record.layers) rep.layer_names.push_back(layer.name);
        sums.assign(record.layers.size(), std::vector<real>(static_cast<size_t>(n) + 1, 0));
        frac_sums.assign(record.layers.size(), 0);
      }
      for (size_t li = 0; li < record.layers.size(); ++li) {
        frac_sums[li] += fractions[li];
        // per-token mean mass, register tokens folded into the last column
        const auto& layer = record.layers[li];
        for (const auto& probs : layer.head_probs) {
          const int b = probs.dim(0), q = probs.dim(1), t = probs.dim(2);
          for (int bi = 0; bi < b; ++bi)
            for (int qi = 0; qi < q; ++qi) {
              for (int tok = 0; tok < n; ++tok)
                sums[li][static_cast<size_t>(tok)] += probs.at(bi, qi, tok);
              real reg = 0;
              for (int tok = n; tok < t; ++tok) reg += probs.at(bi, qi, tok);
              sums[li][static_cast<size_t>(n)] += reg;
            }
        }
      }
      ++samples;
    }
  }
  rep.per_token_mass = Tensor({static_cast<int>(sums.size()), n + 1});
  for (size_t li = 0; li < sums.size(); ++li) {
    rep.register_fraction.push_back(frac_sums[li] / samples);
    // normalize token masses into a mean over samples*heads*queries
    real row_total = 0;
    for (real v : sums[li]) row_total += v;
    for (int tok = 0; tok <= n; ++tok)
      rep.per_token_mass.at(static_cast<int>(li), tok) =
          row_total > 0 ? sums[li][static_cast<size_t>(tok)] / row_total : 0;
  }
  return rep;
}

}  // namespace slotgen::metrics
