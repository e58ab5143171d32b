#include "slotgen/metrics/probes.hpp"

#include "slotgen/core/errors.hpp"
#include "slotgen/metrics/segmentation.hpp"
#include "slotgen/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace slotgen::metrics {

Partition gt_partition(const scene::Scene& sc) {
  return Partition{sc.height(), sc.width(), sc.masks, {}};
}

std::vector<int> gt_class_of(const scene::Scene& sc) {
  int max_id = 0;
  for (const auto& o : sc.properties) max_id = std::max(max_id, o.id);
  std::vector<int> class_of(static_cast<size_t>(max_id) + 1, 0);
  for (const auto& o : sc.properties)
    class_of[static_cast<size_t>(o.id)] = static_cast<int>(o.shape) + 1;
  return class_of;
}

Partition predict_partition(model::Pipeline& pipe, const scene::Scene& sc, uint64_t seed) {
  const int hpx = sc.height(), wpx = sc.width();
  const Tensor signal = train::image_to_signal(to_u8(sc.image));
  Tensor batch({1, 3, hpx, wpx});
  batch.v = signal.v;
  const auto feats = pipe.encoder->forward(ag::constant(batch));
  const Tensor noise = model::SlotAttention::draw_init_noise(
      pipe.cfg.slots.n_slots, pipe.cfg.slots.slot_dim, seed);
  auto [slots, attn] = pipe.sa->forward(feats, pipe.sa->make_init(noise, 1));

  const Tensor& last = attn.final();
  Tensor one({last.dim(1), last.dim(2)});
  for (int m = 0; m < one.dim(0); ++m)
    for (int n = 0; n < one.dim(1); ++n) one.at(m, n) = last.at(0, m, n);
  const model::MaskSet masks = model::attention_masks(one, attn.h, attn.w);

  Partition part{hpx, wpx, std::vector<int>(static_cast<size_t>(hpx) * wpx, 0), {}};
  const int fy = hpx / attn.h, fx = wpx / attn.w;
  for (int y = 0; y < hpx; ++y)
    for (int x = 0; x < wpx; ++x)
      part.labels[static_cast<size_t>(y) * wpx + x] =
          masks.hard[static_cast<size_t>(y / fy) * attn.w + (x / fx)] + 1;
  return part;
}

ProbeDataset collect_probe_dataset(model::Pipeline& pipe,
                                   const std::vector<scene::Scene>& scenes,
                                   uint64_t seed, real test_fraction) {
  ProbeDataset out;
  out.n_shapes = 3;
  std::vector<std::vector<real>> rows;
  const int d = pipe.cfg.slots.slot_dim;
  const int n = pipe.cfg.slots.n_slots;
  const int train_cut = static_cast<int>(std::lround(scenes.size() * (1 - test_fraction)));

  for (size_t si = 0; si < scenes.size(); ++si) {
    const auto& sc = scenes[si];
    const uint64_t scene_seed = mix_seed(seed, si);
    // slots for features
    const Tensor signal = train::image_to_signal(to_u8(sc.image));
    Tensor batch({1, 3, sc.height(), sc.width()});
    batch.v = signal.v;
    const auto feats = pipe.encoder->forward(ag::constant(batch));
    const Tensor noise = model::SlotAttention::draw_init_noise(n, d, scene_seed);
    auto [slots, attn] = pipe.sa->forward(feats, pipe.sa->make_init(noise, 1));

    // Hungarian assignment of slots to instances by mask overlap
    const Partition pred = predict_partition(pipe, sc, scene_seed);
    const Partition gt = gt_partition(sc);
    std::vector<int> row_labels;
    const Tensor iou = iou_matrix(pred, gt, &row_labels);
    if (iou.ndim() != 2 || iou.dim(1) == 0) continue;
    Tensor cost({iou.dim(0), iou.dim(1)});
    for (int64_t i = 0; i < cost.numel(); ++i) cost[i] = -iou[i];
    const Assignment asg = hungarian_match(cost);

    for (const auto& [r, g] : asg.pairs) {
      const int slot_id = row_labels[static_cast<size_t>(r)] - 1;  // labels are slot+1
      const auto& obj = sc.properties[static_cast<size_t>(g)];
      std::vector<real> feat(static_cast<size_t>(d));
      for (int j = 0; j < d; ++j) feat[static_cast<size_t>(j)] = slots.slots->value.at(0, slot_id, j);
      rows.push_back(std::move(feat));
      out.shape_label.push_back(static_cast<int>(obj.shape));
      out.color_label.push_back(obj.color_index);
      out.cx.push_back(obj.cx);
      out.cy.push_back(obj.cy);
      out.size.push_back(obj.size);
      out.is_test.push_back(static_cast<int>(si) >= train_cut ? 1 : 0);
      out.n_colors = std::max(out.n_colors, obj.color_index + 1);
    }
  }
  out.features = Tensor({static_cast<int>(rows.size()), d});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), out.features.data() + static_cast<int64_t>(i) * d);
  return out;
}

namespace {

struct ProbeTask {
  bool categorical;
  int classes;              // categorical only
  std::vector<real> target; // rows*outdim, flattened
  int out_dim;
};

ProbeTask make_task(const ProbeDataset& data, const std::string& property) {
  ProbeTask t{};
  const int k = data.rows();
  if (property == "shape" || property == "color") {
    t.categorical = true;
    t.classes = property == "shape" ? std::max(data.n_shapes, 1) : std::max(data.n_colors, 1);
    t.out_dim = t.classes;
    t.target.resize(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i)
      t.target[static_cast<size_t>(i)] = property == "shape"
                                             ? data.shape_label[static_cast<size_t>(i)]
                                             : data.color_label[static_cast<size_t>(i)];
  } else if (property == "position") {
    t.categorical = false;
    t.out_dim = 2;
    t.target.resize(static_cast<size_t>(k) * 2);
    for (int i = 0; i < k; ++i) {
      t.target[static_cast<size_t>(i) * 2] = data.cx[static_cast<size_t>(i)];
      t.target[static_cast<size_t>(i) * 2 + 1] = data.cy[static_cast<size_t>(i)];
    }
  } else if (property == "size") {
    t.categorical = false;
    t.out_dim = 1;
    t.target.assign(data.size.begin(), data.size.end());
  } else {
    throw ValidationError("unknown probe property: " + property);
  }
  return t;
}

}  // namespace

ProbeReport probe_fit_eval(const ProbeDataset& data, const std::string& property,
                           const ProbeConfig& cfg, uint64_t seed) {
  const ProbeTask task = make_task(data, property);
  ProbeReport rep;
  rep.property = property;
  rep.categorical = task.categorical;

  std::vector<int> train_ix, test_ix;
  for (int i = 0; i < data.rows(); ++i)
    (data.is_test[static_cast<size_t>(i)] ? test_ix : train_ix).push_back(i);
  rep.train_rows = static_cast<int>(train_ix.size());
  rep.test_rows = static_cast<int>(test_ix.size());
  if (train_ix.empty() || test_ix.empty())
    throw ValidationError("probe needs nonempty train and test splits");

  const int d_in = task.categorical && cfg.cheat_mode ? task.classes : data.features.dim(1);
  auto gather = [&](const std::vector<int>& ix) {
    Tensor x({static_cast<int>(ix.size()), d_in});
    for (size_t r = 0; r < ix.size(); ++r) {
      if (task.categorical && cfg.cheat_mode) {
        x.at(static_cast<int>(r), static_cast<int>(task.target[static_cast<size_t>(ix[r])])) = 1;
      } else {
        for (int j = 0; j < d_in; ++j)
          x.at(static_cast<int>(r), j) = data.features.at(ix[r], j);
      }
    }
    return x;
  };
  const Tensor x_train = gather(train_ix), x_test = gather(test_ix);

  // degenerate-label flag: single class present in training
  if (task.categorical) {
    std::set<int> seen;
    for (int i : train_ix) seen.insert(static_cast<int>(task.target[static_cast<size_t>(i)]));
    rep.degenerate_labels = seen.size() <= 1;
  }

  // constant predictor baseline (train mean), reported for continuous targets
  if (!task.categorical) {
    std::vector<real> mean(static_cast<size_t>(task.out_dim), 0);
    for (int i : train_ix)
      for (int j = 0; j < task.out_dim; ++j)
        mean[static_cast<size_t>(j)] += task.target[static_cast<size_t>(i) * task.out_dim + j];
    for (auto& m : mean) m /= static_cast<real>(train_ix.size());
    real se = 0;
    for (int i : test_ix)
      for (int j = 0; j < task.out_dim; ++j) {
        const real dlt = task.target[static_cast<size_t>(i) * task.out_dim + j] - mean[static_cast<size_t>(j)];
        se += dlt * dlt;
      }
    rep.constant_baseline_mse = se / (static_cast<real>(test_ix.size()) * task.out_dim);
  }

  // 2-layer MLP probe
  Rng rng = derive_rng(seed, 0x9B0BE);
  model::ParamStore store;
  store.create("p.w1", model::linear_init(cfg.hidden, d_in, rng), model::Group::kPhi);
  store.create("p.b1", Tensor::zeros({cfg.hidden}), model::Group::kPhi);
  store.create("p.w2", model::linear_init(task.out_dim, cfg.hidden, rng), model::Group::kPhi);
  store.create("p.b2", Tensor::zeros({task.out_dim}), model::Group::kPhi);

  auto forward = [&](const Tensor& x) {
    auto h = ag::silu(ag::linear(ag::constant(x), store.get("p.w1"), store.get("p.b1")));
    return ag::linear(h, store.get("p.w2"), store.get("p.b2"));
  };
  auto loss_graph = [&](const Tensor& x, const std::vector<int>& ix) {
    const ag::Var logits = forward(x);
    if (task.categorical) {
      Tensor onehot({static_cast<int>(ix.size()), task.out_dim});
      for (size_t r = 0; r < ix.size(); ++r)
        onehot.at(static_cast<int>(r), static_cast<int>(task.target[static_cast<size_t>(ix[r])])) = 1;
      const ag::Var logp = ag::log_(ag::add_scalar(ag::softmax_last(logits), 1e-12));
      return ag::scale(ag::mean_all(ag::mul(ag::constant(onehot), logp)),
                       -static_cast<real>(task.out_dim));
    }
    Tensor y({static_cast<int>(ix.size()), task.out_dim});
    for (size_t r = 0; r < ix.size(); ++r)
      for (int j = 0; j < task.out_dim; ++j)
        y.at(static_cast<int>(r), j) = task.target[static_cast<size_t>(ix[r]) * task.out_dim + j];
    return ag::mean_all(ag::square(ag::sub(logits, ag::constant(y))));
  };

  // full-batch Adam
  std::vector<Tensor> m_state, v_state;
  for (const auto& name : store.names()) {
    m_state.push_back(Tensor::zeros(store.get(name)->value.shape));
    v_state.push_back(Tensor::zeros(store.get(name)->value.shape));
  }
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    store.zero_grads();
    ag::backward(loss_graph(x_train, train_ix));
    const real bc1 = 1 - std::pow(real(0.9), epoch + 1);
    const real bc2 = 1 - std::pow(real(0.999), epoch + 1);
    for (size_t pi = 0; pi < store.names().size(); ++pi) {
      auto var = store.get(store.names()[pi]);
      if (!var->has_grad()) continue;
      for (int64_t i = 0; i < var->value.numel(); ++i) {
        const real g = var->grad[i];
        m_state[pi][i] = 0.9 * m_state[pi][i] + 0.1 * g;
        v_state[pi][i] = 0.999 * v_state[pi][i] + 0.001 * g * g;
        var->value[i] -= cfg.lr * (m_state[pi][i] / bc1) /
                         (std::sqrt(v_state[pi][i] / bc2) + 1e-8);
      }
    }
  }

  // evaluation on the held-out split
  const ag::Var logits = forward(x_test);
  if (task.categorical) {
    int correct = 0;
    for (size_t r = 0; r < test_ix.size(); ++r) {
      int best = 0;
      for (int j = 1; j < task.out_dim; ++j)
        if (logits->value.at(static_cast<int>(r), j) > logits->value.at(static_cast<int>(r), best))
          best = j;
      correct += best == static_cast<int>(task.target[static_cast<size_t>(test_ix[r])]);
    }
    rep.accuracy = static_cast<real>(correct) / static_cast<real>(test_ix.size());
  } else {
    real se = 0;
    for (size_t r = 0; r < test_ix.size(); ++r)
      for (int j = 0; j < task.out_dim; ++j) {
        const real dlt = logits->value.at(static_cast<int>(r), j) -
                         task.target[static_cast<size_t>(test_ix[r]) * task.out_dim + j];
        se += dlt * dlt;
      }
    rep.mse = se / (static_cast<real>(test_ix.size()) * task.out_dim);
  }
  return rep;
}

}  // namespace slotgen::metrics
