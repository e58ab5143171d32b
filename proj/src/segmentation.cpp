#include "slotgen/metrics/segmentation.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace slotgen::metrics {

namespace {
int64_t choose2(int64_t n) { return n * (n - 1) / 2; }
}  // namespace

real ari_from_stats(const AriStats& s) {
  if (s.pairs_total == 0) return 1.0;
  const real index = static_cast<real>(s.pairs_both);
  const real expected = static_cast<real>(s.pairs_pred) * static_cast<real>(s.pairs_gt) /
                        static_cast<real>(s.pairs_total);
  const real maxi = (static_cast<real>(s.pairs_pred) + static_cast<real>(s.pairs_gt)) / 2;
  const real denom = maxi - expected;
  if (denom == 0) return 1.0;  // both partitions degenerate (e.g. single cluster)
  return (index - expected) / denom;
}

FgAriResult fg_ari(const Partition& pred, const Partition& gt) {
  assert(pred.h == gt.h && pred.w == gt.w);
  const int64_t n = static_cast<int64_t>(gt.h) * gt.w;
  std::map<std::pair<int, int>, int64_t> contingency;
  std::map<int, int64_t> pred_sizes, gt_sizes;
  int64_t fg = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (gt.ignored(i) || pred.ignored(i)) continue;
    const int g = gt.labels[static_cast<size_t>(i)];
    if (g <= 0) continue;
    const int p = pred.labels[static_cast<size_t>(i)];
    ++contingency[{p, g}];
    ++pred_sizes[p];
    ++gt_sizes[g];
    ++fg;
  }
  FgAriResult res;
  if (fg == 0) {
    res.value = 1.0;
    res.degenerate = true;
    return res;
  }
  for (const auto& [key, c] : contingency) res.stats.pairs_both += choose2(c);
  for (const auto& [key, c] : pred_sizes) res.stats.pairs_pred += choose2(c);
  for (const auto& [key, c] : gt_sizes) res.stats.pairs_gt += choose2(c);
  res.stats.pairs_total = choose2(fg);
  res.value = ari_from_stats(res.stats);
  return res;
}

Assignment hungarian_match(const Tensor& cost) {
  const int p = cost.dim(0), g = cost.dim(1);
  for (real v : cost.v)
    if (!std::isfinite(v)) throw std::runtime_error("hungarian_match: non-finite cost");
  const bool transposed = p > g;
  const int n = transposed ? g : p;  // rows, n <= m
  const int m = transposed ? p : g;
  auto a = [&](int i, int j) -> real {
    return transposed ? cost.at(j - 1, i - 1) : cost.at(i - 1, j - 1);
  };

  // Potentials method; indices are 1-based with column 0 as the virtual root.
  const real inf = std::numeric_limits<real>::infinity();
  std::vector<real> u(static_cast<size_t>(n) + 1, 0), v(static_cast<size_t>(m) + 1, 0);
  std::vector<int> match(static_cast<size_t>(m) + 1, 0), way(static_cast<size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<real> minv(static_cast<size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<size_t>(m) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = match[static_cast<size_t>(j0)];
      real delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const real cur = a(i0, j) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  Assignment res;
  std::vector<char> row_used(static_cast<size_t>(p), 0), col_used(static_cast<size_t>(g), 0);
  for (int j = 1; j <= m; ++j) {
    const int i = match[static_cast<size_t>(j)];
    if (i == 0) continue;
    const int row = transposed ? j - 1 : i - 1;
    const int col = transposed ? i - 1 : j - 1;
    res.pairs.emplace_back(row, col);
    row_used[static_cast<size_t>(row)] = 1;
    col_used[static_cast<size_t>(col)] = 1;
  }
  std::sort(res.pairs.begin(), res.pairs.end());
  for (const auto& [r, c] : res.pairs) res.total_cost += cost.at(r, c);
  for (int i = 0; i < p; ++i)
    if (!row_used[static_cast<size_t>(i)]) res.unmatched_rows.push_back(i);
  for (int j = 0; j < g; ++j)
    if (!col_used[static_cast<size_t>(j)]) res.unmatched_cols.push_back(j);
  return res;
}

namespace {

// Pixel-count contingency between all pred labels and gt instances 1..K.
struct Overlaps {
  std::vector<int> pred_labels;          // row order
  std::vector<int64_t> pred_sizes;       // per row
  std::vector<int64_t> gt_sizes;         // per gt instance 1..K (index 0 unused)
  std::map<std::pair<int, int>, int64_t> inter;  // (row, gt 1..K) -> count
  int k = 0;
};

Overlaps count_overlaps(const Partition& pred, const Partition& gt) {
  Overlaps o;
  const int64_t n = static_cast<int64_t>(gt.h) * gt.w;
  std::map<int, int> row_of;
  std::map<int, int64_t> pred_count;
  int k = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (gt.ignored(i) || pred.ignored(i)) continue;
    k = std::max(k, gt.labels[static_cast<size_t>(i)]);
  }
  o.k = k;
  o.gt_sizes.assign(static_cast<size_t>(k) + 1, 0);
  for (int64_t i = 0; i < n; ++i) {
    if (gt.ignored(i) || pred.ignored(i)) continue;
    const int p = pred.labels[static_cast<size_t>(i)];
    const int g = gt.labels[static_cast<size_t>(i)];
    if (g > 0) ++o.gt_sizes[static_cast<size_t>(g)];
    if (p <= 0) continue;  // label 0 is "no prediction", not a mask
    ++pred_count[p];
    if (!row_of.count(p)) {
      row_of[p] = static_cast<int>(o.pred_labels.size());
      o.pred_labels.push_back(p);
    }
    if (g > 0) ++o.inter[{row_of[p], g}];
  }
  o.pred_sizes.assign(o.pred_labels.size(), 0);
  for (size_t r = 0; r < o.pred_labels.size(); ++r) o.pred_sizes[r] = pred_count[o.pred_labels[r]];
  return o;
}

Tensor iou_from_overlaps(const Overlaps& o) {
  Tensor iou({static_cast<int>(o.pred_labels.size()), o.k});
  for (const auto& [key, c] : o.inter) {
    const auto [r, g] = key;
    const int64_t uni = o.pred_sizes[static_cast<size_t>(r)] +
                        o.gt_sizes[static_cast<size_t>(g)] - c;
    iou.at(r, g - 1) = uni > 0 ? static_cast<real>(c) / static_cast<real>(uni) : real(0);
  }
  return iou;
}

// Class level merges instances on both sides; each pred mask inherits the
// class of its best-overlap gt instance (local convention; zero-overlap pred
// masks drop out as background).
std::pair<Partition, Partition> merge_by_class(const Partition& pred, const Partition& gt,
                                               const std::vector<int>& class_of) {
  Overlaps o = count_overlaps(pred, gt);
  if (static_cast<int>(class_of.size()) < o.k + 1)
    throw std::runtime_error("class_of must cover every gt instance id");
  const Tensor iou = iou_from_overlaps(o);

  // Dense class relabeling keeps downstream code on contiguous ids.
  std::map<int, int> dense;
  auto dense_class = [&](int cls) {
    if (!dense.count(cls)) {
      const int next = static_cast<int>(dense.size()) + 1;
      dense[cls] = next;
    }
    return dense[cls];
  };

  std::vector<int> gt_class(static_cast<size_t>(o.k) + 1, 0);
  for (int g = 1; g <= o.k; ++g) gt_class[static_cast<size_t>(g)] = dense_class(class_of[static_cast<size_t>(g)]);

  std::vector<int> pred_class(o.pred_labels.size(), 0);
  for (size_t r = 0; r < o.pred_labels.size(); ++r) {
    real best = 0;
    int best_g = 0;
    for (int g = 1; g <= o.k; ++g) {
      if (iou.at(static_cast<int>(r), g - 1) > best) {
        best = iou.at(static_cast<int>(r), g - 1);
        best_g = g;
      }
    }
    pred_class[r] = best_g > 0 ? gt_class[static_cast<size_t>(best_g)] : 0;
  }

  Partition mp{pred.h, pred.w, std::vector<int>(pred.labels.size(), 0), pred.ignore};
  Partition mg{gt.h, gt.w, std::vector<int>(gt.labels.size(), 0), gt.ignore};
  std::map<int, int> row_of;
  for (size_t r = 0; r < o.pred_labels.size(); ++r) row_of[o.pred_labels[r]] = static_cast<int>(r);
  for (size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    if (g > 0) mg.labels[i] = gt_class[static_cast<size_t>(g)];
    const int p = pred.labels[i];
    if (row_of.count(p)) mp.labels[i] = pred_class[static_cast<size_t>(row_of[p])];
  }
  return {mp, mg};
}

}  // namespace

Tensor iou_matrix(const Partition& pred, const Partition& gt, std::vector<int>* row_labels) {
  Overlaps o = count_overlaps(pred, gt);
  if (row_labels) *row_labels = o.pred_labels;
  return iou_from_overlaps(o);
}

real miou(const Partition& pred, const Partition& gt, Level level,
          const std::vector<int>& class_of) {
  if (level == Level::kClass) {
    // After the class merge, labels agree on both sides, so pairing is by
    // class identity rather than Hungarian matching.
    auto [mp, mg] = merge_by_class(pred, gt, class_of);
    std::vector<int> rows;
    const Tensor iou = iou_matrix(mp, mg, &rows);
    const int c = iou.ndim() == 2 ? iou.dim(1) : 0;
    if (c == 0) return 1.0;
    real total = 0;
    for (int cls = 1; cls <= c; ++cls) {
      real v = 0;
      for (size_t r = 0; r < rows.size(); ++r)
        if (rows[r] == cls) v = iou.at(static_cast<int>(r), cls - 1);
      total += v;
    }
    return total / static_cast<real>(c);
  }
  const Tensor iou = iou_matrix(pred, gt);
  const int k = iou.ndim() == 2 ? iou.dim(1) : 0;
  if (k == 0) return 1.0;  // nothing to segment
  Tensor cost({iou.dim(0), k});
  for (int64_t i = 0; i < cost.numel(); ++i) cost[i] = -iou[i];
  const Assignment asg = hungarian_match(cost);
  // Unmatched ground-truth instances contribute zero; summation runs in gt
  // order so independent oracles can reproduce the arithmetic.
  std::vector<real> matched(static_cast<size_t>(k), 0);
  for (const auto& [r, g] : asg.pairs) matched[static_cast<size_t>(g)] = iou.at(r, g);
  real total = 0;
  for (int g = 0; g < k; ++g) total += matched[static_cast<size_t>(g)];
  return total / static_cast<real>(k);
}

real mbo(const Partition& pred, const Partition& gt, Level level,
         const std::vector<int>& class_of) {
  if (level == Level::kClass) {
    auto [mp, mg] = merge_by_class(pred, gt, class_of);
    return mbo(mp, mg, Level::kInstance);
  }
  const Tensor iou = iou_matrix(pred, gt);
  const int k = iou.ndim() == 2 ? iou.dim(1) : 0;
  if (k == 0) return 1.0;
  real total = 0;
  for (int g = 0; g < k; ++g) {
    real best = 0;
    for (int r = 0; r < iou.dim(0); ++r) best = std::max(best, iou.at(r, g));
    total += best;
  }
  return total / static_cast<real>(k);
}

}  // namespace slotgen::metrics
