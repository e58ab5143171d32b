#pragma once

#include "slotgen/core/tensor.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace slotgen::metrics {

// A labeled pixel grid. Labels are nonnegative; for ground truth, 0 means
// background. Pixels with ignore set participate in no metric.
struct Partition {
  int h = 0, w = 0;
  std::vector<int> labels;
  std::vector<uint8_t> ignore;  // empty = nothing ignored

  bool ignored(int64_t i) const { return !ignore.empty() && ignore[static_cast<size_t>(i)]; }
};

// Pair-counting sufficient statistics over the scored pixels. Kept integral so
// independent oracles can be compared exactly.
struct AriStats {
  int64_t pairs_both = 0;  // together in pred and gt
  int64_t pairs_pred = 0;  // together in pred
  int64_t pairs_gt = 0;    // together in gt
  int64_t pairs_total = 0;
};

struct FgAriResult {
  real value = 1.0;
  bool degenerate = false;  // no foreground pixels to score
  AriStats stats;
};

real ari_from_stats(const AriStats& s);

// Adjusted Rand Index restricted to ground-truth foreground (gt label > 0).
FgAriResult fg_ari(const Partition& pred, const Partition& gt);

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col) of the cost matrix
  std::vector<int> unmatched_rows, unmatched_cols;
  real total_cost = 0;
};

// Minimum-cost one-to-one assignment of min(P,G) pairs; cost is P x G.
Assignment hungarian_match(const Tensor& cost);

enum class Level { kInstance, kClass };

// class_of maps instance id (1-based) -> class id; required at class level.
real miou(const Partition& pred, const Partition& gt, Level level,
          const std::vector<int>& class_of = {});
real mbo(const Partition& pred, const Partition& gt, Level level,
         const std::vector<int>& class_of = {});

// IoU matrix between every distinct pred label (rows) and gt instance 1..K
// (cols); row_labels receives the pred labels in row order.
Tensor iou_matrix(const Partition& pred, const Partition& gt,
                  std::vector<int>* row_labels = nullptr);

}  // namespace slotgen::metrics
