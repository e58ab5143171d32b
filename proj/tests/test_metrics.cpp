#include "doctest.h"

#include "oracles.hpp"
#include "slotgen/metrics/segmentation.hpp"

#include <cmath>

using namespace slotgen;
using namespace slotgen::metrics;

namespace {
Partition make_partition(int h, int w, std::vector<int> labels) {
  return Partition{h, w, std::move(labels), {}};
}
}  // namespace

TEST_CASE("fg_ari basics") {
  // gt foreground labels [1,1,2,2], pred [1,2,1,2] -> ARI = -0.5
  const auto gt = make_partition(2, 2, {1, 1, 2, 2});
  const auto pred = make_partition(2, 2, {1, 2, 1, 2});
  CHECK(fg_ari(pred, gt).value == doctest::Approx(-0.5));

  CHECK(fg_ari(gt, gt).value == doctest::Approx(1.0));
  const auto permuted = make_partition(2, 2, {2, 2, 1, 1});
  CHECK(fg_ari(permuted, gt).value == doctest::Approx(1.0));

  // Background pixels are excluded: pred differs only on gt background.
  const auto gt_bg = make_partition(2, 2, {0, 1, 1, 0});
  const auto pred_a = make_partition(2, 2, {9, 4, 4, 7});
  CHECK(fg_ari(pred_a, gt_bg).value == doctest::Approx(1.0));

  // No foreground at all -> degenerate 1.0 with flag
  const auto gt_empty = make_partition(2, 2, {0, 0, 0, 0});
  const auto r = fg_ari(pred_a, gt_empty);
  CHECK(r.value == 1.0);
  CHECK(r.degenerate);

  // Single gt cluster matched by a single pred cluster -> 1.0
  const auto gt_one = make_partition(2, 2, {1, 1, 1, 1});
  const auto pred_one = make_partition(2, 2, {5, 5, 5, 5});
  CHECK(fg_ari(pred_one, gt_one).value == 1.0);
}

TEST_CASE("fg_ari ignores masked pixels") {
  auto gt = make_partition(2, 2, {1, 1, 2, 2});
  gt.ignore = {0, 0, 0, 1};
  const auto pred = make_partition(2, 2, {1, 1, 2, 9});
  CHECK(fg_ari(pred, gt).value == doctest::Approx(1.0));
}

TEST_CASE("hungarian_match basics") {
  Tensor diag({3, 3});
  diag.v = {0, 5, 5, 5, 0, 5, 5, 5, 0};
  const auto asg = hungarian_match(diag);
  REQUIRE(asg.pairs.size() == 3);
  for (const auto& [r, c] : asg.pairs) CHECK(r == c);
  CHECK(asg.total_cost == doctest::Approx(0));

  Tensor one({1, 1});
  one.v = {3.5};
  const auto a1 = hungarian_match(one);
  REQUIRE(a1.pairs.size() == 1);
  CHECK(a1.total_cost == doctest::Approx(3.5));

  Tensor rect({2, 4});
  rect.v = {9, 1, 9, 9, 9, 9, 9, 0.5};
  const auto a2 = hungarian_match(rect);
  REQUIRE(a2.pairs.size() == 2);
  CHECK(a2.total_cost == doctest::Approx(1.5));
  CHECK(a2.unmatched_cols.size() == 2);
}

TEST_CASE("hungarian matches exhaustive permutation minimum, 100 random matrices") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const int p = 1 + rng.uniform_int(6);
    const int g = 1 + rng.uniform_int(6);
    Tensor cost({p, g});
    // Grid-valued costs keep every sum exactly representable.
    for (auto& v : cost.v) v = rng.uniform_int(128) / real(64) - 1;
    const auto asg = hungarian_match(cost);
    CHECK(asg.pairs.size() == static_cast<size_t>(std::min(p, g)));
    CHECK(asg.total_cost == oracle::assignment_min_cost(cost));
  }
}

TEST_CASE("miou hand cases") {
  // single gt object of 4 pixels, pred of 4 pixels overlapping in 2 -> 1/3
  auto gt = make_partition(3, 4, std::vector<int>(12, 0));
  auto pred = make_partition(3, 4, std::vector<int>(12, 0));
  // gt: pixels 0..3; pred: pixels 2..5
  for (int i = 0; i < 4; ++i) gt.labels[static_cast<size_t>(i)] = 1;
  for (int i = 2; i < 6; ++i) pred.labels[static_cast<size_t>(i)] = 1;
  CHECK(miou(pred, gt, Level::kInstance) == doctest::Approx(1.0 / 3));

  CHECK(miou(gt, gt, Level::kInstance) == doctest::Approx(1.0));

  // two gt objects, pred covers only one perfectly -> 0.5
  auto gt2 = make_partition(2, 4, {1, 1, 2, 2, 0, 0, 0, 0});
  auto pred2 = make_partition(2, 4, {7, 7, 0, 0, 0, 0, 0, 0});
  CHECK(miou(pred2, gt2, Level::kInstance) == doctest::Approx(0.5));
}

TEST_CASE("mbo hand cases") {
  auto gt = make_partition(2, 4, {1, 1, 2, 2, 0, 0, 0, 0});
  CHECK(mbo(gt, gt, Level::kInstance) == doctest::Approx(1.0));

  // One pred mask covering the union of two equal-size disjoint gt masks.
  auto pred = make_partition(2, 4, {3, 3, 3, 3, 0, 0, 0, 0});
  CHECK(mbo(pred, gt, Level::kInstance) == doctest::Approx(0.5));
}

TEST_CASE("class-level metrics merge instances") {
  // Two gt instances of the same class; pred separates them but the class view
  // merges both sides into one mask each.
  auto gt = make_partition(2, 4, {1, 1, 2, 2, 0, 0, 0, 0});
  auto pred = make_partition(2, 4, {4, 4, 9, 9, 0, 0, 0, 0});
  const std::vector<int> class_of = {0, 3, 3};  // both instances class 3
  CHECK(miou(pred, gt, Level::kClass, class_of) == doctest::Approx(1.0));
  CHECK(mbo(pred, gt, Level::kClass, class_of) == doctest::Approx(1.0));
  // At instance level the same inputs are already perfect一一matched.
  CHECK(miou(pred, gt, Level::kInstance) == doctest::Approx(1.0));

  // Distinct classes stay separate: the single merged pred mask inherits the
  // first class (tie on overlap), leaving the other class unmatched.
  const std::vector<int> distinct = {0, 3, 5};
  auto pred_merged = make_partition(2, 4, {4, 4, 4, 4, 0, 0, 0, 0});
  CHECK(miou(pred_merged, gt, Level::kClass, distinct) == doctest::Approx(0.25));
}

TEST_CASE("metrics agree with brute-force oracles on random partitions") {
  Rng rng(123);
  real max_miou_diff = 0, max_mbo_diff = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 2 + rng.uniform_int(7), w = 2 + rng.uniform_int(7);
    const auto gt = oracle::random_partition(rng, h, w, 4, true);
    const auto pred = oracle::random_partition(rng, h, w, 4, false);

    const auto r = fg_ari(pred, gt);
    const auto s = oracle::ari_pair_scan(pred, gt);
    CHECK(r.stats.pairs_both == s.pairs_both);
    CHECK(r.stats.pairs_pred == s.pairs_pred);
    CHECK(r.stats.pairs_gt == s.pairs_gt);
    CHECK(r.stats.pairs_total == s.pairs_total);
    if (!r.degenerate) CHECK(r.value == ari_from_stats(s));

    max_miou_diff = std::max(max_miou_diff,
                             std::abs(miou(pred, gt, Level::kInstance) -
                                      oracle::miou_exhaustive(pred, gt)));
    max_mbo_diff = std::max(max_mbo_diff, std::abs(mbo(pred, gt, Level::kInstance) -
                                                   oracle::mbo_direct(pred, gt)));
  }
  CHECK(max_miou_diff <= 1e-12);
  CHECK(max_mbo_diff <= 1e-12);
}

TEST_CASE("mbo >= instance miou on random inputs") {
  Rng rng(321);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 2 + rng.uniform_int(7), w = 2 + rng.uniform_int(7);
    const auto gt = oracle::random_partition(rng, h, w, 4, true);
    const auto pred = oracle::random_partition(rng, h, w, 4, false);
    CHECK(mbo(pred, gt, Level::kInstance) >= miou(pred, gt, Level::kInstance) - 1e-12);
  }
}

TEST_CASE("metric ranges") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const auto gt = oracle::random_partition(rng, 6, 6, 4, true);
    const auto pred = oracle::random_partition(rng, 6, 6, 4, false);
    const real a = miou(pred, gt, Level::kInstance);
    const real b = mbo(pred, gt, Level::kInstance);
    CHECK(a >= 0);
    CHECK(a <= 1);
    CHECK(b >= 0);
    CHECK(b <= 1);
  }
}
