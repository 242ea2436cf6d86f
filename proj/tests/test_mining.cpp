#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "lrm/error.hpp"
#include "lrm/mining.hpp"
#include "oracles.hpp"

using namespace lrm;

namespace {

GridSpec line_spec(int n) {
  // n predictions on a 1 x n layout is impossible (grid is square), so use
  // one cell with n anchors.
  GridSpec g;
  g.grid_size = 1;
  g.anchor_count = n;
  g.class_count = 2;
  g.image_size = 32;
  g.anchors.assign(static_cast<std::size_t>(n), Anchor{1, 1});
  return g;
}

LossBreakdown breakdown_of(const std::vector<double>& losses) {
  LossBreakdown bd;
  for (double l : losses) {
    LossTerms t;
    t.total = l;
    bd.per_prediction.push_back(t);
    bd.grand_total += l;
  }
  return bd;
}

std::vector<PredictionView> views_for(const GridSpec& g, const std::vector<Box>& boxes, const std::vector<int>& classes) {
  std::vector<PredictionView> v(boxes.size());
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    v[k].index = index_of(g, static_cast<int>(k));
    v[k].box = boxes[k];
    v[k].predicted_class = classes[k];
    v[k].class_scores.assign(static_cast<std::size_t>(g.class_count), 0.0);
    v[k].class_scores[static_cast<std::size_t>(classes[k])] = 1.0;
  }
  return v;
}

std::vector<int> flats(const std::vector<RankedPrediction>& r) {
  std::vector<int> out;
  for (const auto& p : r) out.push_back(p.flat);
  return out;
}

std::vector<int> flats(const GridSpec& g, const std::vector<PredictionIndex>& idx) {
  std::vector<int> out;
  for (const auto& i : idx) out.push_back(flat_index(g, i));
  return out;
}

Box random_box(Rng& rng, double extent) {
  const double x0 = rng.uniform(0, extent), y0 = rng.uniform(0, extent);
  return {x0, y0, x0 + rng.uniform(1, extent / 2), y0 + rng.uniform(1, extent / 2)};
}

}  // namespace

TEST_CASE("rank examples") {
  const GridSpec g = line_spec(3);
  const std::vector<Box> boxes(3, Box{0, 0, 1, 1});
  const auto views = views_for(g, boxes, {0, 0, 0});
  const auto r = rank(breakdown_of({1.0, 5.0, 3.0}), views);
  CHECK(flats(r) == std::vector<int>{1, 2, 0});
  CHECK(r[0].rank == 0);
  CHECK(r[2].rank == 2);
  CHECK(r[0].loss == 5.0);

  const auto tied = rank(breakdown_of({2.0, 2.0, 2.0}), views);
  CHECK(flats(tied) == std::vector<int>{0, 1, 2});

  CHECK_THROWS_AS(rank(breakdown_of({1.0}), views), ContractError);
}

TEST_CASE("rank agrees with the selection-sort reference") {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 40));
    const GridSpec g = line_spec(n);
    std::vector<double> losses(static_cast<std::size_t>(n));
    // coarse values so ties are common
    for (double& l : losses) l = static_cast<double>(rng.uniform_int(0, 6)) * 0.5;
    const auto r = rank(breakdown_of(losses), views_for(g, std::vector<Box>(losses.size(), Box{0, 0, 1, 1}),
                                                        std::vector<int>(losses.size(), 0)));
    CHECK(flats(r) == oracle::loss_order(losses));
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i - 1].loss >= r[i].loss);
  }
}

TEST_CASE("loss-descent NMS examples") {
  const GridSpec g = line_spec(3);
  const std::vector<Box> same(3, Box{0, 0, 10, 10});
  const auto views = views_for(g, same, {1, 1, 1});
  const auto ranked = rank(breakdown_of({1.0, 5.0, 3.0}), views);

  CHECK(flats(dedup_by_loss_nms(ranked, std::nullopt)) == flats(ranked));
  const auto d = dedup_by_loss_nms(ranked, 0.5);
  REQUIRE(d.size() == 1);
  CHECK(d[0].loss == 5.0);

  // different predicted classes never suppress each other
  const auto mixed = rank(breakdown_of({1.0, 5.0, 3.0}), views_for(g, same, {0, 1, 0}));
  CHECK(flats(dedup_by_loss_nms(mixed, 0.5)) == std::vector<int>{1, 2});

  // disjoint boxes survive
  const auto apart = rank(breakdown_of({1.0, 5.0, 3.0}),
                          views_for(g, {{0, 0, 1, 1}, {2, 2, 3, 3}, {4, 4, 5, 5}}, {0, 0, 0}));
  CHECK(dedup_by_loss_nms(apart, 0.1).size() == 3);
}

TEST_CASE("loss-descent NMS agrees with the pairwise reference") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(2, 60));
    const GridSpec g = line_spec(n);
    std::vector<double> losses(static_cast<std::size_t>(n));
    std::vector<Box> boxes;
    std::vector<int> classes;
    for (double& l : losses) l = rng.uniform(0, 3);
    for (int k = 0; k < n; ++k) {
      boxes.push_back(random_box(rng, 40));
      classes.push_back(static_cast<int>(rng.uniform_int(0, 1)));
    }
    const double thr = rng.uniform(0.05, 0.95);
    const auto d = dedup_by_loss_nms(rank(breakdown_of(losses), views_for(g, boxes, classes)), thr);
    CHECK(flats(d) == oracle::suppress(oracle::loss_order(losses), boxes, classes, thr));
  }
}

TEST_CASE("select_hard") {
  const GridSpec g = line_spec(4);
  const auto views = views_for(g, std::vector<Box>(4, Box{0, 0, 1, 1}), {0, 0, 0, 0});
  const auto ranked = rank(breakdown_of({0.1, 0.9, 0.5, 0.7}), views);
  LrmConfig cfg;
  cfg.nms_threshold = std::nullopt;

  cfg.hard_example_count = 2;
  CHECK(flats(g, select_hard(ranked, cfg, {}, g)) == std::vector<int>{1, 3});
  cfg.hard_example_count = 10;
  CHECK(flats(g, select_hard(ranked, cfg, {}, g)) == std::vector<int>{0, 1, 2, 3});

  Assignment asg;
  asg.responsible[0] = index_of(g, 0);
  cfg.hard_example_count = 1;
  CHECK(flats(g, select_hard(ranked, cfg, asg, g)) == std::vector<int>{1});
  cfg.force_keep_assigned = true;
  CHECK(flats(g, select_hard(ranked, cfg, asg, g)) == std::vector<int>{0, 1});

  LrmConfig off;
  off.enabled = false;
  CHECK(select_hard({}, off, {}, g).size() == 4);

  cfg.hard_example_count = 0;
  CHECK_THROWS_AS(select_hard(ranked, cfg, asg, g), ContractError);
}

TEST_CASE("selection agrees with the reference on random feature maps") {
  Rng rng(64);
  for (int trial = 0; trial < 100; ++trial) {
    const GridSpec g = oracle::random_spec(rng, 6, 3, 3);
    const auto fm = oracle::random_feature_map(g, rng, 2.0);
    const auto gt = oracle::random_truth(g, rng, 4);
    LrmConfig cfg;
    cfg.hard_example_count = static_cast<int>(rng.uniform_int(1, g.prediction_count()));
    cfg.nms_threshold = rng.uniform() < 0.3 ? std::nullopt : std::optional<double>(rng.uniform(0.2, 0.9));
    const auto step = run_lrm_step(fm, gt, {}, cfg);

    const auto views = decode_all(fm);
    std::vector<double> losses;
    std::vector<Box> boxes;
    std::vector<int> classes;
    for (std::size_t k = 0; k < views.size(); ++k) {
      losses.push_back(step.breakdown.per_prediction[k].total);
      boxes.push_back(views[k].box);
      classes.push_back(views[k].predicted_class);
    }
    const auto expected = oracle::select(losses, boxes, classes, cfg.nms_threshold, cfg.hard_example_count);
    std::set<int> got;
    for (int k = 0; k < g.prediction_count(); ++k) {
      if (step.mask.kept(k)) got.insert(k);
    }
    CHECK(got == expected);
    CHECK(step.report.kept == static_cast<int>(got.size()));
    CHECK(step.report.kept <= cfg.hard_example_count);
  }
}

TEST_CASE("apply_mask") {
  GridSpec g;
  g.grid_size = 1;
  g.anchor_count = 2;
  g.class_count = 1;
  g.image_size = 4;
  g.anchors = {{1, 1}, {2, 2}};
  std::vector<double> v(12);
  for (std::size_t e = 0; e < v.size(); ++e) v[e] = static_cast<double>(e) + 1.0;
  const FeatureMap fm(g, v);
  const auto ones = apply_mask(fm, mask_all_ones(g));
  CHECK(std::equal(ones.values().begin(), ones.values().end(), fm.values().begin()));
  const auto zeros = apply_mask(fm, mask_from_selection(g, {}));
  for (double x : zeros.values()) CHECK(x == 0.0);
  const std::vector<PredictionIndex> second{{0, 0, 1}};
  const auto half = apply_mask(fm, mask_from_selection(g, second));
  for (int e = 0; e < 6; ++e) CHECK(half.values()[static_cast<std::size_t>(e)] == 0.0);
  for (int e = 6; e < 12; ++e) CHECK(half.values()[static_cast<std::size_t>(e)] == e + 1.0);
}

TEST_CASE("gated gradient: all-ones and all-zeros masks") {
  Rng rng(12);
  const GridSpec g = oracle::random_spec(rng, 3, 2, 3);
  const auto fm = oracle::random_feature_map(g, rng);
  const auto gt = oracle::random_truth(g, rng, 3);
  const auto asg = assign(gt, g, 0.6);
  const LossWeights w;

  const auto full = gated_backward_check(fm, mask_all_ones(g).values(), gt, asg, w);
  CHECK(full == loss_gradient(fm, gt, asg, w));

  const std::vector<double> none(g.element_count(), 0.0);
  for (double d : gated_backward_check(fm, none, gt, asg, w)) CHECK(d == 0.0);

  std::vector<double> broken(g.element_count(), 1.0);
  broken[1] = 0.0;
  CHECK_THROWS_AS(gated_backward_check(fm, broken, gt, asg, w), ContractError);
}

TEST_CASE("gated gradient matches central differences of the masked loss") {
  Rng rng(2718);
  for (int trial = 0; trial < 20; ++trial) {
    const GridSpec g = oracle::random_spec(rng, 4, 2, 3);
    const auto fm = oracle::random_feature_map(g, rng);
    const auto gt = oracle::random_truth(g, rng, 3);
    const auto asg = assign(gt, g, 0.6);
    const LossWeights w;
    const auto mv = oracle::random_mask(g, rng);
    const auto analytic = gated_backward_check(fm, mv, gt, asg, w);

    const MaskMatrix m(g, mv);
    const auto masked = apply_mask(fm, m);
    const auto targets = build_targets(masked, gt, asg);
    std::vector<double> frozen;
    for (const auto& t : targets) frozen.push_back(t.iou_target);
    const auto numeric = oracle::central_differences(
        [&](std::vector<double> x) {
          for (std::size_t e = 0; e < x.size(); ++e) x[e] *= mv[e];
          return oracle::grand_total(g, x, gt, asg, w, &frozen);
        },
        std::vector<double>(fm.values().begin(), fm.values().end()));
    for (std::size_t e = 0; e < analytic.size(); ++e) {
      CHECK(oracle::relative_error(analytic[e], numeric[e]) <= 1e-4);
      if (mv[e] == 0.0) CHECK(analytic[e] == 0.0);
    }
    CHECK(analytic == kept_loss_gradient(fm, m, gt, asg, w));
  }
}

TEST_CASE("run_lrm_step modes") {
  Rng rng(5);
  GridSpec g;
  g.grid_size = 13;
  g.anchor_count = 5;
  g.class_count = 2;
  g.image_size = 416;
  g.anchors = {{1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 5}};
  const auto fm = oracle::random_feature_map(g, rng);
  const auto gt = oracle::random_truth(g, rng, 5);

  LrmConfig off;
  off.enabled = false;
  const auto all = run_lrm_step(fm, gt, {}, off);
  CHECK(all.mask.kept_count() == 845);
  CHECK(all.report.kept == 845);
  CHECK(all.report.suppressed == 0);

  LrmConfig k128;
  k128.hard_example_count = 128;
  k128.nms_threshold = std::nullopt;
  const auto step = run_lrm_step(fm, gt, {}, k128);
  CHECK(step.mask.kept_count() == 128);
  CHECK(step.report.suppressed == 0);
  CHECK(step.report.fg_total == static_cast<int>(step.assignment.responsible.size()));
  CHECK(step.report.fg_kept <= step.report.fg_total);

  // every kept loss is at least every dropped loss
  double min_kept = 1e300, max_dropped = -1.0;
  for (int k = 0; k < g.prediction_count(); ++k) {
    const double l = step.breakdown.per_prediction[static_cast<std::size_t>(k)].total;
    if (step.mask.kept(k)) min_kept = std::min(min_kept, l);
    else max_dropped = std::max(max_dropped, l);
  }
  CHECK(min_kept >= max_dropped);
}

TEST_CASE("selection is invariant to a positive loss scale") {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const GridSpec g = oracle::random_spec(rng, 5, 2, 3);
    const auto fm = oracle::random_feature_map(g, rng);
    const auto gt = oracle::random_truth(g, rng, 3);
    LrmConfig cfg;
    cfg.hard_example_count = static_cast<int>(rng.uniform_int(1, g.prediction_count()));
    const double s = rng.uniform(0.1, 10.0);
    const LossWeights w;
    const LossWeights ws{w.coord * s, w.obj * s, w.noobj * s, w.cls * s};
    const auto a = run_lrm_step(fm, gt, w, cfg);
    const auto b = run_lrm_step(fm, gt, ws, cfg);
    CHECK(std::equal(a.mask.values().begin(), a.mask.values().end(), b.mask.values().begin()));
  }
}

TEST_CASE("greedy suppression is not monotone in the threshold") {
  // A beats B only at the low threshold; once B survives it takes out C and D,
  // which A alone cannot reach.
  const GridSpec g = line_spec(4);
  const std::vector<Box> boxes{{0, -10.0 / 3.0, 10, 20.0 / 3.0}, {0, 0, 10, 10}, {-2, 0, 8, 10}, {2, 0, 12, 10}};
  const auto ranked = rank(breakdown_of({4.0, 3.0, 2.0, 1.0}), views_for(g, boxes, {0, 0, 0, 0}));
  CHECK(flats(dedup_by_loss_nms(ranked, 0.45)) == std::vector<int>{0, 2, 3});
  CHECK(flats(dedup_by_loss_nms(ranked, 0.6)) == std::vector<int>{0, 1});
}

TEST_CASE("every suppressed prediction has a higher-loss same-class overlap") {
  Rng rng(303);
  for (int trial = 0; trial < 50; ++trial) {
    const GridSpec g = oracle::random_spec(rng, 6, 3, 2);
    const auto fm = oracle::random_feature_map(g, rng, 3.0);
    const auto gt = oracle::random_truth(g, rng, 3);
    const auto ranked = rank(per_prediction_loss(fm, gt, assign(gt, g, 0.6), {}), decode_all(fm));
    const double t = rng.uniform(0.1, 1.0);
    std::set<int> kept;
    for (const auto& r : dedup_by_loss_nms(ranked, t)) kept.insert(r.flat);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (kept.count(ranked[i].flat)) continue;
      bool covered = false;
      for (std::size_t j = 0; j < i && !covered; ++j) {
        covered = ranked[j].view.predicted_class == ranked[i].view.predicted_class &&
                  iou(ranked[j].view.box, ranked[i].view.box) >= t;
      }
      CHECK(covered);
    }
  }
}

TEST_CASE("selection CSV") {
  SelectionReport r;
  r.image_id = "7:000003";
  r.prediction_count = 128;
  r.suppressed = 4;
  r.kept = 64;
  r.fg_total = 3;
  r.fg_kept = 2;
  std::ostringstream os;
  write_selection_csv(os, std::vector<SelectionReport>{r});
  CHECK(os.str() == "image_id,N,n_suppressed,n_kept,fg_total,fg_kept\n7:000003,128,4,64,3,2\n");
}

TEST_CASE("LRM config validation") {
  LrmConfig c;
  CHECK_NOTHROW(c.validate());
  c.nms_threshold = 0.0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c.nms_threshold = 1.5;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c.nms_threshold = std::nullopt;
  c.hard_example_count = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
}
