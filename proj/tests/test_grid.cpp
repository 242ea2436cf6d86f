#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lrm/error.hpp"
#include "lrm/grid.hpp"
#include "oracles.hpp"

using namespace lrm;

namespace {

GridSpec spec_of(int s, int b, int c, int image, std::vector<Anchor> anchors) {
  GridSpec g;
  g.grid_size = s;
  g.anchor_count = b;
  g.class_count = c;
  g.image_size = image;
  g.anchors = std::move(anchors);
  return g;
}

}  // namespace

TEST_CASE("grid spec derived sizes and validation") {
  const GridSpec g = spec_of(13, 5, 20, 416, std::vector<Anchor>(5, Anchor{1, 1}));
  CHECK(g.stride() == 32);
  CHECK(g.channels_per_prediction() == 25);
  CHECK(g.channels() == 125);
  CHECK(g.prediction_count() == 845);
  CHECK_NOTHROW(g.validate());

  CHECK_THROWS_AS(spec_of(5, 1, 1, 64, {{1, 1}}).validate(), ContractError);        // 64 % 5 != 0
  CHECK_THROWS_AS(spec_of(4, 2, 1, 64, {{1, 1}}).validate(), ContractError);        // anchor count
  CHECK_THROWS_AS(spec_of(4, 1, 1, 64, {{0.0, 1}}).validate(), ContractError);      // non-positive anchor
  CHECK_THROWS_AS(spec_of(4, 1, 0, 64, {{1, 1}}).validate(), ContractError);
}

TEST_CASE("channel layout puts anchor groups contiguously") {
  const GridSpec g = spec_of(2, 2, 3, 16, {{1, 1}, {2, 2}});
  std::vector<double> v(g.element_count());
  for (std::size_t e = 0; e < v.size(); ++e) v[e] = static_cast<double>(e);
  const FeatureMap fm(g, v);
  // element (i, j, c) lives at ((i * S + j) * B*(5+C)) + c
  CHECK(fm.at(1, 0, 0) == 2 * 16);
  CHECK(fm.at(0, 1, 9) == 16 + 9);
  // prediction (0,1,1): flat 3, group starts at channel 8 of cell (0,1)
  const int flat = flat_index(g, {0, 1, 1});
  CHECK(flat == 3);
  CHECK(fm.group(flat)[channel::kTx] == fm.at(0, 1, 8));
  CHECK(fm.group(flat)[channel::kClass0 + 2] == fm.at(0, 1, 15));
  for (int k = 0; k < g.prediction_count(); ++k) CHECK(flat_index(g, index_of(g, k)) == k);
}

TEST_CASE("feature map rejects bad shapes and non-finite values") {
  const GridSpec g = spec_of(2, 1, 1, 8, {{1, 1}});
  CHECK_THROWS_AS(FeatureMap(g, std::vector<double>(5, 0.0)), ContractError);
  std::vector<double> v(g.element_count(), 0.0);
  v[6 + 4] = std::nan("");
  try {
    FeatureMap fm(g, v);
    FAIL("expected an error");
  } catch (const RuntimeError& e) {
    CHECK(std::string(e.what()).find("(0,1,4)") != std::string::npos);
  }
}

TEST_CASE("decode of an all-zero map") {
  const GridSpec g = spec_of(2, 1, 4, 64, {{1, 1}});
  const auto fm = FeatureMap::zeros(g);
  const auto v = decode(fm, {0, 0, 0});
  CHECK(v.box.center_x() == 16.0);
  CHECK(v.box.center_y() == 16.0);
  CHECK(v.box.width() == 32.0);
  CHECK(v.box.height() == 32.0);
  CHECK(v.objectness == 0.5);
  for (double s : v.class_scores) CHECK(s == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(v.predicted_class == 0);
}

TEST_CASE("decode saturation and objectness") {
  const GridSpec g = spec_of(2, 1, 2, 64, {{1, 1}});
  std::vector<double> raw(g.element_count(), 0.0);
  raw[channel::kTx] = 40.0;
  raw[channel::kTy] = 40.0;
  raw[channel::kObj] = 2.0;
  const auto v = decode(FeatureMap(g, raw), {0, 0, 0});
  CHECK(v.box.center_x() <= 32.0);  // sigmoid(40) rounds to 1 in double
  CHECK(v.box.center_x() == doctest::Approx(32.0).epsilon(1e-12));
  CHECK(v.box.center_y() == doctest::Approx(32.0).epsilon(1e-12));
  CHECK(v.objectness == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(v.objectness == doctest::Approx(0.8808).epsilon(1e-4));
}

TEST_CASE("decode rejects out-of-range indices") {
  const GridSpec g = spec_of(2, 2, 1, 8, {{1, 1}, {1, 1}});
  const auto fm = FeatureMap::zeros(g);
  CHECK_THROWS_AS(decode(fm, {2, 0, 0}), ContractError);
  CHECK_THROWS_AS(decode(fm, {0, -1, 0}), ContractError);
  CHECK_THROWS_AS(decode(fm, {0, 0, 2}), ContractError);
}

TEST_CASE("decode_all count, order and agreement with decode") {
  CHECK(decode_all(FeatureMap::zeros(spec_of(2, 2, 1, 8, {{1, 1}, {2, 2}}))).size() == 8);
  CHECK(decode_all(FeatureMap::zeros(spec_of(13, 5, 2, 416, std::vector<Anchor>(5, Anchor{1, 1})))).size() == 845);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const GridSpec g = oracle::random_spec(rng);
    const auto fm = oracle::random_feature_map(g, rng, 4.0);
    const auto views = decode_all(fm);
    REQUIRE(views.size() == static_cast<std::size_t>(g.prediction_count()));
    CHECK(views[0].index == PredictionIndex{0, 0, 0});
    for (int k = 0; k < g.prediction_count(); ++k) {
      const auto single = decode(fm, index_of(g, k));
      const auto& v = views[static_cast<std::size_t>(k)];
      CHECK(v.index == single.index);
      CHECK(v.box == single.box);
      CHECK(v.objectness == single.objectness);
      CHECK(v.class_scores == single.class_scores);
      // center stays inside the prediction's own cell
      const double stride = g.stride();
      CHECK(v.box.center_x() > v.index.col * stride);
      CHECK(v.box.center_x() < (v.index.col + 1) * stride);
      CHECK(v.box.center_y() > v.index.row * stride);
      CHECK(v.box.center_y() < (v.index.row + 1) * stride);
      CHECK(v.predicted_class >= 0);
      CHECK(v.predicted_class < g.class_count);
    }
  }
}

TEST_CASE("mask construction") {
  const GridSpec g = spec_of(2, 1, 1, 8, {{1, 1}});
  const auto ones = mask_all_ones(g);
  CHECK(ones.kept_count() == 4);

  std::vector<PredictionIndex> all;
  for (int k = 0; k < g.prediction_count(); ++k) all.push_back(index_of(g, k));
  const auto full = mask_from_selection(g, all);
  CHECK(std::equal(full.values().begin(), full.values().end(), ones.values().begin(), ones.values().end()));

  const auto none = mask_from_selection(g, {});
  for (double v : none.values()) CHECK(v == 0.0);

  const std::vector<PredictionIndex> one{{0, 1, 0}};
  const auto m = mask_from_selection(g, one);
  int ones_count = 0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      for (int c = 0; c < g.channels(); ++c) {
        if (m.at(i, j, c) == 1.0) {
          ++ones_count;
          CHECK(i == 0);
          CHECK(j == 1);
        }
      }
    }
  }
  CHECK(ones_count == 6);

  const std::vector<PredictionIndex> bad{{2, 0, 0}};
  CHECK_THROWS_AS(mask_from_selection(g, bad), ContractError);
}

TEST_CASE("masks reject non-binary and non-atomic values") {
  const GridSpec g = spec_of(1, 1, 1, 4, {{1, 1}});
  std::vector<double> v(6, 1.0);
  v[3] = 0.0;
  CHECK_THROWS_AS(MaskMatrix(g, v), ContractError);
  CHECK_THROWS_AS(MaskMatrix(g, std::vector<double>(6, 0.5)), ContractError);
}

TEST_CASE("random selections produce atomic masks") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const GridSpec g = oracle::random_spec(rng, 5, 3, 4);
    std::vector<PredictionIndex> kept;
    for (int k = 0; k < g.prediction_count(); ++k) {
      if (rng.uniform() < 0.4) kept.push_back(index_of(g, k));
    }
    const auto m = mask_from_selection(g, kept);
    CHECK_NOTHROW(check_mask_atomic(g, m.values()));
    CHECK(m.kept_count() == static_cast<int>(kept.size()));
    for (const auto& idx : kept) CHECK(m.kept(flat_index(g, idx)));
  }
}
