#include <doctest.h>

#include <sstream>

#include "lrm/error.hpp"
#include "lrm/experiment.hpp"
#include "lrm/run_config.hpp"

using namespace lrm;

namespace {

// 4x4 grid, 2 anchors: N = 32 predictions per image.
RunConfig small_config() {
  return parse_run_config(
      "grid.size = 4\n"
      "grid.image_size = 32\n"
      "grid.classes = 2\n"
      "grid.anchors = 1x1,2x2\n"
      "net.hidden = 8\n"
      "opt.batch = 2\n"
      "opt.iters = 6\n"
      "opt.lr = 0.001\n"
      "data.count = 12\n"
      "data.split = 0.75\n"
      "data.objects_max = 2\n"
      "data.max_cell_fraction = 0.25\n"
      "lrm.k = 8\n"
      "lrm.nms = none\n");
}

std::string log_csv(const TrainResult& r) {
  std::ostringstream os;
  write_train_log_csv(os, r.log);
  return os.str();
}

}  // namespace

TEST_CASE("data loading and split") {
  const auto cfg = small_config();
  const auto ds = load_data(cfg);
  CHECK(ds.samples.size() == 12);
  CHECK(ds.classes == std::vector<std::string>{"square", "wide"});
  const auto [train_set, test_set] = train_test_split(cfg, ds);
  CHECK(train_set.size() == 9);
  CHECK(test_set.size() == 3);
}

TEST_CASE("kept counts follow the LRM settings") {
  auto cfg = small_config();
  const auto ds = load_data(cfg);
  const auto [train_set, test_set] = train_test_split(cfg, ds);

  const auto hard = train(cfg, train_set);
  REQUIRE(hard.log.size() == 6);
  for (const auto& row : hard.log) CHECK(row.kept_count == 8.0);
  CHECK(hard.selections.size() == 12);
  for (const auto& s : hard.selections) {
    CHECK(s.kept == 8);
    CHECK(s.prediction_count == 32);
  }
  CHECK(hard.selections[0].image_id.rfind("1:", 0) == 0);

  cfg.lrm.enabled = false;
  const auto all = train(cfg, train_set);
  for (const auto& row : all.log) CHECK(row.kept_count == 32.0);
}

TEST_CASE("training is deterministic") {
  const auto cfg = small_config();
  const auto ds = load_data(cfg);
  const auto [train_set, test_set] = train_test_split(cfg, ds);
  const auto a = train(cfg, train_set);
  const auto b = train(cfg, train_set);
  CHECK(a.params == b.params);
  CHECK(log_csv(a) == log_csv(b));

  auto other = cfg;
  other.seed = 2;
  CHECK_FALSE(train(other, train_set).params == a.params);
}

TEST_CASE("K at least N without NMS reproduces LRM-off training bit for bit") {
  auto cfg = small_config();
  cfg.lrm.hard_example_count = 32;
  const auto ds = load_data(cfg);
  const auto [train_set, test_set] = train_test_split(cfg, ds);

  std::vector<ParamGradients> on_grads, off_grads;
  const auto on = train(cfg, train_set, [&](int, const ParamGradients& g) { on_grads.push_back(g); });
  cfg.lrm.enabled = false;
  const auto off = train(cfg, train_set, [&](int, const ParamGradients& g) { off_grads.push_back(g); });
  CHECK(on.params == off.params);
  CHECK(log_csv(on) == log_csv(off));
  REQUIRE(on_grads.size() == off_grads.size());
  for (std::size_t i = 0; i < on_grads.size(); ++i) CHECK(on_grads[i].values == off_grads[i].values);
}

TEST_CASE("non-finite loss aborts with the iteration") {
  auto cfg = small_config();
  cfg.learning_rate = 1e6;
  cfg.iters = 50;
  const auto ds = load_data(cfg);
  const auto [train_set, test_set] = train_test_split(cfg, ds);
  try {
    train(cfg, train_set);
    FAIL("expected divergence");
  } catch (const RuntimeError& e) {
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("evaluation of an untrained model is a valid mAP") {
  const auto cfg = small_config();
  const auto ds = load_data(cfg);
  const auto [train_set, test_set] = train_test_split(cfg, ds);
  const auto r = evaluate_model(init_params(cfg.grid, cfg.hidden, 1), test_set, cfg);
  CHECK(r.map >= 0.0);
  CHECK(r.map <= 1.0);
}

TEST_CASE("checkpoint compatibility check") {
  const auto cfg = small_config();
  const auto p = init_params(cfg.grid, cfg.hidden, 1);
  CHECK_NOTHROW(check_checkpoint_matches(p, cfg));
  auto other = cfg;
  other.hidden = 9;
  other.grid.class_count = 3;
  try {
    check_checkpoint_matches(p, other);
    FAIL("expected an error");
  } catch (const RuntimeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("net.hidden") != std::string::npos);
    CHECK(msg.find("grid.classes") != std::string::npos);
  }
}

TEST_CASE("sweep cell layout") {
  const auto one = sweep_cells({64}, {std::nullopt}, {1});
  REQUIRE(one.size() == 2);
  CHECK(one[0].baseline);
  CHECK_FALSE(one[1].baseline);
  CHECK(one[1].k == 64);

  const auto full = sweep_cells({256, 64, 128}, {std::nullopt, 0.7, 0.5}, {3, 1, 2});
  REQUIRE(full.size() == 30);
  for (int i = 0; i < 3; ++i) CHECK(full[static_cast<std::size_t>(i)].baseline);
  CHECK(full[0].seed == 1);
  CHECK(full[3].k == 64);
  CHECK(full[3].nms == 0.5);
  CHECK(full[9].k == 64);
  CHECK_FALSE(full[9].nms.has_value());
  CHECK(full[29].k == 256);
}

TEST_CASE("sweep runs, writes tidy CSVs and is independent of the job count") {
  auto cfg = small_config();
  cfg.iters = 3;
  const auto ds = load_data(cfg);
  const auto cells = sweep_cells({4, 8}, {0.5, std::nullopt}, {1, 2});
  const auto serial = run_sweep(cfg, ds, cells, 1);
  const auto parallel = run_sweep(cfg, ds, cells, 3);
  REQUIRE(serial.size() == 10);

  std::ostringstream a, b, s;
  write_sweep_csv(a, serial, ds.classes);
  write_sweep_csv(b, parallel, ds.classes);
  CHECK(a.str() == b.str());
  std::istringstream lines(a.str());
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  CHECK(header == "k,nms,seed,map,ap_square,ap_wide,status");
  CHECK(first.rfind(",,1,", 0) == 0);
  CHECK(first.ends_with(",ok"));

  write_sweep_summary_csv(s, serial, ds.classes);
  std::istringstream summary(s.str());
  std::getline(summary, header);
  CHECK(header == "k,nms,seeds,median_map,median_ap_square,median_ap_wide");
  int rows = 0;
  for (std::string line; std::getline(summary, line);) ++rows;
  CHECK(rows == 5);
}

TEST_CASE("a failing sweep cell is recorded and the rest continue") {
  auto cfg = small_config();
  cfg.learning_rate = 1e6;
  cfg.iters = 50;
  const auto ds = load_data(cfg);
  const auto rows = run_sweep(cfg, ds, sweep_cells({8}, {std::nullopt}, {1}), 1);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK_FALSE(r.ok);
    CHECK(r.error.find("iteration") != std::string::npos);
  }
  std::ostringstream os;
  write_sweep_csv(os, rows, ds.classes);
  CHECK(os.str().find("error: ") != std::string::npos);
}

TEST_CASE("median") {
  CHECK(median({3.0}) == 3.0);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}
