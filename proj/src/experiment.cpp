#include "lrm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ostream>
#include <thread>

#include "lrm/csv.hpp"
#include "lrm/error.hpp"
#include "lrm/random.hpp"

namespace lrm {

Dataset load_data(const RunConfig& cfg) {
  if (!cfg.data_dir.empty()) {
    Dataset ds = read_dataset(cfg.data_dir);
    if (static_cast<int>(ds.classes.size()) != cfg.grid.class_count) {
      throw RuntimeError("dataset lists " + std::to_string(ds.classes.size()) + " classes but grid.classes is " +
                         std::to_string(cfg.grid.class_count));
    }
    for (const auto& s : ds.samples) {
      if (s.image.size != cfg.grid.image_size) {
        throw RuntimeError("image " + s.id + " is " + std::to_string(s.image.size) + " pixels, grid.image_size is " +
                           std::to_string(cfg.grid.image_size));
      }
    }
    if (ds.samples.size() < 2) throw RuntimeError("dataset " + cfg.data_dir + " needs at least 2 samples");
    return ds;
  }
  return Dataset{default_class_names(cfg.grid.class_count), generate(cfg.scene(), cfg.data_count)};
}

std::pair<std::vector<Sample>, std::vector<Sample>> train_test_split(const RunConfig& cfg, const Dataset& ds) {
  return split(ds.samples, cfg.split_ratio, derive_seed(cfg.data_seed, 0x5b117));
}

TrainResult train(const RunConfig& cfg, const std::vector<Sample>& train_set, const StepObserver& observer) {
  cfg.validate();
  if (train_set.empty()) throw RuntimeError("training set is empty");
  TrainResult result;
  result.params = init_params(cfg.grid, cfg.hidden, cfg.seed);
  SgdMomentum opt{cfg.learning_rate, cfg.momentum, {}};

  Rng order_rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();

  for (int iter = 1; iter <= cfg.iters; ++iter) {
    ParamGradients grads = ParamGradients::zeros_like(result.params);
    double loss_sum = 0.0;
    long kept_sum = 0;
    long fg_kept_sum = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        order_rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      const Sample& s = train_set[order[cursor++]];
      const ForwardResult fwd = forward(s.image, result.params);
      LrmStep step = run_lrm_step(fwd.feature_map, s.truth, cfg.weights, cfg.lrm, cfg.ignore_iou);
      if (!std::isfinite(step.breakdown.grand_total)) {
        throw RuntimeError("non-finite loss at iteration " + std::to_string(iter) + " (sample " + s.id + ")");
      }
      const auto g = gated_gradient(fwd.feature_map, step.mask, s.truth, step.assignment, cfg.weights);
      grads.add(backward(g, fwd.activations, result.params));
      loss_sum += step.breakdown.grand_total;
      kept_sum += step.report.kept;
      fg_kept_sum += step.report.fg_kept;
      step.report.image_id = std::to_string(iter) + ":" + s.id;
      result.selections.push_back(std::move(step.report));
    }
    grads.scale(1.0 / cfg.batch);
    if (observer) observer(iter, grads);
    try {
      sgd_step(result.params, grads, opt);
    } catch (const RuntimeError& e) {
      throw RuntimeError("iteration " + std::to_string(iter) + ": " + e.what());
    }
    result.log.push_back({iter, loss_sum / cfg.batch, static_cast<double>(kept_sum) / cfg.batch,
                          kept_sum == 0 ? 0.0 : static_cast<double>(fg_kept_sum) / static_cast<double>(kept_sum)});
  }
  return result;
}

EvalResult evaluate_model(const DetectorParams& params, const std::vector<Sample>& test_set, const RunConfig& cfg) {
  std::map<std::string, std::vector<Detection>> outputs;
  GroundTruthSet gt;
  for (const auto& s : test_set) {
    outputs[s.id] = detections_from_feature_map(forward(s.image, params).feature_map, s.id);
    gt[s.id] = s.truth;
  }
  return evaluate(outputs, gt, params.spec.class_count, cfg.eval);
}

void write_train_log_csv(std::ostream& out, const std::vector<TrainLogRow>& log) {
  CsvWriter csv(out);
  csv.row({"iter", "grand_total", "kept_count", "fg_kept_fraction"});
  for (const auto& r : log) {
    csv.row({std::to_string(r.iter), format_real(r.grand_total, 9), format_real(r.kept_count, 3),
             format_real(r.fg_kept_fraction, 6)});
  }
}

void check_checkpoint_matches(const DetectorParams& params, const RunConfig& cfg) {
  std::vector<std::string> problems;
  auto cmp = [&](const char* what, int have, int want) {
    if (have != want) {
      problems.push_back(std::string(what) + ": checkpoint " + std::to_string(have) + ", config " +
                         std::to_string(want));
    }
  };
  cmp("grid.size", params.spec.grid_size, cfg.grid.grid_size);
  cmp("grid.image_size", params.spec.image_size, cfg.grid.image_size);
  cmp("grid.classes", params.spec.class_count, cfg.grid.class_count);
  cmp("anchor count", params.spec.anchor_count, cfg.grid.anchor_count);
  cmp("net.hidden", params.hidden, cfg.hidden);
  if (params.spec.anchor_count == cfg.grid.anchor_count && !(params.spec.anchors == cfg.grid.anchors)) {
    problems.push_back("grid.anchors differ");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw RuntimeError(msg);
  }
}

std::vector<SweepCell> sweep_cells(const std::vector<int>& k_list, const std::vector<std::optional<double>>& nms_list,
                                   const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepCell> cells;
  for (auto seed : seeds) cells.push_back({true, 0, std::nullopt, seed});
  for (int k : k_list) {
    for (const auto& nms : nms_list) {
      for (auto seed : seeds) cells.push_back({false, k, nms, seed});
    }
  }
  auto key = [](const SweepCell& c) {
    return std::make_tuple(!c.baseline, c.k, !c.nms.has_value(), c.nms.value_or(0.0), c.seed);
  };
  std::stable_sort(cells.begin(), cells.end(), [&](const SweepCell& a, const SweepCell& b) { return key(a) < key(b); });
  return cells;
}

std::vector<SweepRow> run_sweep(const RunConfig& cfg, const Dataset& ds, const std::vector<SweepCell>& cells,
                                int jobs) {
  const auto [train_set, test_set] = train_test_split(cfg, ds);
  std::vector<SweepRow> rows(cells.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepRow& row = rows[i];
      row.cell = cells[i];
      try {
        RunConfig run = cfg;
        run.seed = cells[i].seed;
        run.lrm.enabled = !cells[i].baseline;
        if (!cells[i].baseline) {
          run.lrm.hard_example_count = cells[i].k;
          run.lrm.nms_threshold = cells[i].nms;
        }
        const auto trained = train(run, train_set);
        const auto result = evaluate_model(trained.params, test_set, run);
        row.map = result.map;
        row.per_class_ap = result.per_class_ap;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };

  const int n_threads = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(1, cells.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

namespace {

std::vector<std::string> ap_header(const std::vector<std::string>& classes) {
  std::vector<std::string> h;
  for (const auto& c : classes) h.push_back("ap_" + c);
  return h;
}

}  // namespace

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, const std::vector<std::string>& classes) {
  CsvWriter csv(out);
  std::vector<std::string> header{"k", "nms", "seed", "map"};
  for (auto& h : ap_header(classes)) header.push_back(h);
  header.push_back("status");
  csv.row(header);
  for (const auto& r : rows) {
    std::vector<std::string> f;
    f.push_back(r.cell.baseline ? "" : std::to_string(r.cell.k));
    f.push_back(r.cell.baseline ? "" : format_nms_value(r.cell.nms));
    f.push_back(std::to_string(r.cell.seed));
    f.push_back(r.ok ? format_real(r.map) : "");
    for (int c = 0; c < static_cast<int>(classes.size()); ++c) {
      const auto it = r.per_class_ap.find(c);
      f.push_back(r.ok && it != r.per_class_ap.end() ? format_real(it->second) : "");
    }
    f.push_back(r.ok ? "ok" : "error: " + r.error);
    csv.row(f);
  }
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_sweep_summary_csv(std::ostream& out, const std::vector<SweepRow>& rows,
                             const std::vector<std::string>& classes) {
  CsvWriter csv(out);
  std::vector<std::string> header{"k", "nms", "seeds", "median_map"};
  for (auto& h : ap_header(classes)) header.push_back("median_" + h);
  csv.row(header);

  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    auto same = [&](const SweepRow& a, const SweepRow& b) {
      return a.cell.baseline == b.cell.baseline && a.cell.k == b.cell.k && a.cell.nms == b.cell.nms;
    };
    std::vector<double> maps;
    std::vector<std::vector<double>> aps(classes.size());
    for (; j < rows.size() && same(rows[i], rows[j]); ++j) {
      if (!rows[j].ok) continue;
      maps.push_back(rows[j].map);
      for (std::size_t c = 0; c < classes.size(); ++c) {
        const auto it = rows[j].per_class_ap.find(static_cast<int>(c));
        if (it != rows[j].per_class_ap.end()) aps[c].push_back(it->second);
      }
    }
    std::vector<std::string> f;
    f.push_back(rows[i].cell.baseline ? "" : std::to_string(rows[i].cell.k));
    f.push_back(rows[i].cell.baseline ? "" : format_nms_value(rows[i].cell.nms));
    f.push_back(std::to_string(maps.size()));
    f.push_back(maps.empty() ? "" : format_real(median(maps)));
    for (const auto& a : aps) f.push_back(a.empty() ? "" : format_real(median(a)));
    csv.row(f);
    i = j;
  }
}

}  // namespace lrm
