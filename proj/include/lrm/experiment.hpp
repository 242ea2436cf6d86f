#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lrm/data.hpp"
#include "lrm/eval.hpp"
#include "lrm/mining.hpp"
#include "lrm/net.hpp"
#include "lrm/run_config.hpp"

namespace lrm {

/// Dataset named by the config: read from data.dir, or synthesized from the
/// scene keys when data.dir is empty.
Dataset load_data(const RunConfig& cfg);

/// Train/test partition of a dataset using data.split and data.seed.
std::pair<std::vector<Sample>, std::vector<Sample>> train_test_split(const RunConfig& cfg, const Dataset& ds);

struct TrainLogRow {
  int iter = 0;
  double grand_total = 0.0;       // full (unmasked) loss, mean over the batch
  double kept_count = 0.0;        // mean kept predictions per image
  double fg_kept_fraction = 0.0;  // foreground share of all kept predictions in the batch
};

struct TrainResult {
  DetectorParams params;
  std::vector<TrainLogRow> log;
  std::vector<SelectionReport> selections;  // one per image per iteration
};

/// Invoked after the batch gradient is formed and before the update.
using StepObserver = std::function<void(int iter, const ParamGradients& grads)>;

/// forward -> run_lrm_step -> gated gradient -> backward, averaged over the
/// batch, then one SGD-momentum update. Batches are drawn from seeded epoch
/// shuffles. Throws RuntimeError naming the iteration on a non-finite loss.
TrainResult train(const RunConfig& cfg, const std::vector<Sample>& train_set, const StepObserver& observer = {});

/// Inference with no mask: raw detections per test image, then evaluate().
EvalResult evaluate_model(const DetectorParams& params, const std::vector<Sample>& test_set, const RunConfig& cfg);

void write_train_log_csv(std::ostream& out, const std::vector<TrainLogRow>& log);

/// Throws RuntimeError naming every mismatched field when the checkpoint's
/// grid or hidden size disagrees with the config.
void check_checkpoint_matches(const DetectorParams& params, const RunConfig& cfg);

struct SweepCell {
  bool baseline = false;
  int k = 0;
  std::optional<double> nms;
  std::uint64_t seed = 0;
};

struct SweepRow {
  SweepCell cell;
  bool ok = true;
  std::string error;
  double map = 0.0;
  std::map<int, double> per_class_ap;
};

/// All (k, nms, seed) cells plus one baseline per seed, ordered baseline
/// first, then by k, nms (none last) and seed.
std::vector<SweepCell> sweep_cells(const std::vector<int>& k_list, const std::vector<std::optional<double>>& nms_list,
                                   const std::vector<std::uint64_t>& seeds);

/// Trains and evaluates every cell, `jobs` cells at a time. A failing cell
/// is recorded in its row and the sweep continues.
std::vector<SweepRow> run_sweep(const RunConfig& cfg, const Dataset& ds, const std::vector<SweepCell>& cells,
                                int jobs);

/// k,nms,seed,map,<class APs>,status. Baseline rows leave k and nms empty.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, const std::vector<std::string>& classes);

/// Median over seeds for each (k, nms) cell and the baseline.
void write_sweep_summary_csv(std::ostream& out, const std::vector<SweepRow>& rows,
                             const std::vector<std::string>& classes);

double median(std::vector<double> values);

}  // namespace lrm
