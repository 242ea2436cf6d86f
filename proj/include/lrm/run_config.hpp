#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "lrm/data.hpp"
#include "lrm/eval.hpp"
#include "lrm/grid.hpp"
#include "lrm/loss.hpp"
#include "lrm/mining.hpp"

namespace lrm {

/// Everything a train/eval/sweep run depends on. Serialized as flat
/// `key = value` lines; see docs/formats.md for the key list.
struct RunConfig {
  GridSpec grid{8, 2, 3, {{1.5, 1.5}, {2.5, 2.5}}, 64};
  int hidden = 32;

  LossWeights weights;
  double ignore_iou = 0.6;

  LrmConfig lrm;

  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch = 8;
  int iters = 2000;

  std::string data_dir;  // empty: synthesize in memory from the scene keys
  int data_count = 600;
  double split_ratio = 0.9;
  std::uint64_t data_seed = 7;
  int objects_min = 1;
  int objects_max = 4;
  double object_size_min = 0.12;
  double object_size_max = 0.25;
  double noise = 0.2;
  double max_object_cell_fraction = 0.1;
  double overlap_budget = 0.0;

  EvalConfig eval;

  std::uint64_t seed = 1;

  /// Scene generator settings implied by the grid and data keys.
  SceneConfig scene() const;

  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses `key = value` lines. '#' starts a comment; blank lines are
/// ignored; unknown keys and bad values raise ParseError.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its effective value, one per line, in a fixed order.
/// Parsing the result reproduces the config exactly.
std::string format_run_config(const RunConfig& cfg);

/// Parses a `none` / real NMS threshold value.
std::optional<double> parse_nms_value(std::string_view text);
std::string format_nms_value(std::optional<double> nms);

}  // namespace lrm
