// lrm: dataset generation, training with or without Loss Rank Mining,
// evaluation and hyperparameter sweeps. Exit codes: 0 ok, 1 usage or
// configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lrm/csv.hpp"
#include "lrm/data.hpp"
#include "lrm/error.hpp"
#include "lrm/experiment.hpp"
#include "lrm/net.hpp"
#include "lrm/run_config.hpp"

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

lrm::RunConfig config_from(const std::string& path) {
  if (path.empty()) return lrm::RunConfig{};
  try {
    return lrm::load_run_config(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void echo_config(const lrm::RunConfig& cfg, const fs::path& out_dir) {
  const std::string text = lrm::format_run_config(cfg);
  std::cout << "# effective configuration\n" << text << std::flush;
  std::ofstream f(out_dir / "config.effective");
  if (!f) throw lrm::RuntimeError("cannot write " + (out_dir / "config.effective").string());
  f << text;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw lrm::RuntimeError("cannot create output directory " + dir.string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw lrm::RuntimeError("cannot write " + path.string());
  return f;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& text, Parse parse, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse(item));
    } catch (const std::exception&) {
      throw UsageError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError(std::string(what) + " is empty");
  return out;
}

int cmd_gen_data(const std::string& config_path, int count, const std::string& out) {
  lrm::RunConfig cfg = config_from(config_path);
  if (count <= 0) count = cfg.data_count;
  const fs::path dir(out);
  make_dir(dir);
  echo_config(cfg, dir);

  const auto samples = lrm::generate(cfg.scene(), count);
  const auto classes = lrm::default_class_names(cfg.grid.class_count);
  lrm::write_dataset(dir, samples, classes);

  std::vector<long> histogram(classes.size(), 0);
  long responsible = 0;
  for (const auto& s : samples) {
    for (int c : s.truth.classes) ++histogram[static_cast<std::size_t>(c)];
    responsible += static_cast<long>(lrm::assign(s.truth, cfg.grid, cfg.ignore_iou).responsible.size());
  }
  const double fg_fraction =
      static_cast<double>(responsible) / (static_cast<double>(count) * cfg.grid.prediction_count());
  std::cout << "samples: " << count << "\n";
  for (std::size_t c = 0; c < classes.size(); ++c) std::cout << "class " << classes[c] << ": " << histogram[c] << "\n";
  std::cout << "foreground prediction fraction: " << lrm::format_real(fg_fraction) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, const std::string& lrm_override) {
  lrm::RunConfig cfg = config_from(config_path);
  if (lrm_override == "on") cfg.lrm.enabled = true;
  if (lrm_override == "off") cfg.lrm.enabled = false;
  const fs::path dir(out);
  make_dir(dir);
  echo_config(cfg, dir);

  const auto ds = lrm::load_data(cfg);
  const auto [train_set, test_set] = lrm::train_test_split(cfg, ds);
  const auto result = lrm::train(cfg, train_set);
  {
    auto f = open_out(dir / "train_log.csv");
    lrm::write_train_log_csv(f, result.log);
  }
  {
    auto f = open_out(dir / "selection.csv");
    lrm::write_selection_csv(f, result.selections);
  }
  {
    auto f = open_out(dir / "checkpoint.txt");
    lrm::write_checkpoint(f, result.params);
  }
  if (!result.log.empty()) {
    std::cout << "final grand_total: " << lrm::format_real(result.log.back().grand_total) << "\n";
  }
  std::cout << "checkpoint: " << (dir / "checkpoint.txt").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, const std::string& data,
             const std::string& out) {
  lrm::RunConfig cfg = config_from(config_path);
  if (!data.empty()) cfg.data_dir = data;
  const fs::path dir(out);
  make_dir(dir);
  echo_config(cfg, dir);

  std::ifstream ck(checkpoint);
  if (!ck) throw lrm::RuntimeError("cannot open checkpoint " + checkpoint);
  const auto params = lrm::read_checkpoint(ck);
  lrm::check_checkpoint_matches(params, cfg);

  const auto ds = lrm::load_data(cfg);
  const auto [train_set, test_set] = lrm::train_test_split(cfg, ds);
  const auto result = lrm::evaluate_model(params, test_set, cfg);
  {
    auto f = open_out(dir / "eval.csv");
    lrm::write_eval_csv(f, result, ds.classes);
  }
  for (const auto& [c, curve] : result.pr_curves) {
    auto f = open_out(dir / ("pr_" + ds.classes[static_cast<std::size_t>(c)] + ".csv"));
    lrm::write_pr_csv(f, curve);
  }
  for (const auto& note : result.notes) std::cout << "note: " << note << "\n";
  std::cout << "mAP: " << lrm::format_real(result.map) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& k_list, const std::string& nms_list,
              const std::string& seeds, const std::string& out, int jobs) {
  lrm::RunConfig cfg = config_from(config_path);
  const auto ks = parse_list<int>(
      k_list,
      [](const std::string& s) {
        const int k = std::stoi(s);
        if (k < 1) throw std::invalid_argument("k");
        return k;
      },
      "--k-list");
  const auto nms = parse_list<std::optional<double>>(
      nms_list, [](const std::string& s) { return lrm::parse_nms_value(s); }, "--nms-list");
  const auto seed_values = parse_list<std::uint64_t>(
      seeds,
      [](const std::string& s) {
        if (s.empty() || s[0] == '-') throw std::invalid_argument("seed");
        return static_cast<std::uint64_t>(std::stoull(s));
      },
      "--seeds");
  const fs::path dir(out);
  make_dir(dir);
  echo_config(cfg, dir);

  const auto ds = lrm::load_data(cfg);
  const auto rows = lrm::run_sweep(cfg, ds, lrm::sweep_cells(ks, nms, seed_values), jobs);
  {
    auto f = open_out(dir / "sweep.csv");
    lrm::write_sweep_csv(f, rows, ds.classes);
  }
  {
    auto f = open_out(dir / "sweep_summary.csv");
    lrm::write_sweep_summary_csv(f, rows, ds.classes);
  }
  int failed = 0;
  for (const auto& r : rows) {
    if (!r.ok) {
      ++failed;
      std::cerr << "cell failed: " << r.error << "\n";
    }
  }
  std::cout << "cells: " << rows.size() << ", failed: " << failed << "\n";
  return failed == 0 ? 0 : 2;
}

int default_jobs() {
  if (const char* env = std::getenv("LRM_JOBS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
    }
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Loss Rank Mining for single-shot detectors"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  int count = 0;
  gen->add_option("--config", config_path, "Run config file");
  gen->add_option("--count", count, "Number of samples (default: data.count)");
  gen->add_option("--out", out, "Output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train a detector");
  std::string lrm_override;
  tr->add_option("--config", config_path, "Run config file");
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_option("--lrm", lrm_override, "Override lrm.enabled")->check(CLI::IsMember({"on", "off"}));

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  std::string checkpoint, data;
  ev->add_option("--config", config_path, "Run config file");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  ev->add_option("--data", data, "Dataset directory (overrides data.dir)");
  ev->add_option("--out", out, "Output directory")->required();

  auto* sw = app.add_subcommand("sweep", "Train and evaluate a grid of (K, NMS) settings");
  std::string k_list = "64,128,256", nms_list = "0.5,0.7,none", seeds = "1,2,3";
  int jobs = default_jobs();
  sw->add_option("--config", config_path, "Run config file");
  sw->add_option("--k-list", k_list, "Comma-separated hard example counts")->capture_default_str();
  sw->add_option("--nms-list", nms_list, "Comma-separated NMS thresholds or none")->capture_default_str();
  sw->add_option("--seeds", seeds, "Comma-separated seeds")->capture_default_str();
  sw->add_option("--out", out, "Output directory")->required();
  sw->add_option("--jobs", jobs, "Parallel cells (default: $LRM_JOBS or 1)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, count, out);
    if (tr->parsed()) return cmd_train(config_path, out, lrm_override);
    if (ev->parsed()) return cmd_eval(config_path, checkpoint, data, out);
    if (sw->parsed()) return cmd_sweep(config_path, k_list, nms_list, seeds, out, jobs);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const lrm::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
