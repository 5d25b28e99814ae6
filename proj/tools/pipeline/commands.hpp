#pragma once

// Operator commands behind the snigl executable. Every artifact lands under
// the run's output directory:
//
//   effective_config.json           resolved config, re-runnable as is
//   metadata.json                   per-command wall-clock timestamps
//   data/train.jsonl, data/test.jsonl
//   seed_<s>/<model>/checkpoint.bin train_log.jsonl masks.jsonl
//   seed_<s>/<variant>/predictions.jsonl adapted.bin calibration.txt
//   report.json, report.csv
//   plots/{loss_curve,ablation_bars,mask_overlay}.{svg,csv}

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "report.hpp"
#include "run_config.hpp"

namespace snigl::pipeline {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInvalidArguments = 2,
  kWriteFailure = 3,
  kMissingInput = 4,
  kDegenerateCalibration = 5,
};

/// Maps the library's exception types onto exit codes.
int exit_code_for(const std::exception& e);

/// Worker cap from SNIGL_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_limit();

struct GenerateOptions {
  std::string dataset = "spmotif";
  double bias = 1.0 / 3.0;
  double feature_bias = 1.0 / 3.0;
  std::size_t n = 3000;
  std::uint64_t seed = 0;
  std::size_t base_min = 8;
  std::size_t base_max = 12;
  std::string env = "pool";
  std::string out;
};

struct DatasetSummary {
  std::size_t graphs = 0;
  double mean_nodes = 0.0;
  double mean_edges = 0.0;
  std::vector<std::size_t> label_counts;
  /// Fraction of graphs whose base is the one paired with their motif.
  double paired_fraction = 0.0;
};

DatasetSummary summarize_dataset(const data::Dataset& dataset);
std::string format_summary(const DatasetSummary& s);

DatasetSummary cmd_generate(const GenerateOptions& options, std::ostream& log);

struct DataSplits {
  data::Dataset train;
  data::Dataset test;
};

/// Generates or loads the configured train/test split. Deterministic.
DataSplits prepare_data(const DataSection& data);

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "effective_config.json"; }
  std::filesystem::path metadata() const { return root / "metadata.json"; }
  std::filesystem::path train_data() const { return root / "data" / "train.jsonl"; }
  std::filesystem::path test_data() const { return root / "data" / "test.jsonl"; }
  std::filesystem::path seed_dir(std::uint64_t seed) const { return root / ("seed_" + std::to_string(seed)); }
  std::filesystem::path model_dir(std::uint64_t seed, Variant v) const { return seed_dir(seed) / model_dir_of(v); }
  std::filesystem::path checkpoint(std::uint64_t seed, Variant v) const { return model_dir(seed, v) / "checkpoint.bin"; }
  std::filesystem::path train_log(std::uint64_t seed, Variant v) const { return model_dir(seed, v) / "train_log.jsonl"; }
  std::filesystem::path masks(std::uint64_t seed, Variant v) const { return model_dir(seed, v) / "masks.jsonl"; }
  std::filesystem::path variant_dir(std::uint64_t seed, Variant v) const { return seed_dir(seed) / to_string(v); }
  std::filesystem::path predictions(std::uint64_t seed, Variant v) const { return variant_dir(seed, v) / "predictions.jsonl"; }
  std::filesystem::path report() const { return root / "report.json"; }
  std::filesystem::path report_csv() const { return root / "report.csv"; }
  std::filesystem::path plots() const { return root / "plots"; }
};

/// Trains every checkpoint the variants need, for every configured seed.
void cmd_train(const RunConfig& config, const std::vector<Variant>& variants, std::ostream& log);
/// Pseudo-labels, fits and calibrates the test head, writes predictions.
/// Throws MissingInputError when a checkpoint is absent.
void cmd_adapt(const RunConfig& config, const std::vector<Variant>& variants, std::ostream& log);
/// Scores predictions into report.json / report.csv.
MetricsReport cmd_eval(const RunConfig& config, const std::vector<Variant>& variants, std::ostream& log);
/// Loss curves, ablation bars and mask overlays with CSV side-files.
void cmd_plot(const std::filesystem::path& run_dir, std::ostream& log);

/// Writes effective_config.json under config.out.
void write_effective_config(const RunConfig& config);

}  // namespace snigl::pipeline
