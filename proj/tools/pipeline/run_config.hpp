#pragma once

// Declarative run description: data source and split, training, adaptation,
// evaluation seeds and variants, output directory.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "snigl/adaptation.hpp"
#include "snigl/graph.hpp"
#include "snigl/training.hpp"

namespace snigl::pipeline {

enum class Variant { full, no_pns, no_ensemble, erm_baseline };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
const std::vector<Variant>& all_variants();

/// Objective whose checkpoint a variant evaluates.
training::Objective objective_of(Variant v);
/// Directory name of the checkpoint a variant evaluates (no_ensemble reuses full).
std::string model_dir_of(Variant v);

enum class SplitScheme { bias_levels, base_kind, size_threshold };

std::string to_string(SplitScheme s);
SplitScheme parse_split_scheme(const std::string& name);

struct DataSection {
  /// "spmotif" generates; "files" loads train_path / test_path.
  std::string source = "spmotif";
  std::string train_path;
  std::string test_path;
  SplitScheme split = SplitScheme::bias_levels;
  /// One training environment per level (bias_levels).
  std::vector<double> train_bias{0.7, 0.9};
  /// Training graphs over all environments, divided evenly.
  std::size_t n_train = 3000;
  std::size_t n_test = 900;
  std::size_t base_min = 8;
  std::size_t base_max = 12;
  /// Pool for base_kind / size_threshold splits.
  std::size_t pool_size = 3000;
  double pool_bias = 1.0 / 3.0;
  data::BaseKind holdout_base = data::BaseKind::wheel;
  std::optional<std::size_t> size_threshold;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalSection {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  std::vector<Variant> variants{Variant::full, Variant::no_pns, Variant::no_ensemble, Variant::erm_baseline};

  void validate() const;
};

struct RunConfig {
  std::string profile = "standard";
  DataSection data;
  training::TrainConfig train;
  adaptation::AdaptConfig adapt;
  EvalSection eval;
  std::string out = "runs/snigl";

  void validate() const;
};

/// Defaults for a named profile: "standard" (full epoch budget) or "desk".
RunConfig profile_defaults(const std::string& name);

/// Parses a JSON document. The optional top-level "profile" selects the base
/// defaults; every other key overrides them. Unknown keys throw DomainError.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

/// Every field with defaults resolved; parse_run_config inverts it exactly.
nlohmann::ordered_json to_json(const RunConfig& config);

}  // namespace snigl::pipeline
