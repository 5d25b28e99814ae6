#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "run_config.hpp"

namespace snigl::pipeline {

/// Mean and sample standard deviation (0 for a single value).
struct Summary {
  double mean = 0.0;
  double std = 0.0;
};

Summary summarize(const std::vector<double>& values);

struct VariantMetrics {
  Variant variant = Variant::full;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracy;
  /// Invariant-branch accuracy of the same predictions.
  std::vector<double> invariant_accuracy;
  /// Binary tasks only.
  std::vector<double> auc;
  /// Mean invariant-mask probability on planted motif edges and on the rest.
  std::vector<double> mask_motif;
  std::vector<double> mask_other;

  Summary accuracy_summary() const { return summarize(accuracy); }
  std::optional<Summary> auc_summary() const;
};

struct MetricsReport {
  std::size_t num_classes = 0;
  std::vector<VariantMetrics> variants;

  const VariantMetrics* find(Variant v) const;
  /// Throws DomainError when a summary disagrees with its per-seed values.
  void validate() const;
};

nlohmann::ordered_json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
void save_report(const MetricsReport& report, const std::string& path);
MetricsReport load_report(const std::string& path);
/// variant,seed,accuracy,invariant_accuracy,auc rows.
void save_report_csv(const MetricsReport& report, const std::string& path);

/// Mean planted-motif and non-motif edge probability over a mask export.
/// Graphs without a motif mask are skipped; throws DomainError when no edge
/// of either kind is present.
std::pair<double, double> mask_edge_means(const std::string& masks_path);

}  // namespace snigl::pipeline
