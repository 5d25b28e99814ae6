#pragma once

// Label-free test-domain adaptation: pseudo-labels from the invariant branch,
// a variant head fitted to them, flip-rate calibration of that head, and the
// final combination with the invariant prediction.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "snigl/causation.hpp"
#include "snigl/graph.hpp"
#include "snigl/model.hpp"

namespace snigl::adaptation {

using causation::CalibrationKind;
using causation::CalibrationStats;
using causation::CombineMode;
using causation::PseudoLabelMode;
using causation::Simplex;

struct AdaptConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  PseudoLabelMode pseudo_label_mode = PseudoLabelMode::argmax;
  /// Unset: binary for two classes, multiclass otherwise.
  std::optional<CalibrationKind> calibration;
  CombineMode combine_mode = CombineMode::corrected;
  model::EvalMask eval_mask = model::EvalMask::threshold;
  /// Invariant prediction only.
  bool no_ensemble = false;
  std::uint64_t seed = 0;
  /// Name of the head fitted on the test domain.
  std::string env = "test";

  void validate() const;
};

struct PseudoLabels {
  std::vector<std::size_t> labels;
  /// Invariant predictive distributions the labels were drawn from.
  std::vector<Simplex> invariant;
};

/// Argmax (ties to the lowest index) or a seeded draw per prediction.
PseudoLabels pseudo_label(std::vector<Simplex> invariant, PseudoLabelMode mode, std::uint64_t seed);
/// Runs the invariant branch on `graphs` first.
PseudoLabels pseudo_label(const std::vector<const data::Graph*>& graphs, const model::ModelParams& params,
                          PseudoLabelMode mode, model::EvalMask mask, std::uint64_t seed);

/// Rows of `probs` as simplices.
std::vector<Simplex> to_simplices(const ad::Matrix& probs);

struct HeadFit {
  model::ModelParams params;
  /// Pseudo-label accuracy of the fitted head on its own training rows.
  double train_accuracy = 0.0;
};

/// Fits a fresh variant head named `config.env` on frozen representations
/// `reps` (rows = graphs) by cross-entropy against `labels`. Every other
/// tensor is left untouched. Throws DegenerateError when the labels take a
/// single value.
HeadFit fit_variant_classifier(const model::ModelParams& params, const ad::Matrix& reps,
                               const std::vector<std::size_t>& labels, const AdaptConfig& config);

/// Noise statistics relating pseudo-labels to the true label, estimated from
/// the invariant predictions alone.
CalibrationStats calibration_stats(const PseudoLabels& pseudo, PseudoLabelMode mode, CalibrationKind kind);

/// The biased head wrapped with the inverse of the pseudo-label noise.
class CalibratedHead {
 public:
  explicit CalibratedHead(CalibrationStats stats) : stats_(std::move(stats)) {}
  Simplex operator()(const Simplex& biased) const;
  const CalibrationStats& stats() const noexcept { return stats_; }

 private:
  CalibrationStats stats_;
};

/// Estimates the statistics and checks them for degeneracy. Throws
/// DegenerateError when pseudo-labels carry no label information.
CalibratedHead calibrate_head(const PseudoLabels& pseudo, PseudoLabelMode mode, CalibrationKind kind);

/// Combined prediction, or the invariant prediction itself under no_ensemble.
Simplex predict_ensemble(const Simplex& invariant, const Simplex& calibrated_variant, const Simplex& prior,
                         CombineMode mode, bool no_ensemble = false);

/// Empirical distribution of hard labels over `num_classes`.
Simplex label_distribution(const std::vector<std::size_t>& labels, std::size_t num_classes);

struct Prediction {
  std::string graph_id;
  Simplex invariant = Simplex::uniform(2);
  std::optional<Simplex> variant;
  std::optional<Simplex> combined;
  std::size_t pseudo_label = 0;
  std::optional<std::size_t> true_label;

  /// Combined prediction when present, else invariant.
  const Simplex& final() const { return combined ? *combined : invariant; }
};

struct AdaptResult {
  model::ModelParams params;
  std::optional<CalibrationStats> calibration;
  Simplex prior = Simplex::uniform(2);
  double head_train_accuracy = 0.0;
  std::vector<Prediction> predictions;
};

/// Pseudo-label, fit, calibrate and combine over the whole test set.
AdaptResult adapt(const model::ModelParams& params, const data::Dataset& test, const AdaptConfig& config);

/// One JSON object per line: graph_id, invariant, variant, combined,
/// pseudo_label, true_label (absent fields omitted).
void write_predictions(const std::vector<Prediction>& predictions, const std::string& path);
std::vector<Prediction> read_predictions(const std::string& path);

/// Fraction of rows whose argmax of `final()` matches the true label.
double accuracy(const std::vector<Prediction>& predictions);
/// Same over the invariant column only.
double invariant_accuracy(const std::vector<Prediction>& predictions);
/// Area under the ROC curve of P(Y=1) for binary tasks; ties count half.
double roc_auc(const std::vector<double>& scores, const std::vector<std::size_t>& labels);

}  // namespace snigl::adaptation
