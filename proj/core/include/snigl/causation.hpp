#pragma once

// Closed-form causal quantities used by both training and test-domain
// adaptation: the observational lower bound on the probability of necessity
// and sufficiency, pseudo-label flip-rate calibration, and the logit-space
// combination of invariant and variant predictors.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace snigl::causation {

inline constexpr double kDefaultClampDelta = 1e-6;
inline constexpr double kSimplexTolerance = 1e-9;
inline constexpr double kDegeneracyTolerance = 1e-9;
inline constexpr double kDivisionGuard = 1e-12;
inline constexpr double kDefaultConditionCap = 1e8;

/// A real number in [0, 1].
class Probability {
 public:
  explicit Probability(double value);

  double value() const noexcept { return value_; }

 private:
  double value_;
};

/// A distribution over a finite label set of size >= 2.
class Simplex {
 public:
  explicit Simplex(std::vector<double> values);
  Simplex(std::initializer_list<double> values) : Simplex(std::vector<double>(values)) {}

  /// Scales non-negative weights to sum to one.
  static Simplex normalized(std::vector<double> weights);
  static Simplex uniform(std::size_t size);
  static Simplex one_hot(std::size_t size, std::size_t index);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const noexcept { return values_; }
  /// Lowest index attaining the maximum.
  std::size_t argmax() const;

 private:
  std::vector<double> values_;
};

enum class CalibrationKind { binary, multiclass };

/// Noise model linking pseudo-labels to true labels: confusion[i*K + j] =
/// P(Yhat = i | Y = j). Binary statistics also fill eps0 = M[0][0] and
/// eps1 = M[1][1]; the multiclass form with K = 2 does the same.
struct CalibrationStats {
  CalibrationKind kind = CalibrationKind::binary;
  std::size_t num_classes = 2;
  double eps0 = 1.0;
  double eps1 = 1.0;
  std::vector<double> confusion;

  static CalibrationStats binary(double eps0, double eps1);
  /// Validates shape, range and column sums.
  static CalibrationStats multiclass(std::size_t num_classes, std::vector<double> confusion);

  double at(std::size_t i, std::size_t j) const { return confusion[i * num_classes + j]; }
  /// eps0 + eps1 == 1 within tolerance: pseudo-labels carry no label signal.
  bool binary_degenerate(double tol = kDegeneracyTolerance) const;

  /// Versioned key-value text record.
  std::string to_record() const;
  static CalibrationStats from_record(const std::string& text);

  bool operator==(const CalibrationStats&) const = default;
};

struct PnsBound {
  double value = 0.0;
  std::size_t cause_value = 1;
  std::size_t effect_value = 1;
};

/// max((P(y|c) - P(y)) / (1 - E_G[P(c|G)]), 0), clamped above at 1.
/// Throws DegenerateError when mean_p_c >= 1 - delta.
PnsBound pns_lower_bound(Probability p_y_given_c, Probability p_y, Probability mean_p_c,
                         double delta = kDefaultClampDelta, std::size_t cause_value = 1,
                         std::size_t effect_value = 1);

/// Flip rates eps1 = E[p q] / E[p], eps0 = E[(1-p)(1-q)] / E[1-p] where p is
/// P(Y=1|C) per sample and q = P(Yhat=1|C) is the pseudo-labeller. With q
/// omitted the pseudo-label is drawn from p itself, giving E[p^2] / E[p].
/// Optional non-negative weights turn the sample means into expectations
/// under an arbitrary distribution of C.
CalibrationStats estimate_flip_rates_binary(std::span<const double> p_y1_given_c,
                                            std::span<const double> q_yhat1_given_c = {},
                                            std::span<const double> weights = {});

/// (p_hat + eps0 - 1) / (eps0 + eps1 - 1) clipped to [0, 1].
/// Throws DegenerateError when eps0 + eps1 == 1 (C and Y independent).
double calibrate_binary(double p_hat_y1, const CalibrationStats& stats);

/// M[i][j] = E[P(Y=j|C) P(Yhat=i|C)] / E[P(Y=j|C)]. `pseudo` defaults to the
/// label distributions themselves (pseudo-labels sampled from the predictor).
CalibrationStats estimate_confusion_multiclass(std::span<const Simplex> p_y_given_c,
                                               std::span<const Simplex> pseudo = {},
                                               std::span<const double> weights = {});

/// Solves M h = p_hat, clips negatives and renormalizes. Throws DegenerateError
/// for singular M; warns when the condition number exceeds `condition_cap`.
Simplex calibrate_multiclass(const Simplex& p_hat, const CalibrationStats& stats,
                             double condition_cap = kDefaultConditionCap);

/// How pseudo-labels are drawn from the invariant predictor: a random draw
/// from its predictive distribution, or its argmax (ties to the lowest index).
enum class PseudoLabelMode { sample, argmax };

PseudoLabelMode parse_pseudo_label_mode(const std::string& name);
std::string to_string(PseudoLabelMode mode);

enum class CombineMode {
  corrected,  // posterior under C independent of S given Y: divide by the prior
  paper,      // the printed variant that multiplies by the prior
};

double logit(double p);
double sigmoid(double x);
double clamp_probability(double p, double delta = kDefaultClampDelta);

/// sigma(logit p_c + logit p_s - logit prior); the paper mode adds logit prior.
double combine_binary(double p_c, double p_s, double prior,
                      CombineMode mode = CombineMode::corrected,
                      double delta = kDefaultClampDelta);

/// Q_y = p_c(y) p_s(y) / prior(y) normalized (paper mode: times prior(y)).
Simplex combine_multiclass(const Simplex& p_c, const Simplex& p_s, const Simplex& prior,
                           CombineMode mode = CombineMode::corrected,
                           double delta = kDefaultClampDelta);

CombineMode parse_combine_mode(const std::string& name);
std::string to_string(CombineMode mode);

}  // namespace snigl::causation
