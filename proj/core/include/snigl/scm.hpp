#pragma once

// Exact, enumeration-based ground truth on finite structural causal models:
// counterfactual PNS, interventional and observational marginals, exact
// posteriors on joint tables, and forward simulation of pseudo-label noise.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "snigl/causation.hpp"

namespace snigl::scm {

using Assignment = std::vector<std::size_t>;

inline constexpr std::uint64_t kDefaultStateCap = std::uint64_t{1} << 22;

struct Variable {
  std::string name;
  std::size_t cardinality = 2;
  bool exogenous = true;
  /// Exogenous only.
  std::vector<double> distribution;
  /// Endogenous only: indices of earlier variables.
  std::vector<std::size_t> parents;
  /// Endogenous only: output value per parent configuration, row-major with
  /// the last parent varying fastest.
  std::vector<std::size_t> table;
};

struct Intervention {
  std::size_t variable;
  std::size_t value;
};

/// A finite SCM. Variables are added in topological order, so the mechanism
/// graph is acyclic by construction.
class DiscreteScm {
 public:
  using Mechanism = std::function<std::size_t(std::span<const std::size_t>)>;

  std::size_t add_exogenous(std::string name, std::vector<double> distribution);
  std::size_t add_endogenous(std::string name, std::size_t cardinality,
                             const std::vector<std::string>& parents, std::vector<std::size_t> table);
  /// Tabulates `mechanism` over every parent configuration.
  std::size_t add_endogenous(std::string name, std::size_t cardinality,
                             const std::vector<std::string>& parents, const Mechanism& mechanism);

  std::size_t size() const noexcept { return vars_.size(); }
  const Variable& variable(std::size_t i) const { return vars_.at(i); }
  const std::vector<Variable>& variables() const noexcept { return vars_; }
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  /// Product of exogenous cardinalities, saturating at UINT64_MAX.
  std::uint64_t exogenous_state_count() const;

  /// Completes an assignment whose exogenous entries are set, optionally
  /// under do(variable = value).
  void evaluate(Assignment& values, const std::optional<Intervention>& intervention = {}) const;

  /// Calls fn(assignment, probability) for every exogenous configuration with
  /// endogenous values filled in. Throws IntractableError past `cap`.
  void enumerate(const std::function<void(const Assignment&, double)>& fn,
                 const std::optional<Intervention>& intervention = {},
                 std::uint64_t cap = kDefaultStateCap) const;

  /// Ancestor set of `v` (excluding v). With `cut` set, edges leaving `cut`
  /// are ignored.
  std::vector<bool> ancestors(std::size_t v, std::optional<std::size_t> cut = {}) const;

  /// Copy with `variable` replaced by the constant `value`.
  DiscreteScm mutilated(std::size_t variable, std::size_t value) const;

 private:
  std::vector<Variable> vars_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// C is exogenous relative to Y when they share no ancestor once the edges
/// leaving C are removed.
bool is_exogenous_relative(const DiscreteScm& scm, std::size_t cause, std::size_t effect);

struct VariableValue {
  std::string name;
  std::size_t value;
};

/// Every quantity exact_pns touches, exposed for property checks.
struct PnsBreakdown {
  double sufficiency_term = 0.0;   // P(Y_do(c)=y, C!=c, Y!=y)
  double necessity_term = 0.0;     // P(Y_do(!c)!=y, C=c, Y=y)
  double pns = 0.0;                // sum of the two terms
  double joint_counterfactual = 0.0;  // P(Y_do(c)=y, Y_do(!c)!=y)
  double p_do_c_y = 0.0;           // P(Y_do(c)=y)
  double p_do_notc_not_y = 0.0;    // P(Y_do(!c)!=y)
  double p_c = 0.0;                // P(C=c)
  double p_y = 0.0;                // P(Y=y)
  double p_y_given_c = 0.0;
  double p_y_given_not_c = 0.0;
  bool consistency_holds = true;   // factual C=c implies Y = Y_do(c), per state
};

struct PnsOptions {
  std::uint64_t state_cap = kDefaultStateCap;
  bool check_exogeneity = true;
};

/// Requires a binary cause. Throws DomainError on a non-binary cause or an
/// exogeneity violation and IntractableError past the state cap.
PnsBreakdown pns_breakdown(const DiscreteScm& scm, const VariableValue& cause,
                           const VariableValue& effect, const PnsOptions& options = {});

double exact_pns(const DiscreteScm& scm, const VariableValue& cause, const VariableValue& effect,
                 const PnsOptions& options = {});

/// Distribution of `target` under do(intervention) by enumeration.
causation::Simplex interventional_distribution(const DiscreteScm& scm, const Intervention& intervention,
                                               std::size_t target,
                                               std::uint64_t cap = kDefaultStateCap);

using Evidence = std::vector<std::pair<std::string, std::size_t>>;

/// Dense joint distribution over named finite variables, cells row-major with
/// the last variable varying fastest.
class JointTable {
 public:
  JointTable(std::vector<std::string> names, std::vector<std::size_t> cardinalities,
             std::vector<double> cells);

  /// Joint over every variable (exogenous and endogenous) of `scm`.
  static JointTable from_scm(const DiscreteScm& scm, std::uint64_t cap = kDefaultStateCap);

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<std::size_t>& cardinalities() const noexcept { return cards_; }
  const std::vector<double>& cells() const noexcept { return cells_; }
  std::size_t index_of(std::string_view name) const;
  std::size_t flat_index(std::span<const std::size_t> assignment) const;
  Assignment unflatten(std::size_t flat) const;

  double probability(const Evidence& evidence) const;
  JointTable marginal(const std::vector<std::string>& keep) const;

 private:
  std::vector<std::string> names_;
  std::vector<std::size_t> cards_;
  std::vector<double> cells_;
};

/// P(target | evidence). Throws DegenerateError when P(evidence) < 1e-12.
causation::Simplex exact_posterior(const JointTable& joint, const std::string& target,
                                   const Evidence& evidence);

/// Extends `joint` with a pseudo-label column drawn from predictor(c) where c
/// is the value of `cause`: a full draw (sample) or a point mass on its
/// argmax. The new column is independent of everything else given `cause`.
JointTable simulate_pseudo_labels(const JointTable& joint, const std::string& cause,
                                  const std::map<std::size_t, causation::Simplex>& predictor,
                                  causation::PseudoLabelMode mode,
                                  const std::string& pseudo_name = "Yhat");

/// Declarative text formats (versioned, UTF-8, '#' comments):
///
///   scm v1
///   exogenous U 0.9 0.1
///   exogenous C 0.5 0.5
///   endogenous Y 2 parents C U table 0 1 1 0
///
///   joint v1
///   variables Y:2 C:2
///   cells 0.25 0.25 0.25 0.25
DiscreteScm parse_scm(std::string_view text);
std::string to_text(const DiscreteScm& scm);
JointTable parse_joint(std::string_view text);
std::string to_text(const JointTable& joint);

DiscreteScm load_scm(const std::string& path);
JointTable load_joint(const std::string& path);

}  // namespace snigl::scm
