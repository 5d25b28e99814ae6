#pragma once

// Independent reference constructions shared by unit and acceptance tests.

#include <cstddef>
#include <string>
#include <vector>

#include "snigl/causation.hpp"
#include "snigl/graph.hpp"
#include "snigl/random.hpp"
#include "snigl/scm.hpp"

namespace snigl::testing {

/// Random SCM with a binary variable "C" that is exogenous relative to "Y".
/// The product of exogenous cardinalities stays at or below 2^max_bits.
scm::DiscreteScm random_binary_cause_scm(Rng& rng, unsigned max_bits = 16);

/// Random joint over (Y, C, S) factorized as P(Y) P(C|Y) P(S|Y).
struct FactorizedJoint {
  std::vector<double> prior;                     // P(Y=y)
  std::vector<std::vector<double>> c_given_y;    // [y][c]
  std::vector<std::vector<double>> s_given_y;    // [y][s]

  scm::JointTable table() const;
  std::size_t num_classes() const { return prior.size(); }
  std::size_t c_card() const { return c_given_y.front().size(); }
  std::size_t s_card() const { return s_given_y.front().size(); }
  double p_c(std::size_t c) const;
  double p_s(std::size_t s) const;
  causation::Simplex y_given_c(std::size_t c) const;
  causation::Simplex y_given_s(std::size_t s) const;
};

/// Dirichlet(1) draws for every factor; entries bounded away from zero.
FactorizedJoint random_factorized_joint(Rng& rng, std::size_t num_classes, std::size_t c_card,
                                        std::size_t s_card);

/// Binary joint realizing P(Y=1) = prior, P(Y=1|C=1) = pc, P(Y=1|S=1) = ps.
FactorizedJoint realize_binary_joint(double prior, double pc, double ps);

std::vector<double> dirichlet(Rng& rng, std::size_t k, double floor = 1e-3);

/// Path plus random chords, Gaussian features, uniform label.
data::Graph random_small_graph(Rng& rng, std::size_t min_nodes, std::size_t max_nodes, std::size_t feature_dim,
                               std::size_t num_classes = 3, const std::string& env = "e0");

}  // namespace snigl::testing
