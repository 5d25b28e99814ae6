#pragma once

// Message-passing encoders, edge-probability extractors with binary-concrete
// sampling, readout classifiers, and the similarity estimate of P(C=c|G).

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "snigl/autodiff.hpp"
#include "snigl/causation.hpp"
#include "snigl/graph.hpp"

namespace snigl::model {

using ad::Matrix;
using ad::Var;

enum class Readout { mean, max };
enum class Branch { invariant, variant };
/// Edge weights used outside training: thresholded probabilities or the
/// probabilities themselves.
enum class EvalMask { threshold, probability };

std::string to_string(Readout r);
Readout parse_readout(const std::string& name);
std::string to_string(EvalMask m);
EvalMask parse_eval_mask(const std::string& name);

struct ModelConfig {
  std::size_t feature_dim = data::kMotifFeatureDim;
  std::size_t hidden = 32;
  std::size_t num_classes = data::kMotifClasses;
  Readout readout = Readout::mean;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Every learnable matrix, keyed by module path:
///   theta_c/..., theta_s/...   encoders
///   phi_c/...                  invariant head
///   Phi_s/<env>/...            variant head per environment
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Matrix> tensors;

  static ModelParams init(const ModelConfig& config, const std::vector<std::string>& envs, std::uint64_t seed);
  /// Adds a freshly initialised variant head for `env`.
  void add_variant_head(const std::string& env, std::uint64_t seed);
  bool has_variant_head(const std::string& env) const;
  std::vector<std::string> variant_envs() const;
  const Matrix& at(const std::string& name) const;
  bool all_finite() const;
  bool operator==(const ModelParams&) const;
};

std::string head_prefix(Branch branch, const std::string& env = {});
std::string encoder_prefix(Branch branch);

/// Block-diagonal concatenation of graphs.
struct GraphBatch {
  std::size_t num_graphs = 0;
  std::size_t num_nodes = 0;
  std::vector<std::size_t> node_offsets{0};
  std::vector<std::size_t> edge_offsets{0};
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  Matrix features;
  std::vector<std::size_t> labels;
  std::vector<std::string> envs;

  static GraphBatch of(const std::vector<const data::Graph*>& graphs);
  static GraphBatch of(const data::Graph& graph);
  std::size_t num_edges() const { return src.size(); }
  /// The batch repeated `copies` times; copy r of graph g is graph r*G + g.
  GraphBatch replicate(std::size_t copies) const;
};

/// Binds parameter matrices to tape leaves. Names not in `trainable` (when
/// given) become constants.
class Bound {
 public:
  Bound(ad::Tape& tape, const ModelParams& params, std::optional<std::vector<std::string>> trainable_prefixes = {});
  Var operator[](const std::string& name) const;
  ad::Tape& tape() const { return tape_; }
  const ModelConfig& config() const { return config_; }
  /// Gradients of trainable parameters after tape.backward().
  std::map<std::string, Matrix> gradients() const;

 private:
  ad::Tape& tape_;
  ModelConfig config_;
  std::map<std::string, Var> vars_;
  std::map<std::string, bool> trainable_;
};

// Differentiable building blocks.

/// Two rounds of edge-weighted sum aggregation, each followed by a
/// Linear-tanh-Linear perceptron (tanh between rounds). Returns n x hidden.
Var encode(const Bound& p, Branch branch, const GraphBatch& batch, Var edge_weights);
Var edge_logits(Var z, const GraphBatch& batch);
/// Logistic noise log u - log(1 - u), one draw per edge.
Matrix logistic_noise(std::size_t edges, std::uint64_t seed);
/// sigmoid((logit + noise) / tau); with `hard`, forwards the 0/1 threshold
/// and back-propagates through the relaxed value.
Var relaxed_sample(Var logits, const Matrix& noise, double tau, bool hard = false);
/// Node soft-membership weighted readout of node embeddings per graph.
Var readout(const Bound& p, Var h, Var edge_weights, const GraphBatch& batch);
/// Three-layer perceptron logits, rows = graphs.
Var head_logits(const Bound& p, const std::string& prefix, Var reps);
/// Pooled representation of the subgraph selected by `edge_weights`.
Var subgraph_representation(const Bound& p, Branch branch, const GraphBatch& batch, Var edge_weights);

/// Deterministic evaluation weights from edge probabilities.
Matrix eval_weights(const Matrix& probs, EvalMask mode);

// Graph-level operations.

struct EdgeProbabilityMask {
  std::string owner;
  Branch kind = Branch::invariant;
  std::vector<double> probs;  // aligned with the owner's edge list
};

struct SubgraphSample {
  std::vector<double> weights;
  double tau = 1.0;
  std::uint64_t seed = 0;
  bool hard = false;
};

/// Node embeddings; `weights` empty means all ones.
Matrix encode(const data::Graph& graph, const ModelParams& params, Branch branch,
              const std::vector<double>& weights = {});
EdgeProbabilityMask edge_probabilities(const Matrix& z, const data::Graph& graph, Branch kind = Branch::invariant);
EdgeProbabilityMask edge_probabilities(const data::Graph& graph, const ModelParams& params, Branch kind);
SubgraphSample sample_subgraph(const EdgeProbabilityMask& mask, double tau, std::uint64_t seed, bool hard = false);
/// Softmax of the invariant head (env empty) or the variant head of `env`.
causation::Simplex classify(const data::Graph& graph, const ModelParams& params, const std::vector<double>& weights,
                            const std::optional<std::string>& env = {});
/// Similarity surrogate (1/k) sum_i sigmoid(<rep(c_i), rep(c)>) with c_i drawn
/// from the invariant mask and representations scaled to unit norm.
double estimate_p_c_given_g(const data::Graph& graph, const SubgraphSample& c, std::size_t k,
                            const ModelParams& params, std::uint64_t seed, double tau = 1.0);
/// Mean of sigmoid(<rep_c, other>) over the rows of `others` after scaling
/// every row to unit norm (zero rows stay zero). Batched form.
Var similarity_mean(Var rep_c, Var others);

// Batched inference with evaluation masks.

struct BranchOutput {
  Matrix edge_probs;   // E x 1
  Matrix reps;         // graphs x hidden
  Matrix probs;        // graphs x K (empty when no head requested)
};

/// Invariant branch: mask, representation and invariant-head probabilities.
BranchOutput infer_invariant(const ModelParams& params, const GraphBatch& batch, EvalMask mode);
/// Variant branch: mask and representation; head probabilities when `env` given.
BranchOutput infer_variant(const ModelParams& params, const GraphBatch& batch, EvalMask mode,
                           const std::optional<std::string>& env = {});

// Checkpoints: versioned binary container keyed by module path.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);
std::string serialize_checkpoint(const ModelParams& params);
ModelParams parse_checkpoint(const std::string& bytes);

/// One JSON line per graph: {graph_id, kind, edges: [[u, v, p], ...]}.
void export_masks(const std::vector<const data::Graph*>& graphs, const ModelParams& params, Branch kind,
                  const std::string& path);

}  // namespace snigl::model
