#pragma once

// Risk terms over training environments and the optimization loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "snigl/autodiff.hpp"
#include "snigl/graph.hpp"
#include "snigl/model.hpp"

namespace snigl::training {

using ad::Matrix;
using ad::Var;

/// full: every term. no_pns: drops the PNS risk. erm: cross-entropy of the
/// invariant branch only.
enum class Objective { full, no_pns, erm };

std::string to_string(Objective o);
Objective parse_objective(const std::string& name);

struct TrainConfig {
  model::ModelConfig model;
  Objective objective = Objective::full;
  double lambda_ci = 1e-3;
  double learning_rate = 1e-3;
  std::size_t epochs = 60;
  /// Graphs drawn from each environment per step.
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  /// Samples behind the P(C=c|G) estimate.
  std::size_t k = 8;
  double tau_start = 1.0;
  double tau_end = 0.3;
  /// Forward 0/1 samples with straight-through gradients.
  bool hard_samples = false;
  /// Floor on the PNS-risk denominator.
  double pns_clamp = 1e-3;
  double contrastive_temperature = 0.5;
  /// Target fraction of edges kept by the invariant mask and the weight of
  /// the squared deviation of the mean edge probability from it. Weight 0
  /// disables the size constraint.
  double mask_ratio = 0.25;
  double mask_ratio_weight = 1.0;
  double hscic_ridge = 1e-3;
  /// Global gradient-norm cap; 0 disables.
  double clip_norm = 0.0;

  void validate() const;
  /// Linear anneal from tau_start at epoch 0 to tau_end at the last epoch.
  double tau_at(std::size_t epoch) const;
};

struct RiskBreakdown {
  std::string env;
  double r_ns = 0.0;
  double r_inv = 0.0;
  double r_joint = 0.0;
  double r_ci = 0.0;
  double total = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double tau = 1.0;
  RiskBreakdown risks;
  double train_accuracy = 0.0;
};

// Risk terms on tape values. `labels` index rows.

struct PnsRiskStats {
  std::size_t clamped = 0;
  std::size_t examples = 0;
};

/// Mean over rows of (prior[y] - probs(y)) / max(1 - e_hat, clamp).
/// probs: B x K invariant-head probabilities on the sampled subgraph;
/// e_hat: B x 1 estimates of E_G[P(C=c|G)] within the environment.
/// Warns when more than 10% of rows clamp, unless `stats` is given, in which
/// case the counts are reported there instead.
Var pns_risk(Var probs, std::span<const std::size_t> labels, const std::vector<double>& prior, Var e_hat,
             double clamp = 1e-3, PnsRiskStats* stats = nullptr);

/// Supervised contrastive loss: anchors against candidates, cosine
/// similarities at `temperature`. Each positive pair contributes
/// -log(exp(s_ip) / (exp(s_ip) + sum over negatives exp(s_in))).
/// anchor_rows[i] is the anchor's own row among the candidates.
Var contrastive_loss(Var candidates, std::span<const std::size_t> candidate_labels,
                     std::span<const std::size_t> anchor_rows, double temperature);

/// Cross-entropy of log-probabilities plus the contrastive term.
Var invariant_risk(Var log_probs, std::span<const std::size_t> labels, Var candidates,
                   std::span<const std::size_t> candidate_labels, std::span<const std::size_t> anchor_rows,
                   double temperature);

/// (mean(edge_probs) - ratio)^2 over the given rows of an E x 1 column.
Var mask_size_penalty(Var edge_probs, std::span<const std::size_t> edges, double ratio);

/// Cross-entropy of log_softmax(log_p_c + log_p_s - log prior).
Var joint_risk(Var log_p_c, Var log_p_s, std::span<const std::size_t> labels, const std::vector<double>& prior);

/// Kernel conditional-dependence statistic of x and z given labels: Gaussian
/// kernels with median-heuristic bandwidths (floor 1e-6), label-conditional
/// mean embeddings by kernel ridge regression. Requires at least 8 rows.
Var hscic_penalty(Var x, Var z, std::span<const std::size_t> labels, std::size_t num_classes, double ridge = 1e-3);

/// Normalized kernel-ridge weights W = (K_Y + n ridge I)^{-1} K_Y with unit
/// column sums.
Matrix hscic_weights(std::span<const std::size_t> labels, std::size_t num_classes, double ridge);

// Training.

struct StepInputs {
  model::GraphBatch batch;
  /// Rows of `batch` belonging to each environment, in environment order.
  std::vector<std::vector<std::size_t>> env_rows;
  std::vector<std::string> envs;
  std::vector<std::vector<double>> priors;
};

struct StepOutput {
  Var loss;
  std::vector<RiskBreakdown> risks;
  /// Per environment: rows whose invariant prediction matches the label.
  std::vector<std::size_t> correct;
  PnsRiskStats pns;
};

/// Builds the objective for one step on `p`'s tape. Noise derives from `seed`.
StepOutput objective(const model::Bound& p, const StepInputs& in, const TrainConfig& config, double tau,
                     std::uint64_t seed);

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::map<std::string, Matrix>& params, const std::map<std::string, Matrix>& grads);

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

struct TrainResult {
  model::ModelParams params;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minimizes the summed per-environment objective. Deterministic given the
/// config seed. Throws NonFiniteError naming the offending term.
TrainResult train(const TrainConfig& config, const data::Dataset& train_set, const EpochCallback& on_epoch = {});

/// One JSON object per line: epoch, env, r_ns, r_inv, r_joint, r_ci, total, train_acc, tau.
void write_epoch_log(const std::vector<EpochLog>& log, const std::string& path);
std::vector<EpochLog> read_epoch_log(const std::string& path);

}  // namespace snigl::training
