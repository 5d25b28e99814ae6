#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "finite_diff.hpp"
#include "oracles.hpp"
#include "snigl/diagnostics.hpp"
#include "snigl/error.hpp"
#include "snigl/training.hpp"

namespace snigl {
namespace {

using ad::Matrix;
using ad::Var;
using testing::check_gradients;
using Leaves = std::map<std::string, Var>;
using training::Objective;
using training::TrainConfig;

class CaptureWarnings {
 public:
  CaptureWarnings() {
    previous_ = set_warning_handler([this](std::string_view m) { messages.emplace_back(m); });
  }
  ~CaptureWarnings() { set_warning_handler(previous_); }
  std::vector<std::string> messages;

 private:
  WarningHandler previous_;
};

Matrix random_matrix(Rng& rng, ad::Index r, ad::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (ad::Index i = 0; i < r; ++i)
    for (ad::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

std::vector<std::size_t> random_labels(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i < k ? i : rng.below(k);
  return y;
}

TEST(PnsRisk, HandArithmetic) {
  ad::Tape t;
  Matrix probs(1, 2);
  probs << 0.1, 0.9;
  const std::vector<std::size_t> y{1};
  Var r = training::pns_risk(t.constant(probs), y, {0.5, 0.5}, t.constant(Matrix::Constant(1, 1, 0.2)));
  EXPECT_NEAR(r.scalar(), -0.5, 1e-15);

  Matrix uninformative(3, 2);
  uninformative << 0.3, 0.7, 0.3, 0.7, 0.3, 0.7;
  const std::vector<std::size_t> ys{0, 1, 1};
  Var z = training::pns_risk(t.constant(uninformative), ys, {0.3, 0.7}, t.constant(Matrix::Constant(3, 1, 0.6)));
  EXPECT_NEAR(z.scalar(), 0.0, 1e-15);
}

TEST(PnsRisk, ClampWarnsAboveTenPercent) {
  CaptureWarnings w;
  ad::Tape t;
  Matrix e_hat = Matrix::Constant(10, 1, 0.5);
  e_hat(0, 0) = 1.0;
  const std::vector<std::size_t> y(10, 0);
  const Matrix probs = Matrix::Constant(10, 2, 0.5);
  training::pns_risk(t.constant(probs), y, {0.5, 0.5}, t.constant(e_hat));
  EXPECT_TRUE(w.messages.empty());
  e_hat(1, 0) = 0.9999;
  Var r = training::pns_risk(t.constant(probs), y, {0.5, 0.5}, t.constant(e_hat));
  EXPECT_EQ(w.messages.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.scalar()));
  training::PnsRiskStats stats;
  training::pns_risk(t.constant(probs), y, {0.5, 0.5}, t.constant(e_hat), 1e-3, &stats);
  EXPECT_EQ(stats.clamped, 2u);
  EXPECT_EQ(stats.examples, 10u);
  EXPECT_EQ(w.messages.size(), 1u);
}

TEST(InvariantRisk, PerfectPredictionsHaveZeroCrossEntropy) {
  ad::Tape t;
  Matrix lp = Matrix::Constant(4, 2, -800.0);
  const std::vector<std::size_t> y{0, 1, 1, 0};
  for (int i = 0; i < 4; ++i) lp(i, static_cast<ad::Index>(y[static_cast<std::size_t>(i)])) = 0.0;
  Rng rng(1);
  Matrix reps = random_matrix(rng, 4, 3);
  // Separate contrastive term so the cross-entropy can be isolated.
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  Var total = training::invariant_risk(t.constant(lp), y, t.constant(reps), y, rows, 0.5);
  Var con = training::contrastive_loss(t.constant(reps), y, rows, 0.5);
  EXPECT_NEAR(total.scalar() - con.scalar(), 0.0, 1e-12);
}

TEST(InvariantRisk, IdenticalRepresentationsGiveLogOfNegativesPlusOne) {
  ad::Tape t;
  const Matrix reps = Matrix::Constant(4, 3, 0.7);
  const std::vector<std::size_t> y{0, 0, 1, 1};
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  // Each anchor: one positive, two negatives, all similarities equal.
  EXPECT_NEAR(training::contrastive_loss(t.constant(reps), y, rows, 0.5).scalar(), std::log(3.0), 1e-12);
}

TEST(InvariantRisk, SingleClassBatchSkipsWithWarning) {
  CaptureWarnings w;
  ad::Tape t;
  Rng rng(2);
  const std::vector<std::size_t> y(5, 1), rows{0, 1, 2, 3, 4};
  EXPECT_EQ(training::contrastive_loss(t.constant(random_matrix(rng, 5, 3)), y, rows, 0.5).scalar(), 0.0);
  EXPECT_EQ(w.messages.size(), 1u);
}

TEST(MaskSizePenalty, SquaredGapOfSelectedMean) {
  ad::Tape t;
  Matrix p(4, 1);
  p << 0.9, 0.1, 0.5, 0.7;
  const std::vector<std::size_t> edges{0, 2, 3};
  EXPECT_NEAR(training::mask_size_penalty(t.constant(p), edges, 0.25).scalar(), 0.45 * 0.45, 1e-15);
  EXPECT_EQ(training::mask_size_penalty(t.constant(p), std::vector<std::size_t>{}, 0.25).scalar(), 0.0);
}

TEST(JointRisk, PriorVariantReducesToInvariant) {
  Rng rng(3);
  ad::Tape t;
  const std::vector<double> prior{0.2, 0.5, 0.3};
  Matrix logits = random_matrix(rng, 6, 3, -2, 2);
  Var lpc = ad::log_softmax_rows(t.constant(logits));
  Matrix lps(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int k = 0; k < 3; ++k) lps(i, k) = std::log(prior[static_cast<std::size_t>(k)]);
  const auto y = random_labels(rng, 6, 3);
  const double joint = training::joint_risk(lpc, t.constant(lps), y, prior).scalar();
  const double ce = -ad::mean(ad::pick(lpc, y)).scalar();
  EXPECT_NEAR(joint, ce, 1e-12);

  Matrix onehot = Matrix::Constant(6, 3, -800.0);
  for (int i = 0; i < 6; ++i) onehot(i, static_cast<ad::Index>(y[static_cast<std::size_t>(i)])) = 0.0;
  EXPECT_NEAR(training::joint_risk(t.constant(onehot), t.constant(onehot), y, prior).scalar(), 0.0, 1e-12);
}

TEST(Hscic, ConstantVariantGivesZero) {
  Rng rng(4);
  ad::Tape t;
  const auto y = random_labels(rng, 20, 3);
  Var x = t.constant(random_matrix(rng, 20, 4));
  Var z = t.constant(Matrix::Constant(20, 4, 0.3));
  EXPECT_LE(training::hscic_penalty(x, z, y, 3).scalar(), 1e-6);
  EXPECT_THROW(training::hscic_penalty(t.constant(Matrix::Zero(7, 2)), t.constant(Matrix::Zero(7, 2)),
                                       std::vector<std::size_t>(7, 0), 3),
               DomainError);
}

TEST(Hscic, WeightsHaveUnitColumnSums) {
  Rng rng(5);
  const auto y = random_labels(rng, 30, 3);
  const Matrix w = training::hscic_weights(y, 3, 1e-3);
  for (ad::Index j = 0; j < w.cols(); ++j) EXPECT_NEAR(w.col(j).sum(), 1.0, 1e-12);
}

// Permutation-test oracle: shuffle z within label groups to sample the null.
TEST(Hscic, PermutationNullSeparatesDependence) {
  Rng rng(6);
  const std::size_t n = 256;
  const auto y = random_labels(rng, n, 3);
  Matrix mu = random_matrix(rng, 3, 2, -2, 2), nu = random_matrix(rng, 3, 2, -2, 2);
  Matrix x(n, 2), z(n, 2);
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < 2; ++d) {
      x(static_cast<ad::Index>(i), d) = mu(static_cast<ad::Index>(y[i]), d) + rng.normal();
      z(static_cast<ad::Index>(i), d) = nu(static_cast<ad::Index>(y[i]), d) + rng.normal();
    }
  const auto stat = [&](const Matrix& a, const Matrix& b) {
    ad::Tape t;
    return training::hscic_penalty(t.constant(a), t.constant(b), y, 3).scalar();
  };
  std::vector<std::vector<std::size_t>> groups(3);
  for (std::size_t i = 0; i < n; ++i) groups[y[i]].push_back(i);
  const auto null_quantile = [&](const Matrix& a, const Matrix& b, double q) {
    std::vector<double> null;
    for (int r = 0; r < 100; ++r) {
      Matrix shuffled = b;
      for (const auto& g : groups) {
        auto perm = g;
        rng.shuffle(perm.begin(), perm.end());
        for (std::size_t i = 0; i < g.size(); ++i) shuffled.row(static_cast<ad::Index>(g[i])) = b.row(static_cast<ad::Index>(perm[i]));
      }
      null.push_back(stat(a, shuffled));
    }
    std::sort(null.begin(), null.end());
    return null[static_cast<std::size_t>(q * 99.0)];
  };
  EXPECT_LT(stat(x, z), null_quantile(x, z, 0.95));
  EXPECT_GT(stat(x, x), null_quantile(x, x, 0.99));
}

constexpr int kInstances = 20;

template <typename Build>
void expect_gradients(const char* term, Build build) {
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(mix_seed(0x7e57, static_cast<std::uint64_t>(k)));
    const auto [inputs, fn] = build(rng);
    const auto r = check_gradients(inputs, fn);
    EXPECT_LE(r.relative_error, 1e-4) << term << " instance " << k;
    EXPECT_GT(r.analytic_norm, 0.0) << term << " instance " << k;
  }
}

TEST(RiskGradients, PnsRisk) {
  expect_gradients("pns_risk", [](Rng& rng) {
    const std::size_t n = rng.between(2, 8);
    const auto y = random_labels(rng, n, 3);
    testing::Inputs in{{"logits", random_matrix(rng, static_cast<ad::Index>(n), 3, -2, 2)},
                       {"sim", random_matrix(rng, static_cast<ad::Index>(n), 4, -2, 2)}};
    testing::ScalarFn f = [y](ad::Tape&, const Leaves& x) {
      Var e_hat = ad::scale(ad::row_sum(ad::sigmoid(x.at("sim"))), 0.25);
      return training::pns_risk(ad::softmax_rows(x.at("logits")), y, {0.2, 0.3, 0.5}, e_hat);
    };
    return std::pair{in, f};
  });
}

TEST(RiskGradients, InvariantRisk) {
  expect_gradients("invariant_risk", [](Rng& rng) {
    const std::size_t n = rng.between(4, 10);
    const auto y = random_labels(rng, n, 2);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; i += 2) rows.push_back(i);
    std::vector<std::size_t> anchor_labels;
    for (auto r : rows) anchor_labels.push_back(y[r]);
    testing::Inputs in{{"logits", random_matrix(rng, static_cast<ad::Index>(rows.size()), 2, -2, 2)},
                       {"reps", random_matrix(rng, static_cast<ad::Index>(n), 3)}};
    testing::ScalarFn f = [y, rows, anchor_labels](ad::Tape&, const Leaves& x) {
      return training::invariant_risk(ad::log_softmax_rows(x.at("logits")), anchor_labels, x.at("reps"), y, rows, 0.5);
    };
    return std::pair{in, f};
  });
}

TEST(RiskGradients, MaskSizePenalty) {
  expect_gradients("mask_size_penalty", [](Rng& rng) {
    const std::size_t e = rng.between(2, 12);
    std::vector<std::size_t> edges;
    for (std::size_t i = 0; i < e; ++i)
      if (rng.uniform(0.0, 1.0) < 0.6) edges.push_back(i);
    if (edges.empty()) edges.push_back(0);
    testing::Inputs in{{"logits", random_matrix(rng, static_cast<ad::Index>(e), 1, -3, 3)}};
    testing::ScalarFn f = [edges](ad::Tape&, const Leaves& x) {
      return training::mask_size_penalty(ad::sigmoid(x.at("logits")), edges, 0.3);
    };
    return std::pair{in, f};
  });
}

TEST(RiskGradients, JointRisk) {
  expect_gradients("joint_risk", [](Rng& rng) {
    const std::size_t n = rng.between(2, 8);
    const auto y = random_labels(rng, n, 3);
    testing::Inputs in{{"c", random_matrix(rng, static_cast<ad::Index>(n), 3, -2, 2)},
                       {"s", random_matrix(rng, static_cast<ad::Index>(n), 3, -2, 2)}};
    testing::ScalarFn f = [y](ad::Tape&, const Leaves& x) {
      return training::joint_risk(ad::log_softmax_rows(x.at("c")), ad::log_softmax_rows(x.at("s")), y, {0.5, 0.3, 0.2});
    };
    return std::pair{in, f};
  });
}

TEST(RiskGradients, HscicPenalty) {
  expect_gradients("hscic_penalty", [](Rng& rng) {
    const std::size_t n = rng.between(8, 14);
    const auto y = random_labels(rng, n, 3);
    testing::Inputs in{{"x", random_matrix(rng, static_cast<ad::Index>(n), 3)},
                       {"z", random_matrix(rng, static_cast<ad::Index>(n), 3)}};
    testing::ScalarFn f = [y](ad::Tape&, const Leaves& x) { return training::hscic_penalty(x.at("x"), x.at("z"), y, 3); };
    return std::pair{in, f};
  });
}

// Two environments with eight graphs each.
training::StepInputs toy_step(Rng& rng) {
  static std::vector<data::Graph> graphs;
  graphs.clear();
  training::StepInputs in;
  in.envs = {"e0", "e1"};
  for (std::size_t e = 0; e < 2; ++e) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < 8; ++i) {
      rows.push_back(graphs.size());
      graphs.push_back(testing::random_small_graph(rng, 3, 6, 4, 3, in.envs[e]));
      graphs.back().label = i % 3;
    }
    in.env_rows.push_back(rows);
    in.priors.push_back({0.375, 0.375, 0.25});
  }
  std::vector<const data::Graph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  in.batch = model::GraphBatch::of(ptrs);
  return in;
}

TEST(ObjectiveGradients, FullObjectiveMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(mix_seed(0x0b1, s));
    const auto in = toy_step(rng);
    TrainConfig config;
    config.model = model::ModelConfig{4, 4, 3, model::Readout::mean};
    config.k = 2;
    config.lambda_ci = 0.5;
    const auto params = model::ModelParams::init(config.model, in.envs, s);
    const auto r = testing::check_model_gradients(params, [&](const model::Bound& b) {
      return training::objective(b, in, config, 0.8, s).loss;
    });
    EXPECT_LE(r.relative_error, 1e-4) << "instance " << s;
  }
}

TEST(Objective, BreakdownTotalsAndAblations) {
  Rng rng(7);
  const auto in = toy_step(rng);
  TrainConfig config;
  config.model = model::ModelConfig{4, 5, 3, model::Readout::mean};
  config.k = 3;
  const auto params = model::ModelParams::init(config.model, in.envs, 1);
  for (auto objective : {Objective::full, Objective::no_pns, Objective::erm}) {
    config.objective = objective;
    ad::Tape t;
    model::Bound b(t, params);
    const auto out = training::objective(b, in, config, 0.5, 3);
    double sum = 0.0;
    for (const auto& r : out.risks) {
      EXPECT_NEAR(r.total, r.r_ns + r.r_inv + r.r_joint + config.lambda_ci * r.r_ci, 1e-9);
      sum += r.total;
      if (objective != Objective::full) EXPECT_EQ(r.r_ns, 0.0);
      if (objective == Objective::erm) EXPECT_EQ(r.r_joint, 0.0);
    }
    EXPECT_NEAR(out.loss.scalar(), sum, 1e-9);
    t.backward(out.loss);
    const auto grads = b.gradients();
    const double variant = grads.at("theta_s/l1/fc1/W").norm() + grads.at("Phi_s/e0/fc1/W").norm();
    if (objective == Objective::erm) EXPECT_EQ(variant, 0.0);
    else EXPECT_GT(variant, 0.0);
  }
}

TEST(Objective, WithoutPnsAndPenaltyOnlyInvariantAndJointRemain) {
  Rng rng(8);
  const auto in = toy_step(rng);
  TrainConfig config;
  config.model = model::ModelConfig{4, 5, 3, model::Readout::mean};
  config.objective = Objective::no_pns;
  config.lambda_ci = 0.0;
  const auto params = model::ModelParams::init(config.model, in.envs, 2);
  ad::Tape t;
  model::Bound b(t, params);
  const auto out = training::objective(b, in, config, 0.5, 4);
  double expected = 0.0;
  for (const auto& r : out.risks) {
    EXPECT_EQ(r.r_ns, 0.0);
    EXPECT_EQ(r.r_ci, 0.0);
    expected += r.r_inv + r.r_joint;
  }
  EXPECT_NEAR(out.loss.scalar(), expected, 1e-12);
}

data::Dataset toy_dataset(std::size_t per_env, std::uint64_t seed) {
  return data::split_bias_levels({0.7, 0.9}, per_env, 30, seed, 4, 5).train;
}

TEST(Train, DeterministicGivenSeed) {
  TrainConfig config;
  config.model.hidden = 6;
  config.epochs = 2;
  config.batch_size = 16;
  config.k = 2;
  const auto data = toy_dataset(40, 1);
  const auto a = training::train(config, data);
  const auto b = training::train(config, data);
  EXPECT_EQ(model::serialize_checkpoint(a.params), model::serialize_checkpoint(b.params));
  config.seed = 1;
  EXPECT_NE(model::serialize_checkpoint(training::train(config, data).params), model::serialize_checkpoint(a.params));
}

TEST(Train, DegenerateConfigLossDecreases) {
  TrainConfig config;
  config.model.hidden = 8;
  config.objective = Objective::no_pns;
  config.lambda_ci = 0.0;
  config.epochs = 12;
  config.batch_size = 16;
  config.learning_rate = 5e-3;
  const auto result = training::train(config, toy_dataset(64, 2));
  ASSERT_EQ(result.log.size(), 24u);
  double early = 0.0, late = 0.0;
  for (const auto& e : result.log) {
    EXPECT_TRUE(std::isfinite(e.risks.total));
    if (e.epoch < 3) early += e.risks.total;
    if (e.epoch >= 9) late += e.risks.total;
  }
  EXPECT_LT(late, early);
}

TEST(Train, NonFiniteLossNamesTheTerm) {
  auto data = toy_dataset(30, 3);
  data.graphs[0].node_features.setConstant(1e308);
  TrainConfig config;
  config.model.hidden = 4;
  config.epochs = 1;
  config.batch_size = 64;
  config.k = 1;
  try {
    training::train(config, data);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("r_"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsInvalidConfig) {
  TrainConfig config;
  config.learning_rate = 0.0;
  EXPECT_THROW(training::train(config, toy_dataset(30, 4)), DomainError);
  EXPECT_THROW(training::parse_objective("bogus"), DomainError);
  EXPECT_NEAR(TrainConfig{}.tau_at(59), 0.3, 1e-15);
  EXPECT_NEAR(TrainConfig{}.tau_at(0), 1.0, 1e-15);
}

TEST(Train, EpochLogRoundTrip) {
  std::vector<training::EpochLog> log(2);
  log[0].epoch = 0;
  log[0].risks = {"a", -0.1, 1.2, 0.9, 0.01, 2.00001};
  log[0].train_accuracy = 0.5;
  log[1].epoch = 1;
  log[1].risks = {"b", 0.0, 1.0, 0.8, 0.0, 1.8};
  const auto path = (std::filesystem::temp_directory_path() / "snigl_log_test.jsonl").string();
  training::write_epoch_log(log, path);
  const auto back = training::read_epoch_log(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].risks.env, "a");
  EXPECT_DOUBLE_EQ(back[0].risks.total, 2.00001);
  EXPECT_DOUBLE_EQ(back[0].train_accuracy, 0.5);
  std::filesystem::remove(path);
  EXPECT_THROW(training::read_epoch_log(path), MissingInputError);
}

}  // namespace
}  // namespace snigl
