#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "snigl/adaptation.hpp"
#include "snigl/error.hpp"

namespace snigl {
namespace {

using adaptation::AdaptConfig;
using adaptation::PseudoLabels;
using causation::CalibrationKind;
using causation::CombineMode;
using causation::PseudoLabelMode;
using causation::Simplex;

constexpr std::size_t kPoolSize = 50000;

TEST(PseudoLabel, OneHotPredictionsAgreeAcrossModes) {
  std::vector<Simplex> inv{Simplex::one_hot(3, 2), Simplex::one_hot(3, 0), Simplex::one_hot(3, 1)};
  const auto a = adaptation::pseudo_label(inv, PseudoLabelMode::argmax, 1);
  const auto s = adaptation::pseudo_label(inv, PseudoLabelMode::sample, 1);
  EXPECT_EQ(a.labels, (std::vector<std::size_t>{2, 0, 1}));
  EXPECT_EQ(a.labels, s.labels);
}

TEST(PseudoLabel, ArgmaxTiesGoToLowestIndex) {
  const auto a = adaptation::pseudo_label({Simplex::uniform(3), Simplex({0.2, 0.4, 0.4})}, PseudoLabelMode::argmax, 0);
  EXPECT_EQ(a.labels, (std::vector<std::size_t>{0, 1}));
}

TEST(PseudoLabel, SampleModeMatchesPredictiveRate) {
  std::vector<Simplex> inv(10000, Simplex({0.9, 0.1}));
  const auto s = adaptation::pseudo_label(inv, PseudoLabelMode::sample, 17);
  const double rate = static_cast<double>(std::count(s.labels.begin(), s.labels.end(), 0)) / 10000.0;
  EXPECT_NEAR(rate, 0.9, 0.01);
  EXPECT_EQ(s.labels, adaptation::pseudo_label(inv, PseudoLabelMode::sample, 17).labels);
}

TEST(PseudoLabel, EmptyInputThrows) {
  EXPECT_THROW(adaptation::pseudo_label(std::vector<Simplex>{}, PseudoLabelMode::argmax, 0), DomainError);
}

// Two well-separated clusters in representation space.
struct SeparableToy {
  model::ModelParams params;
  ad::Matrix reps;
  std::vector<std::size_t> labels;
};

SeparableToy separable_toy(std::uint64_t seed) {
  model::ModelConfig mc;
  mc.feature_dim = 3;
  mc.hidden = 4;
  mc.num_classes = 2;
  SeparableToy toy{model::ModelParams::init(mc, {"e0", "e1"}, seed), ad::Matrix(200, 4), {}};
  Rng rng(seed);
  for (ad::Index i = 0; i < 200; ++i) {
    const std::size_t y = static_cast<std::size_t>(i % 2);
    for (ad::Index j = 0; j < 4; ++j) toy.reps(i, j) = (y == 1 ? 1.0 : -1.0) + 0.3 * rng.normal();
    toy.labels.push_back(y);
  }
  return toy;
}

AdaptConfig head_config() {
  AdaptConfig c;
  c.learning_rate = 1e-2;
  c.epochs = 40;
  c.seed = 5;
  return c;
}

TEST(FitVariantClassifier, SeparableToyIsLearned) {
  const auto toy = separable_toy(3);
  const auto fit = adaptation::fit_variant_classifier(toy.params, toy.reps, toy.labels, head_config());
  EXPECT_GE(fit.train_accuracy, 0.95);
  EXPECT_TRUE(fit.params.has_variant_head("test"));
}

TEST(FitVariantClassifier, OnlyTheTestHeadChanges) {
  const auto toy = separable_toy(3);
  const auto fit = adaptation::fit_variant_classifier(toy.params, toy.reps, toy.labels, head_config());
  const std::string prefix = model::head_prefix(model::Branch::variant, "test") + "/";
  std::size_t head_tensors = 0;
  for (const auto& [name, m] : fit.params.tensors) {
    if (name.rfind(prefix, 0) == 0) {
      ++head_tensors;
      continue;
    }
    const auto& before = toy.params.at(name);
    ASSERT_EQ(before.size(), m.size()) << name;
    EXPECT_EQ(std::memcmp(before.data(), m.data(), sizeof(double) * static_cast<std::size_t>(m.size())), 0) << name;
  }
  EXPECT_GT(head_tensors, 0u);
  EXPECT_EQ(fit.params.tensors.size(), toy.params.tensors.size() + head_tensors);
}

TEST(FitVariantClassifier, DeterministicGivenSeed) {
  const auto toy = separable_toy(3);
  const auto a = adaptation::fit_variant_classifier(toy.params, toy.reps, toy.labels, head_config());
  const auto b = adaptation::fit_variant_classifier(toy.params, toy.reps, toy.labels, head_config());
  EXPECT_TRUE(a.params == b.params);
}

TEST(FitVariantClassifier, SingleClassAborts) {
  const auto toy = separable_toy(3);
  std::vector<std::size_t> ones(toy.labels.size(), 1);
  EXPECT_THROW(adaptation::fit_variant_classifier(toy.params, toy.reps, ones, head_config()), DegenerateError);
}

TEST(CalibrateHead, OneHotInvariantIsIdentity) {
  PseudoLabels p = adaptation::pseudo_label({Simplex::one_hot(2, 0), Simplex::one_hot(2, 1), Simplex::one_hot(2, 1)},
                                            PseudoLabelMode::argmax, 0);
  const auto head = adaptation::calibrate_head(p, PseudoLabelMode::argmax, CalibrationKind::binary);
  EXPECT_NEAR(head.stats().eps0, 1.0, 1e-12);
  EXPECT_NEAR(head.stats().eps1, 1.0, 1e-12);
  EXPECT_NEAR(head(Simplex({0.3, 0.7}))[1], 0.7, 1e-12);

  PseudoLabels m = adaptation::pseudo_label({Simplex::one_hot(3, 0), Simplex::one_hot(3, 1), Simplex::one_hot(3, 2)},
                                            PseudoLabelMode::argmax, 0);
  const auto mh = adaptation::calibrate_head(m, PseudoLabelMode::argmax, CalibrationKind::multiclass);
  const Simplex x({0.2, 0.5, 0.3});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(mh(x)[k], x[k], 1e-12);
}

TEST(CalibrateHead, ConstantInvariantPredictorIsDegenerate) {
  std::vector<Simplex> constant(50, Simplex({0.4, 0.6}));
  for (auto mode : {PseudoLabelMode::argmax, PseudoLabelMode::sample}) {
    const auto p = adaptation::pseudo_label(constant, mode, 0);
    EXPECT_THROW(adaptation::calibrate_head(p, mode, CalibrationKind::binary), DegenerateError);
  }
  std::vector<Simplex> constant3(50, Simplex({0.2, 0.3, 0.5}));
  const auto p3 = adaptation::pseudo_label(constant3, PseudoLabelMode::sample, 0);
  EXPECT_THROW(adaptation::calibrate_head(p3, PseudoLabelMode::sample, CalibrationKind::multiclass), DegenerateError);
}

// A finite pool drawn from P(Y) P(C|Y) P(S|Y). The invariant predictor is the
// exact P(Y|C); the biased head is the empirical P(Yhat|S) of the pool, i.e. a
// perfectly fitted variant classifier.
struct OraclePool {
  testing::FactorizedJoint joint;
  std::vector<std::size_t> c, s;
  PseudoLabels pseudo;
  std::vector<Simplex> biased_by_s;
};

OraclePool draw_pool(const testing::FactorizedJoint& joint, PseudoLabelMode mode, std::uint64_t seed) {
  OraclePool pool{joint, {}, {}, {}, {}};
  Rng rng(seed);
  std::vector<Simplex> inv;
  for (std::size_t i = 0; i < kPoolSize; ++i) {
    const std::size_t y = rng.categorical(joint.prior);
    pool.c.push_back(rng.categorical(joint.c_given_y[y]));
    pool.s.push_back(rng.categorical(joint.s_given_y[y]));
    inv.push_back(joint.y_given_c(pool.c.back()));
  }
  pool.pseudo = adaptation::pseudo_label(std::move(inv), mode, seed + 1);
  const std::size_t k = joint.num_classes();
  std::vector<std::vector<double>> counts(joint.s_card(), std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < kPoolSize; ++i) counts[pool.s[i]][pool.pseudo.labels[i]] += 1.0;
  for (auto& row : counts) pool.biased_by_s.push_back(Simplex::normalized(row));
  return pool;
}

testing::FactorizedJoint binary_joint() {
  return {{0.4, 0.6},
          {{0.7, 0.2, 0.07, 0.03}, {0.03, 0.07, 0.2, 0.7}},
          {{0.5, 0.3, 0.2}, {0.2, 0.3, 0.5}}};
}

testing::FactorizedJoint three_class_joint() {
  return {{0.3, 0.3, 0.4},
          {{0.9, 0.05, 0.05}, {0.05, 0.9, 0.05}, {0.05, 0.05, 0.9}},
          {{0.6, 0.2, 0.1, 0.1}, {0.1, 0.6, 0.2, 0.1}, {0.2, 0.1, 0.3, 0.4}}};
}

void expect_calibrated_matches_oracle(const testing::FactorizedJoint& joint, CalibrationKind kind) {
  for (auto mode : {PseudoLabelMode::argmax, PseudoLabelMode::sample}) {
    const auto pool = draw_pool(joint, mode, 11);
    const auto head = adaptation::calibrate_head(pool.pseudo, mode, kind);
    for (std::size_t s = 0; s < joint.s_card(); ++s) {
      const Simplex got = head(pool.biased_by_s[s]);
      const Simplex want = joint.y_given_s(s);
      for (std::size_t y = 0; y < joint.num_classes(); ++y)
        EXPECT_NEAR(got[y], want[y], 0.02) << "mode " << causation::to_string(mode) << " s=" << s << " y=" << y;
      EXPECT_EQ(got.argmax(), want.argmax());
    }
  }
}

TEST(CalibrateHead, BinaryRecoversOracleConditional) {
  expect_calibrated_matches_oracle(binary_joint(), CalibrationKind::binary);
}

TEST(CalibrateHead, MulticlassRecoversOracleConditional) {
  expect_calibrated_matches_oracle(three_class_joint(), CalibrationKind::multiclass);
}

TEST(PredictEnsemble, PriorVariantReturnsInvariant) {
  const Simplex inv({0.2, 0.5, 0.3}), prior({0.3, 0.3, 0.4});
  const auto out = adaptation::predict_ensemble(inv, prior, prior, CombineMode::corrected);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(out[k], inv[k], 1e-12);
}

TEST(PredictEnsemble, NoEnsembleIsBitwiseInvariant) {
  const Simplex inv({0.123456789, 0.876543211});
  const auto out = adaptation::predict_ensemble(inv, Simplex({0.9, 0.1}), Simplex({0.5, 0.5}), CombineMode::corrected, true);
  EXPECT_EQ(out.values(), inv.values());
}

TEST(PredictEnsemble, MatchesOraclePosterior) {
  for (const auto& joint : {binary_joint(), three_class_joint()}) {
    const auto kind = joint.num_classes() == 2 ? CalibrationKind::binary : CalibrationKind::multiclass;
    // Sampled pseudo-labels share the label marginal, so their empirical
    // distribution is a valid prior.
    const auto pool = draw_pool(joint, PseudoLabelMode::sample, 23);
    const auto head = adaptation::calibrate_head(pool.pseudo, PseudoLabelMode::sample, kind);
    const auto prior = adaptation::label_distribution(pool.pseudo.labels, joint.num_classes());
    const auto table = joint.table();
    for (std::size_t c = 0; c < joint.c_card(); ++c)
      for (std::size_t s = 0; s < joint.s_card(); ++s) {
        const auto got = adaptation::predict_ensemble(joint.y_given_c(c), head(pool.biased_by_s[s]), prior,
                                                      CombineMode::corrected);
        const auto want = scm::exact_posterior(table, "Y", {{"C", c}, {"S", s}});
        for (std::size_t y = 0; y < joint.num_classes(); ++y) EXPECT_NEAR(got[y], want[y], 0.02) << "K=" << joint.num_classes() << " c=" << c << " s=" << s;
      }
  }
}

TEST(LabelDistribution, CountsAndRejectsOutOfRange) {
  const auto d = adaptation::label_distribution({0, 2, 2, 1}, 3);
  EXPECT_EQ(d.values(), (std::vector<double>{0.25, 0.25, 0.5}));
  EXPECT_THROW(adaptation::label_distribution({3}, 3), DomainError);
  EXPECT_THROW(adaptation::label_distribution({}, 3), DomainError);
}

TEST(RocAuc, HandValues) {
  EXPECT_DOUBLE_EQ(adaptation::roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
  EXPECT_DOUBLE_EQ(adaptation::roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(adaptation::roc_auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(adaptation::roc_auc({0.5, 0.5, 0.5}, {0, 1, 1}), 0.5);
  EXPECT_THROW(adaptation::roc_auc({0.5, 0.6}, {1, 1}), DomainError);
}

TEST(Predictions, FileRoundTripAndAccuracy) {
  std::vector<adaptation::Prediction> preds(3);
  preds[0] = {"g0", Simplex({0.7, 0.3}), Simplex({0.6, 0.4}), Simplex({0.2, 0.8}), 0, 1};
  preds[1] = {"g1", Simplex({0.1, 0.9}), std::nullopt, std::nullopt, 1, 1};
  preds[2] = {"g2", Simplex({0.6, 0.4}), std::nullopt, std::nullopt, 0, std::nullopt};
  const auto path = (std::filesystem::temp_directory_path() / "snigl_predictions_test.jsonl").string();
  adaptation::write_predictions(preds, path);
  const auto back = adaptation::read_predictions(path);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].graph_id, "g0");
  EXPECT_EQ(back[0].combined->values(), preds[0].combined->values());
  EXPECT_EQ(back[0].variant->values(), preds[0].variant->values());
  EXPECT_FALSE(back[1].combined.has_value());
  EXPECT_FALSE(back[2].true_label.has_value());
  EXPECT_DOUBLE_EQ(adaptation::accuracy(back), 1.0);
  EXPECT_DOUBLE_EQ(adaptation::invariant_accuracy(back), 0.5);

  std::ofstream(path) << "{\"graph_id\":\"g0\"}\n";
  EXPECT_THROW(adaptation::read_predictions(path), ParseError);
  std::filesystem::remove(path);
  EXPECT_THROW(adaptation::read_predictions(path), MissingInputError);
}

data::Dataset random_test_set(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  data::Dataset d;
  d.num_classes = 2;
  d.feature_dim = 4;
  d.environments = {"test"};
  for (std::size_t i = 0; i < n; ++i) {
    auto g = testing::random_small_graph(rng, 5, 9, 4, 2, "test");
    g.graph_id = "t" + std::to_string(i);
    d.graphs.push_back(std::move(g));
  }
  return d;
}

model::ModelParams small_params(std::uint64_t seed) {
  model::ModelConfig mc;
  mc.feature_dim = 4;
  mc.hidden = 6;
  mc.num_classes = 2;
  return model::ModelParams::init(mc, {"e0", "e1"}, seed);
}

TEST(Adapt, NoEnsembleLeavesCombinedAbsent) {
  AdaptConfig c;
  c.no_ensemble = true;
  const auto r = adaptation::adapt(small_params(1), random_test_set(2, 40), c);
  ASSERT_EQ(r.predictions.size(), 40u);
  for (const auto& p : r.predictions) {
    EXPECT_FALSE(p.combined.has_value());
    EXPECT_EQ(p.final().values(), p.invariant.values());
  }
  EXPECT_FALSE(r.calibration.has_value());
}

TEST(Adapt, FullPipelineIsDeterministic) {
  AdaptConfig c;
  c.epochs = 5;
  c.learning_rate = 1e-2;
  c.pseudo_label_mode = PseudoLabelMode::sample;
  const auto params = small_params(4);
  const auto test = random_test_set(5, 60);
  const auto a = adaptation::adapt(params, test, c);
  const auto b = adaptation::adapt(params, test, c);
  ASSERT_TRUE(a.calibration.has_value());
  EXPECT_EQ(a.calibration->kind, CalibrationKind::binary);
  EXPECT_TRUE(a.params == b.params);
  for (std::size_t i = 0; i < a.predictions.size(); ++i) {
    ASSERT_TRUE(a.predictions[i].combined.has_value());
    EXPECT_EQ(a.predictions[i].combined->values(), b.predictions[i].combined->values());
  }
}

TEST(Adapt, RejectsInvalidConfig) {
  AdaptConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), DomainError);
  c = AdaptConfig{};
  c.env = "a/b";
  EXPECT_THROW(c.validate(), DomainError);
}

}  // namespace
}  // namespace snigl
