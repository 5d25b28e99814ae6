#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "snigl/causation.hpp"
#include "snigl/diagnostics.hpp"
#include "snigl/error.hpp"
#include "snigl/scm.hpp"

namespace snigl {
namespace {

using causation::CalibrationStats;
using causation::CombineMode;
using causation::Probability;
using causation::Simplex;

constexpr double kExact = 1e-9;

// Values below were produced by the enumeration oracle and frozen.
constexpr double kCombineUniformPrior = 6.0 / 7.0;     // 0.857143
constexpr double kCombineQuarterPrior = 18.0 / 19.0;   // 0.947368
constexpr double kCombineQuarterPaper = 2.0 / 3.0;
constexpr double kXorPns = 0.9;

double posterior_y1(const testing::FactorizedJoint& j, std::size_t c, std::size_t s) {
  return scm::exact_posterior(j.table(), "Y", {{"C", c}, {"S", s}})[1];
}

TEST(PnsLowerBound, UninformativeCauseIsZero) {
  EXPECT_DOUBLE_EQ(causation::pns_lower_bound(Probability(0.5), Probability(0.5), Probability(0.3)).value, 0.0);
}

TEST(PnsLowerBound, HandSubstitution) {
  EXPECT_NEAR(causation::pns_lower_bound(Probability(0.9), Probability(0.5), Probability(0.2)).value, 0.5, kExact);
}

TEST(PnsLowerBound, BelowExactPnsOnXorModel) {
  scm::DiscreteScm m;
  m.add_exogenous("U", {0.9, 0.1});
  m.add_exogenous("C", {0.5, 0.5});
  m.add_endogenous("Y", 2, {"C", "U"}, std::vector<std::size_t>{0, 1, 1, 0});
  const double exact = scm::exact_pns(m, {"C", 1}, {"Y", 1});
  ASSERT_NEAR(exact, kXorPns, kExact);
  const double bound = causation::pns_lower_bound(Probability(0.9), Probability(0.5), Probability(0.5)).value;
  EXPECT_NEAR(bound, 0.8, kExact);
  EXPECT_LE(bound, exact);
}

TEST(PnsLowerBound, ClampsAboveAtOne) {
  EXPECT_DOUBLE_EQ(causation::pns_lower_bound(Probability(1.0), Probability(0.1), Probability(0.5)).value, 1.0);
}

TEST(PnsLowerBound, DegenerateDenominatorThrows) {
  EXPECT_THROW(causation::pns_lower_bound(Probability(0.9), Probability(0.5), Probability(1.0)), DegenerateError);
  EXPECT_THROW(causation::pns_lower_bound(Probability(0.9), Probability(0.5), Probability(1.0 - 1e-7)),
               DegenerateError);
}

TEST(Probability, RejectsOutOfRange) {
  EXPECT_THROW(Probability(1.5), DomainError);
  EXPECT_THROW(Probability(-0.1), DomainError);
  EXPECT_THROW(Probability(std::nan("")), DomainError);
}

TEST(Simplex, ValidatesSumAndLength) {
  EXPECT_THROW(Simplex({1.0}), DomainError);
  EXPECT_THROW(Simplex({0.5, 0.6}), DomainError);
  EXPECT_NO_THROW(Simplex({0.5, 0.5}));
  EXPECT_EQ(Simplex({0.4, 0.3, 0.3}).argmax(), 0u);
  EXPECT_EQ(Simplex::uniform(4).argmax(), 0u);
}

TEST(FlipRatesBinary, DeterministicPredictor) {
  const std::vector<double> p{0, 1, 1, 0};
  const auto s = causation::estimate_flip_rates_binary(p);
  EXPECT_NEAR(s.eps1, 1.0, kExact);
  EXPECT_NEAR(s.eps0, 1.0, kExact);
}

TEST(FlipRatesBinary, HandArithmetic) {
  const std::vector<double> p{0.6, 0.8};
  const auto s = causation::estimate_flip_rates_binary(p);
  EXPECT_NEAR(s.eps1, 0.5 / 0.7, kExact);
  EXPECT_NEAR(s.eps0, 0.1 / 0.3, kExact);
  EXPECT_NEAR(s.eps1, 0.714286, 1e-6);
  EXPECT_NEAR(s.eps0, 0.333333, 1e-6);
}

TEST(FlipRatesBinary, ConstantPredictorCollapses) {
  const std::vector<double> p(17, 0.37);
  const auto s = causation::estimate_flip_rates_binary(p);
  EXPECT_NEAR(s.eps1, 0.37, kExact);
  EXPECT_NEAR(s.eps0, 0.63, kExact);
  EXPECT_TRUE(s.binary_degenerate());
}

TEST(FlipRatesBinary, Errors) {
  EXPECT_THROW(causation::estimate_flip_rates_binary(std::vector<double>{}), DomainError);
  EXPECT_THROW(causation::estimate_flip_rates_binary(std::vector<double>{0.0, 0.0}), DegenerateError);
  EXPECT_THROW(causation::estimate_flip_rates_binary(std::vector<double>{1.0, 1.0}), DegenerateError);
}

TEST(CalibrateBinary, NoiselessIsIdentity) {
  EXPECT_NEAR(causation::calibrate_binary(0.7, CalibrationStats::binary(1.0, 1.0)), 0.7, kExact);
}

TEST(CalibrateBinary, InvertsForwardNoise) {
  const double forward = 0.8 * 0.9 + 0.2 * 0.2;
  ASSERT_NEAR(forward, 0.76, kExact);
  EXPECT_NEAR(causation::calibrate_binary(0.76, CalibrationStats::binary(0.8, 0.9)), 0.8, kExact);
}

TEST(CalibrateBinary, DegenerateThrows) {
  EXPECT_THROW(causation::calibrate_binary(0.5, CalibrationStats::binary(0.6, 0.4)), DegenerateError);
}

TEST(CalibrateBinary, ClipsToUnitInterval) {
  const auto s = CalibrationStats::binary(0.8, 0.9);
  EXPECT_DOUBLE_EQ(causation::calibrate_binary(0.1, s), 0.0);
  EXPECT_DOUBLE_EQ(causation::calibrate_binary(0.95, s), 1.0);
}

TEST(ConfusionMulticlass, OneHotRowsGiveIdentity) {
  std::vector<Simplex> rows{Simplex::one_hot(3, 0), Simplex::one_hot(3, 2), Simplex::one_hot(3, 1)};
  const auto s = causation::estimate_confusion_multiclass(rows);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.at(i, j), i == j ? 1.0 : 0.0, kExact);
}

TEST(ConfusionMulticlass, ConstantRowsRepeatColumns) {
  const Simplex r{0.2, 0.5, 0.3};
  std::vector<Simplex> rows(5, r);
  const auto s = causation::estimate_confusion_multiclass(rows);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.at(i, j), r[i], kExact);
}

TEST(ConfusionMulticlass, MatchesBinaryPath) {
  std::vector<Simplex> rows{Simplex{0.4, 0.6}, Simplex{0.2, 0.8}};
  const auto m = causation::estimate_confusion_multiclass(rows);
  const auto b = causation::estimate_flip_rates_binary(std::vector<double>{0.6, 0.8});
  EXPECT_NEAR(m.at(1, 1), b.eps1, kExact);
  EXPECT_NEAR(m.at(0, 0), b.eps0, kExact);
  EXPECT_NEAR(m.at(1, 1), 0.714286, 1e-6);
  EXPECT_NEAR(m.at(0, 0), 0.333333, 1e-6);
}

TEST(ConfusionMulticlass, RaggedRowsThrow) {
  std::vector<Simplex> rows{Simplex{0.5, 0.5}, Simplex{0.2, 0.3, 0.5}};
  EXPECT_THROW(causation::estimate_confusion_multiclass(rows), DomainError);
}

CalibrationStats diag_confusion(double on, double off) {
  return CalibrationStats::multiclass(3, {on, off, off, off, on, off, off, off, on});
}

TEST(CalibrateMulticlass, IdentityConfusion) {
  const Simplex p{0.1, 0.6, 0.3};
  const auto h = causation::calibrate_multiclass(p, diag_confusion(1.0, 0.0));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(h[i], p[i], kExact);
}

TEST(CalibrateMulticlass, InvertsForwardMultiply) {
  const auto m = diag_confusion(0.8, 0.1);
  const std::vector<double> truth{0.5, 0.3, 0.2};
  std::vector<double> forward(3, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) forward[i] += m.at(i, j) * truth[j];
  ASSERT_NEAR(forward[0], 0.45, kExact);
  ASSERT_NEAR(forward[1], 0.31, kExact);
  ASSERT_NEAR(forward[2], 0.24, kExact);
  const auto h = causation::calibrate_multiclass(Simplex{0.45, 0.31, 0.24}, m);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(h[i], truth[i], kExact);
}

TEST(CalibrateMulticlass, SingularThrows) {
  const auto m = CalibrationStats::multiclass(3, {0.5, 0.5, 0.1, 0.3, 0.3, 0.2, 0.2, 0.2, 0.7});
  EXPECT_THROW(causation::calibrate_multiclass(Simplex{0.3, 0.3, 0.4}, m), DegenerateError);
}

TEST(CalibrateMulticlass, WarnsWhenIllConditioned) {
  const double e = 1e-9;
  const auto m = CalibrationStats::multiclass(2, {0.5 + e, 0.5 - e, 0.5 - e, 0.5 + e});
  std::vector<std::string> seen;
  auto previous = set_warning_handler([&](std::string_view msg) { seen.emplace_back(msg); });
  EXPECT_NO_THROW(causation::calibrate_multiclass(Simplex{0.5, 0.5}, m));
  set_warning_handler(previous);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_NE(seen[0].find("condition"), std::string::npos);
}

TEST(CalibrationStats, RejectsNonStochasticColumns) {
  EXPECT_THROW(CalibrationStats::multiclass(2, {0.5, 0.5, 0.4, 0.4}), DomainError);
  EXPECT_THROW(CalibrationStats::multiclass(2, {1.0, 0.0, 0.0}), DomainError);
}

TEST(CalibrationStats, RecordRoundTrip) {
  const auto b = CalibrationStats::binary(0.8123456789012345, 0.9);
  EXPECT_EQ(CalibrationStats::from_record(b.to_record()), b);
  const auto m = diag_confusion(0.8, 0.1);
  EXPECT_EQ(CalibrationStats::from_record(m.to_record()), m);
  EXPECT_THROW(CalibrationStats::from_record("snigl-calibration v2\nkind=binary\n"), VersionError);
  EXPECT_THROW(CalibrationStats::from_record("garbage"), ParseError);
}

TEST(CombineBinary, UninformativeVariantCollapses) {
  EXPECT_NEAR(causation::combine_binary(0.8, 0.3, 0.3), 0.8, kExact);
}

TEST(CombineBinary, MatchesOraclePosteriorUniformPrior) {
  const auto j = testing::realize_binary_joint(0.5, 0.8, 0.6);
  ASSERT_NEAR(posterior_y1(j, 1, 1), kCombineUniformPrior, kExact);
  EXPECT_NEAR(causation::combine_binary(0.8, 0.6, 0.5), kCombineUniformPrior, kExact);
  EXPECT_NEAR(causation::combine_binary(0.8, 0.6, 0.5), 0.857143, 1e-6);
}

TEST(CombineBinary, MatchesOraclePosteriorSkewedPrior) {
  const auto j = testing::realize_binary_joint(0.25, 0.8, 0.6);
  ASSERT_NEAR(j.y_given_c(1)[1], 0.8, kExact);
  ASSERT_NEAR(j.y_given_s(1)[1], 0.6, kExact);
  ASSERT_NEAR(posterior_y1(j, 1, 1), kCombineQuarterPrior, kExact);
  EXPECT_NEAR(causation::combine_binary(0.8, 0.6, 0.25), kCombineQuarterPrior, kExact);
  EXPECT_NEAR(causation::combine_binary(0.8, 0.6, 0.25, CombineMode::paper), kCombineQuarterPaper, kExact);
}

TEST(CombineBinary, ClampsExtremeInputs) {
  const double v = causation::combine_binary(1.0, 1.0, 0.5);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(v, 1.0);
  EXPECT_GT(causation::combine_binary(0.0, 0.0, 0.5), 0.0);
}

TEST(CombineMulticlass, UniformVariantReturnsInvariant) {
  const Simplex pc{0.2, 0.7, 0.1};
  const auto q = causation::combine_multiclass(pc, Simplex::uniform(3), Simplex::uniform(3));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(q[i], pc[i], kExact);
}

TEST(CombineMulticlass, MatchesBinaryForm) {
  const auto q = causation::combine_multiclass(Simplex{0.2, 0.8}, Simplex{0.4, 0.6}, Simplex{0.5, 0.5});
  EXPECT_NEAR(q[1], causation::combine_binary(0.8, 0.6, 0.5), kExact);
  EXPECT_NEAR(q[0], 0.142857, 1e-6);
  EXPECT_NEAR(q[1], 0.857143, 1e-6);
}

TEST(CombineMulticlass, TwoConditionallyIndependentReplicas) {
  // P(Y) uniform, binary features C and S with P(F=0|Y) = (0.5, 0.3, 0.2).
  testing::FactorizedJoint j;
  j.prior = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  j.c_given_y = {{0.5, 0.5}, {0.3, 0.7}, {0.2, 0.8}};
  j.s_given_y = j.c_given_y;
  const Simplex pc = j.y_given_c(0);
  ASSERT_NEAR(pc[0], 0.5, kExact);
  const auto oracle = scm::exact_posterior(j.table(), "Y", {{"C", 0}, {"S", 0}});
  const std::vector<double> frozen{0.25 / 0.38, 0.09 / 0.38, 0.04 / 0.38};
  const auto q = causation::combine_multiclass(Simplex{0.5, 0.3, 0.2}, Simplex{0.5, 0.3, 0.2}, Simplex::uniform(3));
  for (std::size_t i = 0; i < 3; ++i) {
    ASSERT_NEAR(oracle[i], frozen[i], kExact);
    EXPECT_NEAR(q[i], frozen[i], kExact);
  }
  EXPECT_NEAR(q[0], 0.657895, 1e-6);
  EXPECT_NEAR(q[1], 0.236842, 1e-6);
  EXPECT_NEAR(q[2], 0.105263, 1e-6);
}

TEST(CombineMode, ParsesNames) {
  EXPECT_EQ(causation::parse_combine_mode("corrected"), CombineMode::corrected);
  EXPECT_EQ(causation::parse_combine_mode("paper"), CombineMode::paper);
  EXPECT_THROW(causation::parse_combine_mode("plus"), DomainError);
  EXPECT_EQ(causation::parse_pseudo_label_mode("sample"), causation::PseudoLabelMode::sample);
  EXPECT_EQ(causation::to_string(causation::PseudoLabelMode::argmax), "argmax");
}

// Properties over randomized oracle joints.

TEST(CausationProperties, BoundBelowExactPnsOnRandomScms) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = testing::random_binary_cause_scm(rng, 12);
    const auto b = scm::pns_breakdown(m, {"C", 1}, {"Y", 1});
    if (b.p_c <= 1e-9 || b.p_c >= 1.0 - 1e-6) continue;
    const double bound =
        causation::pns_lower_bound(Probability(b.p_y_given_c), Probability(b.p_y), Probability(b.p_c)).value;
    EXPECT_LE(bound, b.pns + 1e-9) << scm::to_text(m);
  }
}

TEST(CausationProperties, CalibrationInvertsForwardNoise) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto j = testing::random_factorized_joint(rng, 2, 1 + rng.between(1, 4), 1 + rng.between(1, 4));
    std::vector<double> p, w;
    for (std::size_t c = 0; c < j.c_card(); ++c) {
      p.push_back(j.y_given_c(c)[1]);
      w.push_back(j.p_c(c));
    }
    const auto stats = causation::estimate_flip_rates_binary(p, {}, w);
    if (stats.binary_degenerate(1e-6)) continue;
    std::map<std::size_t, Simplex> predictor;
    for (std::size_t c = 0; c < j.c_card(); ++c) predictor.emplace(c, j.y_given_c(c));
    const auto ext = scm::simulate_pseudo_labels(j.table(), "C", predictor, causation::PseudoLabelMode::sample);
    for (std::size_t s = 0; s < j.s_card(); ++s) {
      const double noisy = scm::exact_posterior(ext, "Yhat", {{"S", s}})[1];
      const double h = causation::calibrate_binary(noisy, stats);
      EXPECT_NEAR(h, j.y_given_s(s)[1], kExact);
    }
  }
}

TEST(CausationProperties, MulticlassCalibrationInvertsForwardNoise) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto j = testing::random_factorized_joint(rng, 3, 4, 3);
    std::vector<Simplex> rows;
    std::vector<double> w;
    std::map<std::size_t, Simplex> predictor;
    for (std::size_t c = 0; c < j.c_card(); ++c) {
      rows.push_back(j.y_given_c(c));
      w.push_back(j.p_c(c));
      predictor.emplace(c, rows.back());
    }
    const auto stats = causation::estimate_confusion_multiclass(rows, {}, w);
    const auto ext = scm::simulate_pseudo_labels(j.table(), "C", predictor, causation::PseudoLabelMode::sample);
    for (std::size_t s = 0; s < j.s_card(); ++s) {
      const auto noisy = scm::exact_posterior(ext, "Yhat", {{"S", s}});
      const auto h = causation::calibrate_multiclass(noisy, stats);
      const auto truth = j.y_given_s(s);
      for (std::size_t y = 0; y < 3; ++y) EXPECT_NEAR(h[y], truth[y], 1e-7);
    }
  }
}

TEST(CausationProperties, ArgmaxPseudoLabelsCalibrateWithGeneralizedRates) {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const auto j = testing::random_factorized_joint(rng, 2, 4, 3);
    std::vector<double> p, q, w;
    std::map<std::size_t, Simplex> predictor;
    for (std::size_t c = 0; c < j.c_card(); ++c) {
      p.push_back(j.y_given_c(c)[1]);
      q.push_back(j.y_given_c(c).argmax() == 1 ? 1.0 : 0.0);
      w.push_back(j.p_c(c));
      predictor.emplace(c, j.y_given_c(c));
    }
    const auto stats = causation::estimate_flip_rates_binary(p, q, w);
    if (stats.binary_degenerate(1e-6)) continue;
    const auto ext = scm::simulate_pseudo_labels(j.table(), "C", predictor, causation::PseudoLabelMode::argmax);
    for (std::size_t s = 0; s < j.s_card(); ++s) {
      const double noisy = scm::exact_posterior(ext, "Yhat", {{"S", s}})[1];
      EXPECT_NEAR(causation::calibrate_binary(noisy, stats), j.y_given_s(s)[1], kExact);
    }
  }
}

TEST(CausationProperties, DegeneracyIffPseudoLabelIndependentOfLabel) {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    auto j = testing::random_factorized_joint(rng, 2, 3, 2);
    if (trial % 3 == 0) j.c_given_y[1] = j.c_given_y[0];  // C independent of Y
    std::vector<double> p, w;
    std::map<std::size_t, Simplex> predictor;
    for (std::size_t c = 0; c < j.c_card(); ++c) {
      p.push_back(j.y_given_c(c)[1]);
      w.push_back(j.p_c(c));
      predictor.emplace(c, j.y_given_c(c));
    }
    const auto stats = causation::estimate_flip_rates_binary(p, {}, w);
    const auto ext = scm::simulate_pseudo_labels(j.table(), "C", predictor, causation::PseudoLabelMode::sample);
    const auto yy = ext.marginal({"Y", "Yhat"});
    double dep = 0.0;
    const auto py = yy.marginal({"Y"}), pyh = yy.marginal({"Yhat"});
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b)
        dep = std::max(dep, std::abs(yy.cells()[a * 2 + b] - py.cells()[a] * pyh.cells()[b]));
    EXPECT_EQ(stats.binary_degenerate(1e-9), dep < 1e-12) << "dependence " << dep;
  }
}

TEST(CausationProperties, CombinationMatchesPosteriorAndPaperOnlyAtUniformPrior) {
  Rng rng(16);
  for (int trial = 0; trial < 60; ++trial) {
    const bool uniform = trial % 2 == 0;
    const std::size_t k = 2 + trial % 3;
    auto j = testing::random_factorized_joint(rng, k, 3, 3);
    if (uniform) j.prior.assign(k, 1.0 / static_cast<double>(k));
    const Simplex prior(j.prior);
    double paper_gap = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t s = 0; s < 3; ++s) {
        const auto oracle = scm::exact_posterior(j.table(), "Y", {{"C", c}, {"S", s}});
        const auto q = causation::combine_multiclass(j.y_given_c(c), j.y_given_s(s), prior);
        const auto qp = causation::combine_multiclass(j.y_given_c(c), j.y_given_s(s), prior, CombineMode::paper);
        for (std::size_t y = 0; y < k; ++y) {
          EXPECT_NEAR(q[y], oracle[y], kExact);
          paper_gap = std::max(paper_gap, std::abs(qp[y] - oracle[y]));
        }
        if (k == 2)
          EXPECT_NEAR(causation::combine_binary(j.y_given_c(c)[1], j.y_given_s(s)[1], j.prior[1]), oracle[1], kExact);
      }
    if (uniform)
      EXPECT_LT(paper_gap, kExact);
    else
      EXPECT_GT(paper_gap, 1e-6);
  }
}

TEST(CausationProperties, CombineBinaryMonotone) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const double pc = rng.uniform(0.01, 0.98), ps = rng.uniform(0.01, 0.98), pr = rng.uniform(0.01, 0.98);
    const double base = causation::combine_binary(pc, ps, pr);
    EXPECT_GT(causation::combine_binary(pc + 0.01, ps, pr), base);
    EXPECT_GT(causation::combine_binary(pc, ps + 0.01, pr), base);
    EXPECT_LT(causation::combine_binary(pc, ps, pr + 0.01), base);
  }
}

TEST(CausationProperties, ArgmaxStableUnderUniformPrior) {
  Rng rng(18);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 2 + trial % 4;
    const Simplex pc(testing::dirichlet(rng, k)), ps(testing::dirichlet(rng, k));
    const auto q = causation::combine_multiclass(pc, ps, Simplex::uniform(k));
    std::vector<double> prod(k);
    for (std::size_t y = 0; y < k; ++y) prod[y] = pc[y] * ps[y];
    EXPECT_EQ(q.argmax(), Simplex::normalized(prod).argmax());
  }
}

}  // namespace
}  // namespace snigl
