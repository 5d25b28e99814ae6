#include "snigl/causation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "snigl/diagnostics.hpp"
#include "snigl/error.hpp"

namespace snigl::causation {
namespace {

constexpr const char* kRecordMagic = "snigl-calibration";
constexpr int kRecordVersion = 1;

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void check_unit(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError(std::string(what) + " must lie in [0, 1], got " + format_double(p));
  }
}

double weight_at(std::span<const double> weights, std::size_t i) {
  return weights.empty() ? 1.0 : weights[i];
}

void check_weights(std::span<const double> weights, std::size_t n) {
  if (weights.empty()) return;
  if (weights.size() != n) throw DomainError("weights length does not match samples");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("weights must be finite and >= 0");
}

}  // namespace

Probability::Probability(double value) : value_(value) { check_unit(value, "probability"); }

Simplex::Simplex(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() < 2) throw DomainError("simplex needs at least two entries");
  double total = 0.0;
  for (double v : values_) {
    check_unit(v, "simplex entry");
    total += v;
  }
  if (std::abs(total - 1.0) > kSimplexTolerance)
    throw DomainError("simplex entries sum to " + format_double(total));
}

Simplex Simplex::normalized(std::vector<double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("simplex weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw DegenerateError("simplex weights sum to zero");
  for (double& w : weights) w /= total;
  return Simplex(std::move(weights));
}

Simplex Simplex::uniform(std::size_t size) {
  return Simplex(std::vector<double>(size, 1.0 / static_cast<double>(size)));
}

Simplex Simplex::one_hot(std::size_t size, std::size_t index) {
  if (index >= size) throw DomainError("one_hot index out of range");
  std::vector<double> v(size, 0.0);
  v[index] = 1.0;
  return Simplex(std::move(v));
}

std::size_t Simplex::argmax() const {
  return static_cast<std::size_t>(std::max_element(values_.begin(), values_.end()) -
                                  values_.begin());
}

CalibrationStats CalibrationStats::binary(double eps0, double eps1) {
  check_unit(eps0, "eps0");
  check_unit(eps1, "eps1");
  CalibrationStats s;
  s.kind = CalibrationKind::binary;
  s.num_classes = 2;
  s.eps0 = eps0;
  s.eps1 = eps1;
  s.confusion = {eps0, 1.0 - eps1, 1.0 - eps0, eps1};
  return s;
}

CalibrationStats CalibrationStats::multiclass(std::size_t num_classes, std::vector<double> confusion) {
  if (num_classes < 2) throw DomainError("confusion matrix needs K >= 2");
  if (confusion.size() != num_classes * num_classes)
    throw DomainError("confusion matrix must have K*K entries");
  for (std::size_t j = 0; j < num_classes; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < num_classes; ++i) {
      const double v = confusion[i * num_classes + j];
      check_unit(v, "confusion entry");
      col += v;
    }
    if (std::abs(col - 1.0) > kSimplexTolerance)
      throw DomainError("confusion column " + std::to_string(j) + " sums to " + format_double(col));
  }
  CalibrationStats s;
  s.kind = CalibrationKind::multiclass;
  s.num_classes = num_classes;
  s.confusion = std::move(confusion);
  s.eps0 = s.at(0, 0);
  s.eps1 = s.at(1, 1);
  return s;
}

bool CalibrationStats::binary_degenerate(double tol) const {
  return std::abs(eps0 + eps1 - 1.0) <= tol;
}

std::string CalibrationStats::to_record() const {
  std::ostringstream out;
  out << kRecordMagic << " v" << kRecordVersion << '\n';
  out << "kind=" << (kind == CalibrationKind::binary ? "binary" : "multiclass") << '\n';
  out << "K=" << num_classes << '\n';
  out << "eps0=" << format_double(eps0) << '\n';
  out << "eps1=" << format_double(eps1) << '\n';
  out << "confusion=";
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    if (i) out << ' ';
    out << format_double(confusion[i]);
  }
  out << '\n';
  return out.str();
}

CalibrationStats CalibrationStats::from_record(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty calibration record", 1);
  {
    std::istringstream head(line);
    std::string magic, version;
    head >> magic >> version;
    if (magic != kRecordMagic) throw ParseError("not a calibration record", 1);
    if (version != "v" + std::to_string(kRecordVersion))
      throw VersionError("unsupported calibration record version '" + version + "'", 1);
  }
  std::string kind;
  std::size_t k = 0;
  double eps0 = -1.0, eps1 = -1.0;
  std::vector<double> confusion;
  bool have_k = false, have_e0 = false, have_e1 = false, have_m = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", lineno);
    const std::string key = line.substr(0, eq);
    std::istringstream value(line.substr(eq + 1));
    if (key == "kind") {
      value >> kind;
    } else if (key == "K") {
      if (!(value >> k)) throw ParseError("bad K", lineno);
      have_k = true;
    } else if (key == "eps0") {
      if (!(value >> eps0)) throw ParseError("bad eps0", lineno);
      have_e0 = true;
    } else if (key == "eps1") {
      if (!(value >> eps1)) throw ParseError("bad eps1", lineno);
      have_e1 = true;
    } else if (key == "confusion") {
      double v;
      while (value >> v) confusion.push_back(v);
      have_m = true;
    } else {
      throw ParseError("unknown key '" + key + "'", lineno);
    }
  }
  if (!have_k || !have_e0 || !have_e1 || !have_m) throw ParseError("incomplete calibration record");
  if (kind == "binary") {
    if (k != 2) throw ParseError("binary record must have K=2");
    return binary(eps0, eps1);
  }
  if (kind == "multiclass") return multiclass(k, std::move(confusion));
  throw ParseError("unknown kind '" + kind + "'");
}

PnsBound pns_lower_bound(Probability p_y_given_c, Probability p_y, Probability mean_p_c,
                         double delta, std::size_t cause_value, std::size_t effect_value) {
  const double denom = 1.0 - mean_p_c.value();
  if (mean_p_c.value() >= 1.0 - delta)
    throw DegenerateError("PNS bound denominator 1 - E[P(C=c|G)] = " + format_double(denom) +
                          " is below the configured delta");
  const double raw = (p_y_given_c.value() - p_y.value()) / denom;
  return PnsBound{std::clamp(raw, 0.0, 1.0), cause_value, effect_value};
}

CalibrationStats estimate_flip_rates_binary(std::span<const double> p,
                                            std::span<const double> q,
                                            std::span<const double> weights) {
  if (p.empty()) throw DomainError("estimate_flip_rates_binary: empty input");
  if (!q.empty() && q.size() != p.size())
    throw DomainError("pseudo-label probabilities must match predictor length");
  check_weights(weights, p.size());
  double wsum = 0.0, m1 = 0.0, m0 = 0.0, m11 = 0.0, m00 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    check_unit(p[i], "P(Y=1|C)");
    const double qi = q.empty() ? p[i] : q[i];
    check_unit(qi, "P(Yhat=1|C)");
    const double w = weight_at(weights, i);
    wsum += w;
    m1 += w * p[i];
    m0 += w * (1.0 - p[i]);
    m11 += w * p[i] * qi;
    m00 += w * (1.0 - p[i]) * (1.0 - qi);
  }
  if (!(wsum > 0.0)) throw DegenerateError("estimate_flip_rates_binary: weights sum to zero");
  m1 /= wsum;
  m0 /= wsum;
  m11 /= wsum;
  m00 /= wsum;
  if (m1 < kDivisionGuard) throw DegenerateError("E[P(Y=1|C)] is below the division guard");
  if (m0 < kDivisionGuard) throw DegenerateError("E[P(Y=0|C)] is below the division guard");
  return CalibrationStats::binary(std::clamp(m00 / m0, 0.0, 1.0), std::clamp(m11 / m1, 0.0, 1.0));
}

double calibrate_binary(double p_hat_y1, const CalibrationStats& stats) {
  check_unit(p_hat_y1, "P(Yhat=1|S)");
  if (stats.binary_degenerate())
    throw DegenerateError(
        "eps0 + eps1 = 1: pseudo-labels are independent of the true label (C and Y are "
        "independent), calibration is undefined");
  const double h = (p_hat_y1 + stats.eps0 - 1.0) / (stats.eps0 + stats.eps1 - 1.0);
  return std::clamp(h, 0.0, 1.0);
}

CalibrationStats estimate_confusion_multiclass(std::span<const Simplex> p,
                                               std::span<const Simplex> pseudo,
                                               std::span<const double> weights) {
  if (p.empty()) throw DomainError("estimate_confusion_multiclass: empty input");
  if (!pseudo.empty() && pseudo.size() != p.size())
    throw DomainError("pseudo-label distributions must match predictor length");
  check_weights(weights, p.size());
  const std::size_t k = p.front().size();
  std::vector<double> joint(k * k, 0.0);  // joint[i*k+j] = E[P(Y=j|C) P(Yhat=i|C)]
  std::vector<double> marg(k, 0.0);
  double wsum = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    const Simplex& pn = p[n];
    const Simplex& qn = pseudo.empty() ? pn : pseudo[n];
    if (pn.size() != k || qn.size() != k) throw DomainError("all rows must have the same length K");
    const double w = weight_at(weights, n);
    wsum += w;
    for (std::size_t j = 0; j < k; ++j) {
      marg[j] += w * pn[j];
      for (std::size_t i = 0; i < k; ++i) joint[i * k + j] += w * pn[j] * qn[i];
    }
  }
  if (!(wsum > 0.0)) throw DegenerateError("estimate_confusion_multiclass: weights sum to zero");
  std::vector<double> m(k * k);
  for (std::size_t j = 0; j < k; ++j) {
    const double denom = marg[j] / wsum;
    if (denom < kDivisionGuard)
      throw DegenerateError("E[P(Y=" + std::to_string(j) + "|C)] is below the division guard");
    double col = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      m[i * k + j] = std::clamp(joint[i * k + j] / wsum / denom, 0.0, 1.0);
      col += m[i * k + j];
    }
    for (std::size_t i = 0; i < k; ++i) m[i * k + j] /= col;
  }
  return CalibrationStats::multiclass(k, std::move(m));
}

Simplex calibrate_multiclass(const Simplex& p_hat, const CalibrationStats& stats,
                             double condition_cap) {
  const std::size_t k = stats.num_classes;
  if (p_hat.size() != k) throw DomainError("calibrate_multiclass: dimension mismatch");
  Eigen::MatrixXd m(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) m(i, j) = stats.at(i, j);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smin > smax * 1e-13))
    throw DegenerateError("confusion matrix is singular; pseudo-labels cannot be calibrated");
  const double cond = smax / smin;
  if (cond > condition_cap)
    warn("confusion matrix condition number " + format_double(cond) +
         " exceeds cap; calibration amplifies noise");
  Eigen::VectorXd rhs(k);
  for (std::size_t i = 0; i < k; ++i) rhs(i) = p_hat[i];
  const Eigen::VectorXd h = m.fullPivLu().solve(rhs);
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = std::max(h(i), 0.0);
  return Simplex::normalized(std::move(out));
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_probability(double p, double delta) { return std::clamp(p, delta, 1.0 - delta); }

double combine_binary(double p_c, double p_s, double prior, CombineMode mode, double delta) {
  check_unit(p_c, "p_c");
  check_unit(p_s, "p_s");
  check_unit(prior, "prior");
  const double lc = logit(clamp_probability(p_c, delta));
  const double ls = logit(clamp_probability(p_s, delta));
  const double lp = logit(clamp_probability(prior, delta));
  return sigmoid(mode == CombineMode::corrected ? lc + ls - lp : lc + ls + lp);
}

Simplex combine_multiclass(const Simplex& p_c, const Simplex& p_s, const Simplex& prior,
                           CombineMode mode, double delta) {
  const std::size_t k = p_c.size();
  if (p_s.size() != k || prior.size() != k) throw DomainError("combine_multiclass: size mismatch");
  std::vector<double> log_q(k);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t y = 0; y < k; ++y) {
    const double lp = std::log(clamp_probability(prior[y], delta));
    log_q[y] = std::log(clamp_probability(p_c[y], delta)) +
               std::log(clamp_probability(p_s[y], delta)) +
               (mode == CombineMode::corrected ? -lp : lp);
    top = std::max(top, log_q[y]);
  }
  std::vector<double> q(k);
  for (std::size_t y = 0; y < k; ++y) q[y] = std::exp(log_q[y] - top);
  return Simplex::normalized(std::move(q));
}

CombineMode parse_combine_mode(const std::string& name) {
  if (name == "corrected") return CombineMode::corrected;
  if (name == "paper") return CombineMode::paper;
  throw DomainError("unknown combine mode '" + name + "' (expected corrected|paper)");
}

std::string to_string(CombineMode mode) {
  return mode == CombineMode::corrected ? "corrected" : "paper";
}

PseudoLabelMode parse_pseudo_label_mode(const std::string& name) {
  if (name == "argmax") return PseudoLabelMode::argmax;
  if (name == "sample") return PseudoLabelMode::sample;
  throw DomainError("unknown pseudo-label mode '" + name + "' (expected argmax|sample)");
}

std::string to_string(PseudoLabelMode mode) {
  return mode == PseudoLabelMode::argmax ? "argmax" : "sample";
}

}  // namespace snigl::causation
