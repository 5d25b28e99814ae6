#include "snigl/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "snigl/error.hpp"
#include "snigl/random.hpp"
#include "snigl/training.hpp"

namespace snigl::adaptation {
namespace {

nlohmann::ordered_json simplex_json(const Simplex& s) { return s.values(); }

Simplex simplex_from(const nlohmann::json& j) { return Simplex(j.get<std::vector<double>>()); }

std::size_t argmax(const Simplex& s) { return s.argmax(); }

}  // namespace

void AdaptConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DomainError("adapt learning_rate must be positive");
  if (epochs == 0) throw DomainError("adapt epochs must be positive");
  if (batch_size == 0) throw DomainError("adapt batch_size must be positive");
  if (env.empty() || env.find('/') != std::string::npos) throw DomainError("invalid test environment name '" + env + "'");
}

std::vector<Simplex> to_simplices(const ad::Matrix& probs) {
  std::vector<Simplex> out;
  out.reserve(static_cast<std::size_t>(probs.rows()));
  for (ad::Index i = 0; i < probs.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(probs.cols()));
    for (ad::Index k = 0; k < probs.cols(); ++k) row[static_cast<std::size_t>(k)] = probs(i, k);
    out.push_back(Simplex::normalized(std::move(row)));
  }
  return out;
}

PseudoLabels pseudo_label(std::vector<Simplex> invariant, PseudoLabelMode mode, std::uint64_t seed) {
  if (invariant.empty()) throw DomainError("pseudo-labelling needs a non-empty test set");
  PseudoLabels out;
  Rng rng(seed);
  for (const auto& p : invariant)
    out.labels.push_back(mode == PseudoLabelMode::argmax ? argmax(p) : rng.categorical(p.values()));
  out.invariant = std::move(invariant);
  return out;
}

PseudoLabels pseudo_label(const std::vector<const data::Graph*>& graphs, const model::ModelParams& params,
                          PseudoLabelMode mode, model::EvalMask mask, std::uint64_t seed) {
  if (graphs.empty()) throw DomainError("pseudo-labelling needs a non-empty test set");
  const auto out = model::infer_invariant(params, model::GraphBatch::of(graphs), mask);
  return pseudo_label(to_simplices(out.probs), mode, seed);
}

HeadFit fit_variant_classifier(const model::ModelParams& params, const ad::Matrix& reps,
                               const std::vector<std::size_t>& labels, const AdaptConfig& config) {
  config.validate();
  if (static_cast<std::size_t>(reps.rows()) != labels.size() || labels.empty())
    throw DomainError("fit_variant_classifier: one label per representation row is required");
  const auto k = params.config.num_classes;
  std::vector<std::size_t> counts(k, 0);
  for (auto y : labels) {
    if (y >= k) throw DomainError("pseudo-label outside the class range");
    ++counts[y];
  }
  if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2)
    throw DegenerateError("pseudo-labels take a single value; the variant head cannot be calibrated");

  HeadFit fit;
  fit.params = params;
  const std::string prefix = model::head_prefix(model::Branch::variant, config.env);
  for (auto it = fit.params.tensors.begin(); it != fit.params.tensors.end();)
    it = it->first.rfind(prefix + "/", 0) == 0 ? fit.params.tensors.erase(it) : std::next(it);
  fit.params.add_variant_head(config.env, mix_seed(config.seed, 0x4ead));

  // Only the head's tensors enter the optimizer.
  model::ModelParams head;
  head.config = params.config;
  for (const auto& [name, m] : fit.params.tensors)
    if (name.rfind(prefix + "/", 0) == 0) head.tensors.emplace(name, m);

  training::Adam adam(config.learning_rate);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng(mix_seed(config.seed, epoch)).shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::size_t> y;
      for (auto r : rows) y.push_back(labels[r]);
      ad::Matrix x(static_cast<ad::Index>(rows.size()), reps.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<ad::Index>(i)) = reps.row(static_cast<ad::Index>(rows[i]));
      ad::Tape tape;
      model::Bound b(tape, head);
      ad::Var lp = ad::log_softmax_rows(model::head_logits(b, prefix, tape.constant(x)));
      ad::Var loss = ad::scale(ad::mean(ad::pick(lp, y)), -1.0);
      if (!std::isfinite(loss.scalar())) throw NonFiniteError("variant head loss is not finite at epoch " + std::to_string(epoch));
      tape.backward(loss);
      adam.step(head.tensors, b.gradients());
    }
  }
  for (const auto& [name, m] : head.tensors) fit.params.tensors[name] = m;

  ad::Tape tape;
  model::Bound b(tape, head, std::vector<std::string>{});
  const ad::Matrix logits = model::head_logits(b, prefix, tape.constant(reps)).value();
  std::size_t correct = 0;
  for (ad::Index i = 0; i < logits.rows(); ++i) {
    ad::Index best = 0;
    logits.row(i).maxCoeff(&best);
    correct += static_cast<std::size_t>(best) == labels[static_cast<std::size_t>(i)];
  }
  fit.train_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  return fit;
}

CalibrationStats calibration_stats(const PseudoLabels& pseudo, PseudoLabelMode mode, CalibrationKind kind) {
  const auto& inv = pseudo.invariant;
  if (inv.empty()) throw DomainError("calibration needs invariant predictions");
  const std::size_t k = inv.front().size();
  if (kind == CalibrationKind::binary) {
    if (k != 2) throw DomainError("binary calibration needs two classes, got " + std::to_string(k));
    std::vector<double> p, q;
    for (std::size_t i = 0; i < inv.size(); ++i) {
      p.push_back(inv[i][1]);
      q.push_back(inv[i].argmax() == 1 ? 1.0 : 0.0);
    }
    return mode == PseudoLabelMode::sample ? causation::estimate_flip_rates_binary(p)
                                           : causation::estimate_flip_rates_binary(p, q);
  }
  if (mode == PseudoLabelMode::sample) return causation::estimate_confusion_multiclass(inv);
  std::vector<Simplex> hard;
  for (const auto& s : inv) hard.push_back(Simplex::one_hot(k, s.argmax()));
  return causation::estimate_confusion_multiclass(inv, hard);
}

Simplex CalibratedHead::operator()(const Simplex& biased) const {
  if (stats_.kind == CalibrationKind::binary) {
    const double p1 = causation::calibrate_binary(biased[1], stats_);
    return Simplex({1.0 - p1, p1});
  }
  return causation::calibrate_multiclass(biased, stats_);
}

CalibratedHead calibrate_head(const PseudoLabels& pseudo, PseudoLabelMode mode, CalibrationKind kind) {
  auto stats = calibration_stats(pseudo, mode, kind);
  if (kind == CalibrationKind::binary && stats.binary_degenerate())
    throw DegenerateError("flip rates sum to one: pseudo-labels are independent of the label");
  CalibratedHead head(std::move(stats));
  // Probing with a uniform input surfaces a singular confusion matrix now.
  head(Simplex::uniform(pseudo.invariant.front().size()));
  return head;
}

Simplex predict_ensemble(const Simplex& invariant, const Simplex& calibrated_variant, const Simplex& prior,
                         CombineMode mode, bool no_ensemble) {
  if (no_ensemble) return invariant;
  return causation::combine_multiclass(invariant, calibrated_variant, prior, mode);
}

Simplex label_distribution(const std::vector<std::size_t>& labels, std::size_t num_classes) {
  if (labels.empty()) throw DomainError("label distribution of an empty set");
  std::vector<double> counts(num_classes, 0.0);
  for (auto y : labels) {
    if (y >= num_classes) throw DomainError("label outside the class range");
    counts[y] += 1.0;
  }
  return Simplex::normalized(std::move(counts));
}

AdaptResult adapt(const model::ModelParams& params, const data::Dataset& test, const AdaptConfig& config) {
  config.validate();
  if (test.graphs.empty()) throw DomainError("test set is empty");
  std::vector<const data::Graph*> graphs;
  for (const auto& g : test.graphs) graphs.push_back(&g);
  const auto batch = model::GraphBatch::of(graphs);
  const std::size_t k = params.config.num_classes;

  const auto inv_out = model::infer_invariant(params, batch, config.eval_mask);
  auto pseudo = pseudo_label(to_simplices(inv_out.probs), config.pseudo_label_mode, mix_seed(config.seed, 1));

  AdaptResult result;
  result.params = params;
  result.prior = label_distribution(pseudo.labels, k);
  result.predictions.resize(graphs.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    auto& p = result.predictions[i];
    p.graph_id = graphs[i]->graph_id;
    p.invariant = pseudo.invariant[i];
    p.pseudo_label = pseudo.labels[i];
    p.true_label = graphs[i]->label;
  }
  if (config.no_ensemble) return result;

  const auto var_out = model::infer_variant(params, batch, config.eval_mask);
  auto fit = fit_variant_classifier(params, var_out.reps, pseudo.labels, config);
  result.params = std::move(fit.params);
  result.head_train_accuracy = fit.train_accuracy;
  const auto kind = config.calibration.value_or(k == 2 ? CalibrationKind::binary : CalibrationKind::multiclass);
  const auto head = calibrate_head(pseudo, config.pseudo_label_mode, kind);
  result.calibration = head.stats();

  const auto biased = model::infer_variant(result.params, batch, config.eval_mask, config.env);
  const auto biased_rows = to_simplices(biased.probs);
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    auto& p = result.predictions[i];
    p.variant = head(biased_rows[i]);
    p.combined = predict_ensemble(p.invariant, *p.variant, result.prior, config.combine_mode);
  }
  return result;
}

void write_predictions(const std::vector<Prediction>& predictions, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path + "' for writing");
  for (const auto& p : predictions) {
    nlohmann::ordered_json j;
    j["graph_id"] = p.graph_id;
    j["invariant"] = simplex_json(p.invariant);
    if (p.variant) j["variant"] = simplex_json(*p.variant);
    if (p.combined) j["combined"] = simplex_json(*p.combined);
    j["pseudo_label"] = p.pseudo_label;
    if (p.true_label) j["true_label"] = *p.true_label;
    out << j.dump() << '\n';
  }
  if (!out) throw WriteError("write to '" + path + "' failed");
}

std::vector<Prediction> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("prediction file '" + path + "' not found");
  std::vector<Prediction> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Prediction p;
      p.graph_id = j.at("graph_id").get<std::string>();
      p.invariant = simplex_from(j.at("invariant"));
      if (j.contains("variant")) p.variant = simplex_from(j["variant"]);
      if (j.contains("combined")) p.combined = simplex_from(j["combined"]);
      p.pseudo_label = j.at("pseudo_label").get<std::size_t>();
      if (j.contains("true_label")) p.true_label = j["true_label"].get<std::size_t>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("prediction line " + std::to_string(n) + ": " + e.what(), n);
    } catch (const DomainError& e) {
      throw ParseError("prediction line " + std::to_string(n) + ": " + e.what(), n);
    }
  }
  return out;
}

namespace {

template <typename Pick>
double accuracy_of(const std::vector<Prediction>& predictions, Pick pick) {
  std::size_t total = 0, correct = 0;
  for (const auto& p : predictions) {
    if (!p.true_label) continue;
    ++total;
    correct += pick(p).argmax() == *p.true_label;
  }
  if (total == 0) throw DomainError("no labelled predictions to score");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

double accuracy(const std::vector<Prediction>& predictions) {
  return accuracy_of(predictions, [](const Prediction& p) -> const Simplex& { return p.final(); });
}

double invariant_accuracy(const std::vector<Prediction>& predictions) {
  return accuracy_of(predictions, [](const Prediction& p) -> const Simplex& { return p.invariant; });
}

double roc_auc(const std::vector<double>& scores, const std::vector<std::size_t>& labels) {
  if (scores.size() != labels.size()) throw DomainError("roc_auc: one label per score is required");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney statistic with average ranks for ties.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) {
        rank_sum += avg_rank;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw DomainError("roc_auc needs both classes");
  const double p = static_cast<double>(positives), n = static_cast<double>(negatives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

}  // namespace snigl::adaptation
