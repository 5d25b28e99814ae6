#include "snigl/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "snigl/diagnostics.hpp"
#include "snigl/error.hpp"
#include "snigl/random.hpp"

namespace snigl::training {
namespace {

Var cross_entropy(Var log_probs, std::span<const std::size_t> labels) {
  return ad::scale(ad::mean(ad::pick(log_probs, labels)), -1.0);
}

// exp(-D / h) with h the median off-diagonal entry of D, differentiable
// through the entry that realizes the median.
Var gaussian_kernel(Var d) {
  const Matrix& v = d.value();
  const ad::Index n = v.rows();
  std::vector<std::pair<double, std::pair<ad::Index, ad::Index>>> pairs;
  pairs.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (ad::Index i = 0; i < n; ++i)
    for (ad::Index j = i + 1; j < n; ++j) pairs.push_back({v(i, j), {i, j}});
  const auto mid = pairs.begin() + static_cast<std::ptrdiff_t>((pairs.size() - 1) / 2);
  std::nth_element(pairs.begin(), mid, pairs.end());
  constexpr double kFloor = 1e-6;
  if (mid->first < kFloor) return ad::exp(ad::scale(d, -1.0 / kFloor));
  Var h = ad::select(d, mid->second.first, mid->second.second);
  return ad::exp(ad::scale_by(d, ad::scale(ad::reciprocal(h), -1.0)));
}

void check_finite(double value, const std::string& term, const std::string& env) {
  if (!std::isfinite(value)) throw NonFiniteError(term + " is not finite in environment '" + env + "'");
}

std::vector<std::size_t> take(std::span<const std::size_t> all, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(all[r]);
  return out;
}

}  // namespace

std::string to_string(Objective o) {
  switch (o) {
    case Objective::full: return "full";
    case Objective::no_pns: return "no_pns";
    case Objective::erm: return "erm";
  }
  return "full";
}

Objective parse_objective(const std::string& name) {
  if (name == "full") return Objective::full;
  if (name == "no_pns") return Objective::no_pns;
  if (name == "erm") return Objective::erm;
  throw DomainError("unknown objective '" + name + "' (expected full|no_pns|erm)");
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lambda_ci >= 0.0) || !std::isfinite(lambda_ci)) throw DomainError("lambda_ci must be a finite value >= 0");
  if (!(learning_rate > 0.0)) throw DomainError("learning_rate must be positive");
  if (epochs == 0) throw DomainError("epochs must be positive");
  if (batch_size == 0) throw DomainError("batch_size must be positive");
  if (k == 0) throw DomainError("k must be positive");
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw DomainError("temperatures must be positive");
  if (!(pns_clamp > 0.0) || pns_clamp >= 1.0) throw DomainError("pns_clamp must lie in (0, 1)");
  if (!(contrastive_temperature > 0.0)) throw DomainError("contrastive_temperature must be positive");
  if (!(hscic_ridge > 0.0)) throw DomainError("hscic_ridge must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw DomainError("mask_ratio must lie in [0, 1]");
  if (!(mask_ratio_weight >= 0.0)) throw DomainError("mask_ratio_weight must be >= 0");
  if (!(clip_norm >= 0.0)) throw DomainError("clip_norm must be >= 0");
}

double TrainConfig::tau_at(std::size_t epoch) const {
  if (epochs <= 1) return tau_start;
  const double t = static_cast<double>(std::min(epoch, epochs - 1)) / static_cast<double>(epochs - 1);
  return tau_start + (tau_end - tau_start) * t;
}

Var pns_risk(Var probs, std::span<const std::size_t> labels, const std::vector<double>& prior, Var e_hat,
             double clamp, PnsRiskStats* stats) {
  const auto n = static_cast<ad::Index>(labels.size());
  if (probs.rows() != n || e_hat.rows() != n || e_hat.cols() != 1) throw DomainError("pns_risk: shape mismatch");
  ad::Tape& t = *probs.tape;
  Matrix target(n, 1);
  for (ad::Index i = 0; i < n; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    if (y >= prior.size()) throw DomainError("pns_risk: label outside the prior");
    target(i, 0) = prior[y];
  }
  Var numer = ad::sub(t.constant(target), ad::pick(probs, labels));
  Var denom = ad::clamp_min(ad::add_scalar(ad::scale(e_hat, -1.0), 1.0), clamp);
  PnsRiskStats local;
  local.examples = labels.size();
  for (ad::Index i = 0; i < n; ++i) local.clamped += (1.0 - e_hat.value()(i, 0)) < clamp;
  if (stats) {
    stats->clamped += local.clamped;
    stats->examples += local.examples;
  } else if (10 * local.clamped > local.examples) {
    warn("PNS risk: denominator clamped on " + std::to_string(local.clamped) + " of " +
         std::to_string(local.examples) + " examples");
  }
  return ad::mean(ad::mul(numer, ad::reciprocal(denom)));
}

Var contrastive_loss(Var candidates, std::span<const std::size_t> candidate_labels,
                     std::span<const std::size_t> anchor_rows, double temperature) {
  ad::Tape& t = *candidates.tape;
  const auto n = static_cast<ad::Index>(candidate_labels.size());
  const auto b = static_cast<ad::Index>(anchor_rows.size());
  if (candidates.rows() != n) throw DomainError("contrastive_loss: label count must match candidate rows");
  Matrix pos = Matrix::Zero(b, n), neg = Matrix::Zero(b, n);
  std::size_t valid = 0;
  bool any_negative = false;
  for (ad::Index i = 0; i < b; ++i) {
    const auto self = anchor_rows[static_cast<std::size_t>(i)];
    if (self >= candidate_labels.size()) throw DomainError("contrastive_loss: anchor row out of range");
    const auto y = candidate_labels[self];
    double positives = 0.0;
    for (ad::Index a = 0; a < n; ++a) {
      if (static_cast<std::size_t>(a) == self) continue;
      if (candidate_labels[static_cast<std::size_t>(a)] == y) {
        pos(i, a) = 1.0;
        positives += 1.0;
      } else {
        neg(i, a) = 1.0;
        any_negative = true;
      }
    }
    if (positives > 0.0) {
      pos.row(i) /= positives;
      ++valid;
    }
  }
  if (valid == 0 || !any_negative) {
    warn("contrastive term skipped: batch lacks positive pairs or a second class");
    return t.constant(Matrix::Zero(1, 1));
  }
  pos /= static_cast<double>(valid);
  Var unit = ad::row_normalize(candidates);
  Var s = ad::scale(ad::matmul(ad::gather_rows(unit, anchor_rows), ad::transpose(unit)), 1.0 / temperature);
  Var es = ad::exp(s);
  Var negsum = ad::row_sum(ad::mul(es, t.constant(neg)));
  Var denom = ad::add_col(es, negsum);
  return ad::sum(ad::mul(ad::sub(ad::log(denom), s), t.constant(pos)));
}

Var invariant_risk(Var log_probs, std::span<const std::size_t> labels, Var candidates,
                   std::span<const std::size_t> candidate_labels, std::span<const std::size_t> anchor_rows,
                   double temperature) {
  return ad::add(cross_entropy(log_probs, labels),
                 contrastive_loss(candidates, candidate_labels, anchor_rows, temperature));
}

Var mask_size_penalty(Var edge_probs, std::span<const std::size_t> edges, double ratio) {
  if (edges.empty()) return edge_probs.tape->constant(Matrix::Zero(1, 1));
  Var d = ad::add_scalar(ad::mean(ad::gather_rows(edge_probs, edges)), -ratio);
  return ad::mul(d, d);
}

Var joint_risk(Var log_p_c, Var log_p_s, std::span<const std::size_t> labels, const std::vector<double>& prior) {
  if (log_p_c.cols() != static_cast<ad::Index>(prior.size()) || log_p_s.cols() != log_p_c.cols())
    throw DomainError("joint_risk: class count mismatch");
  Matrix neg_log_prior(1, log_p_c.cols());
  for (std::size_t y = 0; y < prior.size(); ++y) neg_log_prior(0, static_cast<ad::Index>(y)) = -std::log(std::max(prior[y], 1e-6));
  Var combined = ad::add_row(ad::add(log_p_c, log_p_s), log_p_c.tape->constant(neg_log_prior));
  return cross_entropy(ad::log_softmax_rows(combined), labels);
}

Matrix hscic_weights(std::span<const std::size_t> labels, std::size_t num_classes, double ridge) {
  const auto n = static_cast<ad::Index>(labels.size());
  for (auto y : labels)
    if (y >= num_classes) throw DomainError("hscic: label outside the class range");
  // Squared distances of one-hot labels are 0 or 2.
  std::size_t differing = 0, total = 0;
  for (ad::Index i = 0; i < n; ++i)
    for (ad::Index j = i + 1; j < n; ++j) {
      differing += labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(j)];
      ++total;
    }
  // Lower median of the pair distances, as in the representation kernels.
  const double median = differing > total - 1 - (total - 1) / 2 ? 2.0 : 0.0;
  const double h = std::max(median, 1e-6);
  Matrix ky(n, n);
  for (ad::Index i = 0; i < n; ++i)
    for (ad::Index j = 0; j < n; ++j)
      ky(i, j) = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)] ? 1.0 : std::exp(-2.0 / h);
  Matrix reg = ky;
  reg.diagonal().array() += static_cast<double>(n) * ridge;
  Matrix w = reg.ldlt().solve(ky);
  for (ad::Index j = 0; j < n; ++j) {
    const double s = w.col(j).sum();
    if (std::abs(s) > 1e-300) w.col(j) /= s;
  }
  return w;
}

Var hscic_penalty(Var x, Var z, std::span<const std::size_t> labels, std::size_t num_classes, double ridge) {
  const auto n = static_cast<ad::Index>(labels.size());
  if (n < 8) throw DomainError("hscic needs at least 8 rows, got " + std::to_string(n));
  if (x.rows() != n || z.rows() != n) throw DomainError("hscic: row counts must match the labels");
  ad::Tape& t = *x.tape;
  Var w = t.constant(hscic_weights(labels, num_classes, ridge));
  Var kx = gaussian_kernel(ad::pairwise_sqdist(x));
  Var kz = gaussian_kernel(ad::pairwise_sqdist(z));
  Var kxw = ad::matmul(kx, w);
  Var kzw = ad::matmul(kz, w);
  Var joint = ad::sum(ad::mul(w, ad::matmul(ad::mul(kx, kz), w)));
  Var cross = ad::sum(ad::mul(w, ad::mul(kxw, kzw)));
  Var product = ad::sum(ad::mul(ad::col_sum(ad::mul(w, kxw)), ad::col_sum(ad::mul(w, kzw))));
  Var stat = ad::add(ad::sub(joint, ad::scale(cross, 2.0)), product);
  return ad::clamp_min(ad::scale(stat, 1.0 / static_cast<double>(n)), 0.0);
}

StepOutput objective(const model::Bound& p, const StepInputs& in, const TrainConfig& config, double tau,
                     std::uint64_t seed) {
  using model::Branch;
  ad::Tape& t = p.tape();
  const auto& batch = in.batch;
  const std::size_t b = batch.num_graphs;
  const std::size_t e = batch.num_edges();
  const bool with_pns = config.objective == Objective::full;
  const std::size_t copies = with_pns ? config.k + 1 : 1;

  Var ones = t.constant(Matrix::Ones(static_cast<ad::Index>(e), 1));
  Var logits_c = model::edge_logits(model::encode(p, Branch::invariant, batch, ones), batch);

  // Copy 0 is the sample c; copies 1..k feed the P(C=c|G) estimate.
  Var reps_all;
  if (copies > 1) {
    const auto big = batch.replicate(copies);
    std::vector<Var> tiled(copies, logits_c);
    Var w = model::relaxed_sample(ad::concat_rows(tiled), model::logistic_noise(e * copies, mix_seed(seed, 1)), tau, config.hard_samples);
    reps_all = model::subgraph_representation(p, Branch::invariant, big, w);
  } else {
    Var w = model::relaxed_sample(logits_c, model::logistic_noise(e, mix_seed(seed, 1)), tau, config.hard_samples);
    reps_all = model::subgraph_representation(p, Branch::invariant, batch, w);
  }
  std::vector<std::size_t> first(b);
  std::iota(first.begin(), first.end(), std::size_t{0});
  Var rep_c = copies > 1 ? ad::gather_rows(reps_all, first) : reps_all;
  Var log_p_c = ad::log_softmax_rows(model::head_logits(p, model::head_prefix(Branch::invariant), rep_c));

  Var rep_s;
  if (config.objective != Objective::erm) {
    Var logits_s = model::edge_logits(model::encode(p, Branch::variant, batch, ones), batch);
    Var w = model::relaxed_sample(logits_s, model::logistic_noise(e, mix_seed(seed, 2)), tau, config.hard_samples);
    rep_s = model::subgraph_representation(p, Branch::variant, batch, w);
  }

  StepOutput out;
  const Matrix& lp = log_p_c.value();
  Var loss = t.constant(Matrix::Zero(1, 1));
  for (std::size_t k = 0; k < in.envs.size(); ++k) {
    const auto& rows = in.env_rows[k];
    const auto& env = in.envs[k];
    const auto labels = take(batch.labels, rows);
    std::size_t correct = 0;
    for (auto r : rows) {
      ad::Index best = 0;
      lp.row(static_cast<ad::Index>(r)).maxCoeff(&best);
      correct += static_cast<std::size_t>(best) == batch.labels[r];
    }
    out.correct.push_back(correct);

    RiskBreakdown rb;
    rb.env = env;
    Var lp_e = ad::gather_rows(log_p_c, rows);
    Var total;
    if (config.objective == Objective::erm) {
      total = cross_entropy(lp_e, labels);
      rb.r_inv = total.scalar();
      check_finite(rb.r_inv, "r_inv", env);
    } else {
      Var r_inv = invariant_risk(lp_e, labels, rep_c, batch.labels, rows, config.contrastive_temperature);
      if (config.mask_ratio_weight > 0.0) {
        std::vector<std::size_t> edges;
        for (auto r : rows)
          for (std::size_t x = batch.edge_offsets[r]; x < batch.edge_offsets[r + 1]; ++x) edges.push_back(x);
        r_inv = ad::add(r_inv, ad::scale(mask_size_penalty(ad::sigmoid(logits_c), edges, config.mask_ratio),
                                         config.mask_ratio_weight));
      }
      rb.r_inv = r_inv.scalar();
      check_finite(rb.r_inv, "r_inv", env);

      const auto prefix = model::head_prefix(Branch::variant, env);
      Var rep_s_e = ad::gather_rows(rep_s, rows);
      Var lp_s_e = ad::log_softmax_rows(model::head_logits(p, prefix, rep_s_e));
      Var r_joint = joint_risk(lp_e, lp_s_e, labels, in.priors[k]);
      rb.r_joint = r_joint.scalar();
      check_finite(rb.r_joint, "r_joint", env);
      total = ad::add(r_inv, r_joint);

      if (config.lambda_ci > 0.0 && rows.size() >= 8) {
        Var r_ci = hscic_penalty(ad::gather_rows(rep_c, rows), rep_s_e, labels, static_cast<std::size_t>(lp.cols()),
                                 config.hscic_ridge);
        rb.r_ci = r_ci.scalar();
        check_finite(rb.r_ci, "r_ci", env);
        total = ad::add(total, ad::scale(r_ci, config.lambda_ci));
      }

      if (with_pns) {
        std::vector<std::size_t> others;
        for (std::size_t c = 1; c < copies; ++c)
          for (auto r : rows) others.push_back(c * b + r);
        Var e_hat = model::similarity_mean(ad::gather_rows(rep_c, rows), ad::gather_rows(reps_all, others));
        Var r_ns = pns_risk(ad::exp(lp_e), labels, in.priors[k], e_hat, config.pns_clamp, &out.pns);
        rb.r_ns = r_ns.scalar();
        check_finite(rb.r_ns, "r_ns", env);
        total = ad::add(r_ns, total);
      }
    }
    rb.total = rb.r_ns + rb.r_inv + rb.r_joint + config.lambda_ci * rb.r_ci;
    out.risks.push_back(rb);
    loss = ad::add(loss, total);
  }
  out.loss = loss;
  return out;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(std::map<std::string, Matrix>& params, const std::map<std::string, Matrix>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    auto& x = params.at(name);
    auto [mi, fresh] = m_.try_emplace(name, Matrix::Zero(x.rows(), x.cols()));
    auto& v = v_.try_emplace(name, Matrix::Zero(x.rows(), x.cols())).first->second;
    auto& m = mi->second;
    (void)fresh;
    m = b1_ * m + (1.0 - b1_) * g;
    v = b2_ * v + (1.0 - b2_) * g.cwiseProduct(g);
    x.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

TrainResult train(const TrainConfig& config_in, const data::Dataset& train_set, const EpochCallback& on_epoch) {
  TrainConfig config = config_in;
  config.model.feature_dim = train_set.feature_dim;
  config.model.num_classes = train_set.num_classes;
  config.validate();
  train_set.validate();
  const auto& envs = train_set.environments;
  if (envs.empty()) throw DomainError("training needs at least one environment");

  std::vector<std::vector<std::size_t>> members;
  std::vector<std::vector<double>> priors;
  std::size_t longest = 0;
  for (const auto& env : envs) {
    members.push_back(train_set.indices_of(env));
    if (members.back().empty()) throw DomainError("environment '" + env + "' has no graphs");
    priors.push_back(data::empirical_label_dist(train_set, env));
    longest = std::max(longest, members.back().size());
  }

  TrainResult result;
  result.params = model::ModelParams::init(config.model, envs, mix_seed(config.seed, 1));
  Adam adam(config.learning_rate);
  const std::size_t steps = (longest + config.batch_size - 1) / config.batch_size;
  std::uint64_t step_counter = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double tau = config.tau_at(epoch);
    auto perms = members;
    for (std::size_t k = 0; k < envs.size(); ++k) Rng(mix_seed(mix_seed(config.seed, 2 + k), epoch)).shuffle(perms[k].begin(), perms[k].end());

    std::vector<RiskBreakdown> sums(envs.size());
    std::vector<std::size_t> correct(envs.size(), 0), seen(envs.size(), 0);
    PnsRiskStats pns;
    for (std::size_t s = 0; s < steps; ++s) {
      StepInputs in;
      in.envs = envs;
      in.priors = priors;
      std::vector<const data::Graph*> graphs;
      for (std::size_t k = 0; k < envs.size(); ++k) {
        const auto& perm = perms[k];
        const std::size_t take_n = std::min(config.batch_size, perm.size());
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < take_n; ++i) {
          rows.push_back(graphs.size());
          graphs.push_back(&train_set.graphs[perm[(s * config.batch_size + i) % perm.size()]]);
        }
        in.env_rows.push_back(std::move(rows));
      }
      in.batch = model::GraphBatch::of(graphs);

      ad::Tape tape;
      model::Bound bound(tape, result.params);
      StepOutput out;
      try {
        out = objective(bound, in, config, tau, mix_seed(mix_seed(config.seed, 0x57e9), step_counter++));
      } catch (const NonFiniteError& err) {
        throw NonFiniteError(std::string(err.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(s));
      }
      tape.backward(out.loss);
      auto grads = bound.gradients();
      double norm2 = 0.0;
      for (const auto& [_, g] : grads) norm2 += g.squaredNorm();
      if (!std::isfinite(norm2))
        throw NonFiniteError("gradient is not finite at epoch " + std::to_string(epoch) + ", step " + std::to_string(s));
      if (config.clip_norm > 0.0 && std::sqrt(norm2) > config.clip_norm) {
        const double f = config.clip_norm / std::sqrt(norm2);
        for (auto& [_, g] : grads) g *= f;
      }
      adam.step(result.params.tensors, grads);

      pns.clamped += out.pns.clamped;
      pns.examples += out.pns.examples;
      for (std::size_t k = 0; k < envs.size(); ++k) {
        sums[k].r_ns += out.risks[k].r_ns;
        sums[k].r_inv += out.risks[k].r_inv;
        sums[k].r_joint += out.risks[k].r_joint;
        sums[k].r_ci += out.risks[k].r_ci;
        correct[k] += out.correct[k];
        seen[k] += in.env_rows[k].size();
      }
    }
    if (!result.params.all_finite()) throw NonFiniteError("parameters are not finite after epoch " + std::to_string(epoch));
    if (10 * pns.clamped > pns.examples)
      warn("PNS risk: denominator clamped on " + std::to_string(pns.clamped) + " of " + std::to_string(pns.examples) +
           " examples in epoch " + std::to_string(epoch));

    for (std::size_t k = 0; k < envs.size(); ++k) {
      EpochLog entry;
      entry.epoch = epoch;
      entry.tau = tau;
      auto& r = entry.risks;
      r.env = envs[k];
      const double n = static_cast<double>(steps);
      r.r_ns = sums[k].r_ns / n;
      r.r_inv = sums[k].r_inv / n;
      r.r_joint = sums[k].r_joint / n;
      r.r_ci = sums[k].r_ci / n;
      r.total = r.r_ns + r.r_inv + r.r_joint + config.lambda_ci * r.r_ci;
      entry.train_accuracy = static_cast<double>(correct[k]) / static_cast<double>(seen[k]);
      if (on_epoch) on_epoch(entry);
      result.log.push_back(std::move(entry));
    }
  }
  return result;
}

void write_epoch_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path + "' for writing");
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["env"] = e.risks.env;
    j["r_ns"] = e.risks.r_ns;
    j["r_inv"] = e.risks.r_inv;
    j["r_joint"] = e.risks.r_joint;
    j["r_ci"] = e.risks.r_ci;
    j["total"] = e.risks.total;
    j["train_acc"] = e.train_accuracy;
    j["tau"] = e.tau;
    out << j.dump() << '\n';
  }
  if (!out) throw WriteError("write to '" + path + "' failed");
}

std::vector<EpochLog> read_epoch_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("training log '" + path + "' not found");
  std::vector<EpochLog> log;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EpochLog e;
      e.epoch = j.at("epoch").get<std::size_t>();
      e.risks.env = j.at("env").get<std::string>();
      e.risks.r_ns = j.at("r_ns").get<double>();
      e.risks.r_inv = j.at("r_inv").get<double>();
      e.risks.r_joint = j.at("r_joint").get<double>();
      e.risks.r_ci = j.at("r_ci").get<double>();
      e.risks.total = j.at("total").get<double>();
      e.train_accuracy = j.at("train_acc").get<double>();
      e.tau = j.at("tau").get<double>();
      log.push_back(std::move(e));
    } catch (const nlohmann::json::exception& err) {
      throw ParseError("training log line " + std::to_string(n) + ": " + err.what(), n);
    }
  }
  return log;
}

}  // namespace snigl::training
