#include "snigl/scm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "snigl/error.hpp"

namespace snigl::scm {
namespace {

constexpr double kSumTolerance = 1e-12;
constexpr double kEvidenceFloor = 1e-12;

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void check_distribution(const std::vector<double>& dist, const std::string& what) {
  if (dist.size() < 1) throw DomainError(what + ": empty distribution");
  double total = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError(what + ": probability outside [0, 1]");
    total += p;
  }
  // Text formats carry 17 significant digits, so sums land within a few ulps.
  if (std::abs(total - 1.0) > kSumTolerance * std::max<double>(1.0, static_cast<double>(dist.size())))
    throw DomainError(what + ": distribution sums to " + fmt(total));
}

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double parse_number(const std::string& tok, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw ParseError("bad number '" + tok + "'", line);
    return v;
  } catch (const std::logic_error&) {
    throw ParseError("bad number '" + tok + "'", line);
  }
}

std::size_t parse_count(const std::string& tok, std::size_t line) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
    throw ParseError("bad integer '" + tok + "'", line);
  return static_cast<std::size_t>(std::stoull(tok));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Splits into (line number, tokens) for non-blank, non-comment lines.
std::vector<std::pair<std::size_t, std::vector<std::string>>> logical_lines(std::string_view text) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> out;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto toks = tokenize(line);
    if (!toks.empty()) out.emplace_back(lineno, std::move(toks));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

void check_header(const std::vector<std::pair<std::size_t, std::vector<std::string>>>& lines,
                  const std::string& kind) {
  if (lines.empty()) throw ParseError("empty " + kind + " document", 1);
  const auto& [lineno, toks] = lines.front();
  if (toks.size() != 2 || toks[0] != kind) throw ParseError("expected '" + kind + " v1' header", lineno);
  if (toks[1] != "v1") throw VersionError("unsupported " + kind + " version '" + toks[1] + "'", lineno);
}

}  // namespace

std::size_t DiscreteScm::add_exogenous(std::string name, std::vector<double> distribution) {
  if (contains(name)) throw DomainError("duplicate variable '" + name + "'");
  if (distribution.size() < 1) throw DomainError("exogenous '" + name + "' needs a distribution");
  check_distribution(distribution, "exogenous '" + name + "'");
  Variable v;
  v.name = std::move(name);
  v.cardinality = distribution.size();
  v.exogenous = true;
  v.distribution = std::move(distribution);
  index_.emplace(v.name, vars_.size());
  vars_.push_back(std::move(v));
  return vars_.size() - 1;
}

std::size_t DiscreteScm::add_endogenous(std::string name, std::size_t cardinality,
                                        const std::vector<std::string>& parents,
                                        std::vector<std::size_t> table) {
  if (contains(name)) throw DomainError("duplicate variable '" + name + "'");
  if (cardinality < 1) throw DomainError("endogenous '" + name + "' needs cardinality >= 1");
  Variable v;
  v.name = std::move(name);
  v.cardinality = cardinality;
  v.exogenous = false;
  std::size_t rows = 1;
  for (const auto& p : parents) {
    const auto it = index_.find(p);
    if (it == index_.end())
      throw DomainError("mechanism for '" + v.name + "' reads '" + p + "', which is not an earlier variable");
    v.parents.push_back(it->second);
    rows *= vars_[it->second].cardinality;
  }
  if (table.size() != rows)
    throw DomainError("truth table for '" + v.name + "' needs " + std::to_string(rows) + " rows");
  for (std::size_t out : table)
    if (out >= cardinality) throw DomainError("truth table for '" + v.name + "' exceeds cardinality");
  v.table = std::move(table);
  index_.emplace(v.name, vars_.size());
  vars_.push_back(std::move(v));
  return vars_.size() - 1;
}

std::size_t DiscreteScm::add_endogenous(std::string name, std::size_t cardinality,
                                        const std::vector<std::string>& parents,
                                        const Mechanism& mechanism) {
  std::vector<std::size_t> cards;
  for (const auto& p : parents) {
    if (!contains(p)) throw DomainError("mechanism for '" + name + "' reads unknown '" + p + "'");
    cards.push_back(vars_[index_of(p)].cardinality);
  }
  std::size_t rows = 1;
  for (auto c : cards) rows *= c;
  std::vector<std::size_t> table(rows);
  std::vector<std::size_t> values(cards.size(), 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t rem = r;
    for (std::size_t k = cards.size(); k-- > 0;) {
      values[k] = rem % cards[k];
      rem /= cards[k];
    }
    table[r] = mechanism(values);
  }
  return add_endogenous(std::move(name), cardinality, parents, std::move(table));
}

std::size_t DiscreteScm::index_of(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("unknown variable '" + std::string(name) + "'");
  return it->second;
}

bool DiscreteScm::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::uint64_t DiscreteScm::exogenous_state_count() const {
  std::uint64_t count = 1;
  for (const auto& v : vars_) {
    if (!v.exogenous) continue;
    if (count > std::numeric_limits<std::uint64_t>::max() / v.cardinality)
      return std::numeric_limits<std::uint64_t>::max();
    count *= v.cardinality;
  }
  return count;
}

void DiscreteScm::evaluate(Assignment& values, const std::optional<Intervention>& intervention) const {
  values.resize(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    const Variable& v = vars_[i];
    if (intervention && intervention->variable == i) {
      values[i] = intervention->value;
      continue;
    }
    if (v.exogenous) continue;
    std::size_t row = 0;
    for (std::size_t p : v.parents) row = row * vars_[p].cardinality + values[p];
    values[i] = v.table[row];
  }
}

void DiscreteScm::enumerate(const std::function<void(const Assignment&, double)>& fn,
                            const std::optional<Intervention>& intervention, std::uint64_t cap) const {
  const std::uint64_t states = exogenous_state_count();
  if (states > cap)
    throw IntractableError("exogenous state space " + std::to_string(states) + " exceeds cap " +
                           std::to_string(cap));
  std::vector<std::size_t> exo;
  for (std::size_t i = 0; i < vars_.size(); ++i)
    if (vars_[i].exogenous) exo.push_back(i);
  Assignment values(vars_.size(), 0);
  for (std::uint64_t s = 0; s < states; ++s) {
    std::uint64_t rem = s;
    double prob = 1.0;
    for (std::size_t k = exo.size(); k-- > 0;) {
      const Variable& v = vars_[exo[k]];
      values[exo[k]] = static_cast<std::size_t>(rem % v.cardinality);
      rem /= v.cardinality;
      prob *= v.distribution[values[exo[k]]];
    }
    evaluate(values, intervention);
    fn(values, prob);
  }
}

std::vector<bool> DiscreteScm::ancestors(std::size_t v, std::optional<std::size_t> cut) const {
  std::vector<bool> anc(vars_.size(), false);
  std::vector<std::size_t> stack{v};
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    for (std::size_t p : vars_[cur].parents) {
      if (cut && p == *cut) continue;
      if (!anc[p]) {
        anc[p] = true;
        stack.push_back(p);
      }
    }
  }
  return anc;
}

DiscreteScm DiscreteScm::mutilated(std::size_t variable, std::size_t value) const {
  if (variable >= vars_.size()) throw DomainError("mutilated: variable out of range");
  if (value >= vars_[variable].cardinality) throw DomainError("mutilated: value out of range");
  DiscreteScm out = *this;
  Variable& v = out.vars_[variable];
  v.exogenous = false;
  v.distribution.clear();
  v.parents.clear();
  v.table = {value};
  return out;
}

bool is_exogenous_relative(const DiscreteScm& scm, std::size_t cause, std::size_t effect) {
  if (cause == effect) return false;
  const auto anc_c = scm.ancestors(cause);
  const auto anc_y = scm.ancestors(effect, cause);
  for (std::size_t i = 0; i < scm.size(); ++i)
    if (anc_c[i] && anc_y[i]) return false;
  return true;
}

PnsBreakdown pns_breakdown(const DiscreteScm& scm, const VariableValue& cause,
                           const VariableValue& effect, const PnsOptions& options) {
  const std::size_t ci = scm.index_of(cause.name);
  const std::size_t yi = scm.index_of(effect.name);
  const Variable& cv = scm.variable(ci);
  if (cv.cardinality != 2)
    throw DomainError("PNS needs a binary cause; '" + cause.name + "' has " +
                      std::to_string(cv.cardinality) + " values and no defined complement intervention");
  if (cause.value >= 2) throw DomainError("cause value out of range");
  if (effect.value >= scm.variable(yi).cardinality) throw DomainError("effect value out of range");
  if (options.check_exogeneity && !is_exogenous_relative(scm, ci, yi))
    throw DomainError("exogeneity violated: '" + cause.name + "' and '" + effect.name +
                      "' share a common ancestor");
  const std::size_t c = cause.value;
  const std::size_t not_c = 1 - c;
  const std::size_t y = effect.value;
  const std::uint64_t states = scm.exogenous_state_count();
  if (states > options.state_cap)
    throw IntractableError("exogenous state space " + std::to_string(states) + " exceeds cap " +
                           std::to_string(options.state_cap));

  PnsBreakdown out;
  double p_c_and_y = 0.0, p_notc_and_y = 0.0;
  Assignment factual, do_c, do_not_c;
  scm.enumerate(
      [&](const Assignment& values, double prob) {
        factual = values;
        do_c = values;
        do_not_c = values;
        scm.evaluate(do_c, Intervention{ci, c});
        scm.evaluate(do_not_c, Intervention{ci, not_c});
        const bool fc = factual[ci] == c;
        const bool fy = factual[yi] == y;
        const bool yc = do_c[yi] == y;
        const bool ync = do_not_c[yi] != y;
        if (fc && factual[yi] != do_c[yi]) out.consistency_holds = false;
        if (!fc && factual[yi] != do_not_c[yi]) out.consistency_holds = false;
        if (yc && !fc && !fy) out.sufficiency_term += prob;
        if (ync && fc && fy) out.necessity_term += prob;
        if (yc && ync) out.joint_counterfactual += prob;
        if (yc) out.p_do_c_y += prob;
        if (ync) out.p_do_notc_not_y += prob;
        if (fc) out.p_c += prob;
        if (fy) out.p_y += prob;
        if (fc && fy) p_c_and_y += prob;
        if (!fc && fy) p_notc_and_y += prob;
      },
      std::nullopt, options.state_cap);
  out.pns = out.sufficiency_term + out.necessity_term;
  const auto unit = [](double x) { return std::clamp(x, 0.0, 1.0); };
  out.pns = unit(out.pns);
  out.p_c = unit(out.p_c);
  out.p_y = unit(out.p_y);
  out.p_do_c_y = unit(out.p_do_c_y);
  out.p_do_notc_not_y = unit(out.p_do_notc_not_y);
  out.p_y_given_c = out.p_c > 0.0 ? unit(p_c_and_y / out.p_c) : 0.0;
  out.p_y_given_not_c = out.p_c < 1.0 ? unit(p_notc_and_y / (1.0 - out.p_c)) : 0.0;
  return out;
}

double exact_pns(const DiscreteScm& scm, const VariableValue& cause, const VariableValue& effect,
                 const PnsOptions& options) {
  return pns_breakdown(scm, cause, effect, options).pns;
}

causation::Simplex interventional_distribution(const DiscreteScm& scm, const Intervention& intervention,
                                               std::size_t target, std::uint64_t cap) {
  std::vector<double> dist(scm.variable(target).cardinality, 0.0);
  scm.enumerate([&](const Assignment& values, double prob) { dist[values[target]] += prob; },
                intervention, cap);
  if (dist.size() == 1) dist.push_back(0.0);
  return causation::Simplex::normalized(std::move(dist));
}

JointTable::JointTable(std::vector<std::string> names, std::vector<std::size_t> cardinalities,
                       std::vector<double> cells)
    : names_(std::move(names)), cards_(std::move(cardinalities)), cells_(std::move(cells)) {
  if (names_.size() != cards_.size()) throw DomainError("joint: names and cardinalities differ");
  std::size_t total = 1;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (cards_[i] < 1) throw DomainError("joint: cardinality must be >= 1");
    for (std::size_t j = 0; j < i; ++j)
      if (names_[i] == names_[j]) throw DomainError("joint: duplicate variable '" + names_[i] + "'");
    total *= cards_[i];
  }
  if (cells_.size() != total)
    throw DomainError("joint: expected " + std::to_string(total) + " cells, got " +
                      std::to_string(cells_.size()));
  double sum = 0.0;
  for (double& p : cells_) {
    if (!(p >= 0.0 && p <= 1.0 + kSumTolerance)) throw DomainError("joint: cell outside [0, 1]");
    p = std::min(p, 1.0);
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance * std::max<double>(1.0, std::sqrt(static_cast<double>(total))))
    throw DomainError("joint: cells sum to " + fmt(sum));
}

JointTable JointTable::from_scm(const DiscreteScm& scm, std::uint64_t cap) {
  std::vector<std::string> names;
  std::vector<std::size_t> cards;
  for (const auto& v : scm.variables()) {
    names.push_back(v.name);
    cards.push_back(v.cardinality);
  }
  std::size_t total = 1;
  for (auto c : cards) total *= c;
  std::vector<double> cells(total, 0.0);
  scm.enumerate(
      [&](const Assignment& values, double prob) {
        std::size_t flat = 0;
        for (std::size_t i = 0; i < values.size(); ++i) flat = flat * cards[i] + values[i];
        cells[flat] += prob;
      },
      std::nullopt, cap);
  return JointTable(std::move(names), std::move(cards), std::move(cells));
}

std::size_t JointTable::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw DomainError("joint: unknown variable '" + std::string(name) + "'");
}

std::size_t JointTable::flat_index(std::span<const std::size_t> assignment) const {
  if (assignment.size() != cards_.size()) throw DomainError("joint: assignment length mismatch");
  std::size_t flat = 0;
  for (std::size_t i = 0; i < cards_.size(); ++i) {
    if (assignment[i] >= cards_[i]) throw DomainError("joint: assignment out of range");
    flat = flat * cards_[i] + assignment[i];
  }
  return flat;
}

Assignment JointTable::unflatten(std::size_t flat) const {
  Assignment a(cards_.size());
  for (std::size_t i = cards_.size(); i-- > 0;) {
    a[i] = flat % cards_[i];
    flat /= cards_[i];
  }
  return a;
}

double JointTable::probability(const Evidence& evidence) const {
  std::vector<std::pair<std::size_t, std::size_t>> ev;
  for (const auto& [name, value] : evidence) ev.emplace_back(index_of(name), value);
  double total = 0.0;
  for (std::size_t f = 0; f < cells_.size(); ++f) {
    if (cells_[f] == 0.0) continue;
    const Assignment a = unflatten(f);
    bool match = true;
    for (const auto& [i, v] : ev) match = match && a[i] == v;
    if (match) total += cells_[f];
  }
  return total;
}

JointTable JointTable::marginal(const std::vector<std::string>& keep) const {
  std::vector<std::size_t> idx;
  std::vector<std::size_t> cards;
  for (const auto& n : keep) {
    idx.push_back(index_of(n));
    cards.push_back(cards_[idx.back()]);
  }
  std::size_t total = 1;
  for (auto c : cards) total *= c;
  std::vector<double> cells(total, 0.0);
  for (std::size_t f = 0; f < cells_.size(); ++f) {
    const Assignment a = unflatten(f);
    std::size_t flat = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) flat = flat * cards[k] + a[idx[k]];
    cells[flat] += cells_[f];
  }
  return JointTable(keep, std::move(cards), std::move(cells));
}

causation::Simplex exact_posterior(const JointTable& joint, const std::string& target,
                                   const Evidence& evidence) {
  const std::size_t t = joint.index_of(target);
  std::vector<std::pair<std::size_t, std::size_t>> ev;
  for (const auto& [name, value] : evidence) ev.emplace_back(joint.index_of(name), value);
  std::vector<double> post(joint.cardinalities()[t], 0.0);
  double total = 0.0;
  for (std::size_t f = 0; f < joint.cells().size(); ++f) {
    const double p = joint.cells()[f];
    if (p == 0.0) continue;
    const Assignment a = joint.unflatten(f);
    bool match = true;
    for (const auto& [i, v] : ev) match = match && a[i] == v;
    if (!match) continue;
    post[a[t]] += p;
    total += p;
  }
  if (total < kEvidenceFloor) throw DegenerateError("evidence has probability below 1e-12");
  for (double& p : post) p /= total;
  if (post.size() == 1) post.push_back(0.0);
  return causation::Simplex(std::move(post));
}

JointTable simulate_pseudo_labels(const JointTable& joint, const std::string& cause,
                                  const std::map<std::size_t, causation::Simplex>& predictor,
                                  causation::PseudoLabelMode mode, const std::string& pseudo_name) {
  const std::size_t ci = joint.index_of(cause);
  std::size_t k = 0;
  for (const auto& [c, s] : predictor) {
    if (k == 0) k = s.size();
    if (s.size() != k) throw DomainError("predictor simplices have different lengths");
  }
  for (std::size_t c = 0; c < joint.cardinalities()[ci]; ++c) {
    const double mass = joint.probability({{cause, c}});
    if (mass > 0.0 && !predictor.contains(c))
      throw DomainError("predictor has no entry for " + cause + "=" + std::to_string(c));
  }
  auto names = joint.names();
  auto cards = joint.cardinalities();
  names.push_back(pseudo_name);
  cards.push_back(k);
  std::vector<double> cells(joint.cells().size() * k, 0.0);
  for (std::size_t f = 0; f < joint.cells().size(); ++f) {
    const double p = joint.cells()[f];
    if (p == 0.0) continue;
    const Assignment a = joint.unflatten(f);
    const causation::Simplex& s = predictor.at(a[ci]);
    if (mode == causation::PseudoLabelMode::argmax) {
      cells[f * k + s.argmax()] += p;
    } else {
      for (std::size_t y = 0; y < k; ++y) cells[f * k + y] += p * s[y];
    }
  }
  return JointTable(std::move(names), std::move(cards), std::move(cells));
}

DiscreteScm parse_scm(std::string_view text) {
  const auto lines = logical_lines(text);
  check_header(lines, "scm");
  DiscreteScm scm;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [lineno, t] = lines[i];
    try {
      if (t[0] == "exogenous") {
        if (t.size() < 3) throw ParseError("exogenous needs a name and probabilities", lineno);
        std::vector<double> dist;
        for (std::size_t k = 2; k < t.size(); ++k) dist.push_back(parse_number(t[k], lineno));
        scm.add_exogenous(t[1], std::move(dist));
      } else if (t[0] == "endogenous") {
        if (t.size() < 4) throw ParseError("endogenous needs name, cardinality and a table", lineno);
        const std::size_t card = parse_count(t[2], lineno);
        std::size_t k = 3;
        std::vector<std::string> parents;
        if (t[k] == "parents") {
          for (++k; k < t.size() && t[k] != "table"; ++k) parents.push_back(t[k]);
        }
        if (k >= t.size() || t[k] != "table") throw ParseError("missing 'table' keyword", lineno);
        std::vector<std::size_t> table;
        for (++k; k < t.size(); ++k) table.push_back(parse_count(t[k], lineno));
        scm.add_endogenous(t[1], card, parents, std::move(table));
      } else {
        throw ParseError("unknown directive '" + t[0] + "'", lineno);
      }
    } catch (const ParseError&) {
      throw;
    } catch (const DomainError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return scm;
}

std::string to_text(const DiscreteScm& scm) {
  std::ostringstream out;
  out << "scm v1\n";
  for (const auto& v : scm.variables()) {
    if (v.exogenous) {
      out << "exogenous " << v.name;
      for (double p : v.distribution) out << ' ' << fmt(p);
    } else {
      out << "endogenous " << v.name << ' ' << v.cardinality;
      if (!v.parents.empty()) {
        out << " parents";
        for (auto p : v.parents) out << ' ' << scm.variable(p).name;
      }
      out << " table";
      for (auto o : v.table) out << ' ' << o;
    }
    out << '\n';
  }
  return out.str();
}

JointTable parse_joint(std::string_view text) {
  const auto lines = logical_lines(text);
  check_header(lines, "joint");
  std::vector<std::string> names;
  std::vector<std::size_t> cards;
  std::vector<double> cells;
  bool have_vars = false, have_cells = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [lineno, t] = lines[i];
    if (t[0] == "variables") {
      for (std::size_t k = 1; k < t.size(); ++k) {
        const auto colon = t[k].find(':');
        if (colon == std::string::npos) throw ParseError("expected name:cardinality", lineno);
        names.push_back(t[k].substr(0, colon));
        cards.push_back(parse_count(t[k].substr(colon + 1), lineno));
      }
      have_vars = true;
    } else if (t[0] == "cells") {
      for (std::size_t k = 1; k < t.size(); ++k) cells.push_back(parse_number(t[k], lineno));
      have_cells = true;
    } else {
      throw ParseError("unknown directive '" + t[0] + "'", lineno);
    }
  }
  if (!have_vars || !have_cells) throw ParseError("joint needs 'variables' and 'cells'");
  try {
    return JointTable(std::move(names), std::move(cards), std::move(cells));
  } catch (const DomainError& e) {
    throw ParseError(e.what());
  }
}

std::string to_text(const JointTable& joint) {
  std::ostringstream out;
  out << "joint v1\nvariables";
  for (std::size_t i = 0; i < joint.names().size(); ++i)
    out << ' ' << joint.names()[i] << ':' << joint.cardinalities()[i];
  out << "\ncells";
  for (double p : joint.cells()) out << ' ' << fmt(p);
  out << '\n';
  return out.str();
}

DiscreteScm load_scm(const std::string& path) { return parse_scm(read_file(path)); }
JointTable load_joint(const std::string& path) { return parse_joint(read_file(path)); }

}  // namespace snigl::scm
