#include "report.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "snigl/error.hpp"

namespace snigl::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw DomainError("summary of an empty sample");
  Summary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::optional<Summary> VariantMetrics::auc_summary() const {
  if (auc.empty()) return std::nullopt;
  return summarize(auc);
}

const VariantMetrics* MetricsReport::find(Variant v) const {
  for (const auto& m : variants)
    if (m.variant == v) return &m;
  return nullptr;
}

namespace {

void check_summary(const json& j, const char* values_key, const char* mean_key, const char* std_key,
                   const std::string& where) {
  if (!j.contains(values_key) || j.at(values_key).empty()) return;
  const auto s = summarize(j.at(values_key).get<std::vector<double>>());
  if (std::abs(s.mean - j.at(mean_key).get<double>()) > 1e-9 || std::abs(s.std - j.at(std_key).get<double>()) > 1e-9)
    throw DomainError("report " + where + ": " + mean_key + "/" + std_key + " disagree with per-seed values");
}

}  // namespace

void MetricsReport::validate() const {
  for (const auto& m : variants) {
    const auto n = m.seeds.size();
    if (n == 0) throw DomainError("report variant " + to_string(m.variant) + " has no seeds");
    if (m.accuracy.size() != n || m.invariant_accuracy.size() != n || (!m.auc.empty() && m.auc.size() != n) ||
        (!m.mask_motif.empty() && m.mask_motif.size() != n) || m.mask_other.size() != m.mask_motif.size())
      throw DomainError("report variant " + to_string(m.variant) + " has ragged per-seed columns");
  }
  // The serialized summaries are recomputed from the per-seed values.
  const auto j = json::parse(to_json(*this).dump());
  for (const auto& v : j.at("variants")) {
    const auto where = v.at("variant").get<std::string>();
    check_summary(v, "accuracy", "accuracy_mean", "accuracy_std", where);
    check_summary(v, "auc", "auc_mean", "auc_std", where);
  }
}

ordered_json to_json(const MetricsReport& report) {
  ordered_json j;
  j["num_classes"] = report.num_classes;
  j["variants"] = ordered_json::array();
  for (const auto& m : report.variants) {
    ordered_json v;
    v["variant"] = to_string(m.variant);
    v["seeds"] = m.seeds;
    v["accuracy"] = m.accuracy;
    const auto acc = m.accuracy_summary();
    v["accuracy_mean"] = acc.mean;
    v["accuracy_std"] = acc.std;
    v["invariant_accuracy"] = m.invariant_accuracy;
    if (const auto auc = m.auc_summary()) {
      v["auc"] = m.auc;
      v["auc_mean"] = auc->mean;
      v["auc_std"] = auc->std;
    }
    if (!m.mask_motif.empty()) {
      v["mask_motif"] = m.mask_motif;
      v["mask_other"] = m.mask_other;
    }
    j["variants"].push_back(std::move(v));
  }
  return j;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  try {
    r.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& v : j.at("variants")) {
      VariantMetrics m;
      m.variant = parse_variant(v.at("variant").get<std::string>());
      m.seeds = v.at("seeds").get<std::vector<std::uint64_t>>();
      m.accuracy = v.at("accuracy").get<std::vector<double>>();
      m.invariant_accuracy = v.at("invariant_accuracy").get<std::vector<double>>();
      if (v.contains("auc")) m.auc = v["auc"].get<std::vector<double>>();
      if (v.contains("mask_motif")) {
        m.mask_motif = v["mask_motif"].get<std::vector<double>>();
        m.mask_other = v.at("mask_other").get<std::vector<double>>();
      }
      r.variants.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
  return r;
}

void save_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path + "' for writing");
  out << to_json(report).dump(2) << '\n';
  if (!out) throw WriteError("write to '" + path + "' failed");
}

MetricsReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("metrics report '" + path + "' not found");
  try {
    return report_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ParseError("metrics report '" + path + "': " + e.what());
  }
}

void save_report_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path + "' for writing");
  out << "variant,seed,accuracy,invariant_accuracy,auc\n";
  for (const auto& m : report.variants)
    for (std::size_t i = 0; i < m.seeds.size(); ++i) {
      out << to_string(m.variant) << ',' << m.seeds[i] << ',' << json(m.accuracy[i]).dump() << ','
          << json(m.invariant_accuracy[i]).dump() << ',';
      if (!m.auc.empty()) out << json(m.auc[i]).dump();
      out << '\n';
    }
  if (!out) throw WriteError("write to '" + path + "' failed");
}

std::pair<double, double> mask_edge_means(const std::string& masks_path) {
  std::ifstream in(masks_path);
  if (!in) throw MissingInputError("mask export '" + masks_path + "' not found");
  double motif = 0.0, other = 0.0;
  std::size_t n_motif = 0, n_other = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    if (!j.contains("motif_mask")) continue;
    const auto flags = j["motif_mask"].get<std::vector<int>>();
    const auto& edges = j.at("edges");
    if (flags.size() != edges.size()) throw ParseError("mask export: motif mask length differs from edge count");
    for (std::size_t e = 0; e < flags.size(); ++e) {
      const double p = edges[e][2].get<double>();
      if (flags[e]) {
        motif += p;
        ++n_motif;
      } else {
        other += p;
        ++n_other;
      }
    }
  }
  if (n_motif == 0 || n_other == 0) throw DomainError("mask export has no motif-labelled edges of both kinds");
  return {motif / static_cast<double>(n_motif), other / static_cast<double>(n_other)};
}

}  // namespace snigl::pipeline
