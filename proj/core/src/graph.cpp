#include "snigl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "snigl/error.hpp"
#include "snigl/random.hpp"

namespace snigl::data {
namespace {

using json = nlohmann::ordered_json;

Edge make_edge(std::size_t a, std::size_t b) {
  const auto u = static_cast<std::uint32_t>(std::min(a, b));
  const auto v = static_cast<std::uint32_t>(std::max(a, b));
  return {u, v};
}

std::string fixed(double x, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

constexpr BaseKind kPairedBase[kMotifClasses] = {BaseKind::tree, BaseKind::ladder, BaseKind::wheel};
constexpr MotifKind kMotifs[kMotifClasses] = {MotifKind::house, MotifKind::cycle, MotifKind::crane};

}  // namespace

void Graph::validate() const {
  std::set<Edge> seen;
  for (const auto& [u, v] : edges) {
    if (u == v) throw DomainError("graph " + graph_id + ": self-loop on node " + std::to_string(u));
    if (u >= num_nodes || v >= num_nodes) throw DomainError("graph " + graph_id + ": edge endpoint out of range");
    if (!seen.insert(make_edge(u, v)).second) throw DomainError("graph " + graph_id + ": duplicate edge");
  }
  if (static_cast<std::size_t>(node_features.rows()) != num_nodes)
    throw DomainError("graph " + graph_id + ": feature rows do not match node count");
  if (!motif_mask.empty() && motif_mask.size() != edges.size())
    throw DomainError("graph " + graph_id + ": motif mask does not match edge count");
  if (!node_features.allFinite()) throw DomainError("graph " + graph_id + ": non-finite feature");
}

bool Graph::operator==(const Graph& o) const {
  return graph_id == o.graph_id && num_nodes == o.num_nodes && edges == o.edges &&
         node_features.rows() == o.node_features.rows() && node_features.cols() == o.node_features.cols() &&
         node_features == o.node_features && label == o.label && env == o.env && motif_mask == o.motif_mask &&
         base == o.base;
}

void Dataset::validate() const {
  if (graphs.empty()) throw DomainError("dataset is empty");
  if (num_classes < 2) throw DomainError("dataset needs at least two classes");
  std::set<std::string> envs(environments.begin(), environments.end());
  std::set<std::string> ids;
  for (const auto& g : graphs) {
    g.validate();
    if (g.label >= num_classes) throw DomainError("graph " + g.graph_id + ": label out of range");
    if (!envs.contains(g.env)) throw DomainError("graph " + g.graph_id + ": unknown environment '" + g.env + "'");
    if (static_cast<std::size_t>(g.node_features.cols()) != feature_dim)
      throw DomainError("graph " + g.graph_id + ": feature width differs from dataset");
    if (!ids.insert(g.graph_id).second) throw DomainError("duplicate graph_id '" + g.graph_id + "'");
  }
}

std::vector<std::size_t> Dataset::indices_of(const std::string& env) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < graphs.size(); ++i)
    if (graphs[i].env == env) out.push_back(i);
  return out;
}

Dataset Dataset::subset(const std::string& env) const {
  Dataset out;
  out.num_classes = num_classes;
  out.feature_dim = feature_dim;
  out.environments = {env};
  out.provenance = provenance;
  for (const auto& g : graphs)
    if (g.env == env) out.graphs.push_back(g);
  if (out.graphs.empty()) throw DomainError("environment '" + env + "' is empty");
  return out;
}

std::string to_string(MotifKind kind) {
  switch (kind) {
    case MotifKind::house: return "house";
    case MotifKind::cycle: return "cycle";
    case MotifKind::crane: return "crane";
  }
  return "?";
}

std::string to_string(BaseKind kind) {
  switch (kind) {
    case BaseKind::tree: return "tree";
    case BaseKind::ladder: return "ladder";
    case BaseKind::wheel: return "wheel";
  }
  return "?";
}

BaseKind parse_base_kind(const std::string& name) {
  if (name == "tree") return BaseKind::tree;
  if (name == "ladder") return BaseKind::ladder;
  if (name == "wheel") return BaseKind::wheel;
  throw DomainError("unknown base kind '" + name + "' (expected tree|ladder|wheel)");
}

void MotifSpec::validate() const {
  const double lo = 1.0 / 3.0 - 1e-12;
  if (!(bias >= lo && bias <= 1.0)) throw DomainError("bias must lie in [1/3, 1], got " + fixed(bias, 4));
  if (!(feature_bias >= lo && feature_bias <= 1.0))
    throw DomainError("feature bias must lie in [1/3, 1], got " + fixed(feature_bias, 4));
  if (base_min < 4 || base_min > base_max) throw DomainError("base size range must satisfy 4 <= min <= max");
}

BaseKind paired_base(std::size_t label) {
  if (label >= kMotifClasses) throw DomainError("motif label out of range");
  return kPairedBase[label];
}

std::pair<std::size_t, std::vector<Edge>> motif_shape(MotifKind kind) {
  switch (kind) {
    case MotifKind::house:
      return {5, {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 4}, {1, 4}}};
    case MotifKind::cycle:
      return {6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 5}}};
    case MotifKind::crane:
      return {5, {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 2}, {3, 4}}};
  }
  return {0, {}};
}

std::pair<std::size_t, std::vector<Edge>> base_shape(BaseKind kind, std::size_t size, std::uint64_t seed) {
  std::vector<Edge> edges;
  switch (kind) {
    case BaseKind::tree: {
      Rng rng(seed);
      std::vector<std::size_t> open{0};  // nodes with fewer than two children
      std::vector<int> children(size, 0);
      for (std::size_t v = 1; v < size; ++v) {
        const std::size_t pick = rng.below(open.size());
        const std::size_t parent = open[pick];
        edges.push_back(make_edge(parent, v));
        if (++children[parent] == 2) open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
        open.push_back(v);
      }
      return {size, edges};
    }
    case BaseKind::ladder: {
      const std::size_t k = std::max<std::size_t>(2, size / 2);
      for (std::size_t i = 0; i < k; ++i) {
        edges.push_back(make_edge(i, i + k));
        if (i + 1 < k) {
          edges.push_back(make_edge(i, i + 1));
          edges.push_back(make_edge(i + k, i + k + 1));
        }
      }
      return {2 * k, edges};
    }
    case BaseKind::wheel: {
      const std::size_t rim = size - 1;
      for (std::size_t i = 1; i <= rim; ++i) {
        edges.push_back(make_edge(0, i));
        edges.push_back(make_edge(i, i == rim ? 1 : i + 1));
      }
      return {size, edges};
    }
  }
  return {0, {}};
}

Dataset generate_spurious_motif(std::size_t n, const MotifSpec& spec, std::uint64_t seed, const std::string& env) {
  spec.validate();
  if (n < kMotifClasses * 10)
    throw DomainError("need at least " + std::to_string(kMotifClasses * 10) + " graphs, got " + std::to_string(n));
  Dataset ds;
  ds.num_classes = kMotifClasses;
  ds.feature_dim = kMotifFeatureDim;
  ds.environments = {env};
  ds.provenance = "spmotif/v1 n=" + std::to_string(n) + " b=" + fixed(spec.bias, 6) + " fb=" +
                  fixed(spec.feature_bias, 6) + " seed=" + std::to_string(seed) + " base=" +
                  std::to_string(spec.base_min) + "-" + std::to_string(spec.base_max);
  ds.graphs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, i);
    Graph g;
    g.graph_id = env + ":" + std::to_string(i);
    g.env = env;
    g.label = rng.below(kMotifClasses);
    std::size_t base_index = g.label;
    if (!rng.bernoulli(spec.bias)) base_index = (g.label + 1 + rng.below(kMotifClasses - 1)) % kMotifClasses;
    const BaseKind base = kPairedBase[base_index];
    g.base = to_string(base);
    const std::size_t size = rng.between(spec.base_min, spec.base_max);
    const auto [base_n, base_edges] = base_shape(base, size, rng.next());
    const auto [motif_n, motif_edges] = motif_shape(kMotifs[g.label]);
    // Fuse one motif node onto one base node.
    const std::size_t fused = rng.below(motif_n);
    const std::size_t anchor = rng.below(base_n);
    const auto map = [&, fused = fused, anchor = anchor, base_n = base_n](std::size_t j) {
      if (j == fused) return anchor;
      return base_n + (j < fused ? j : j - 1);
    };
    g.num_nodes = base_n + motif_n - 1;
    for (const auto& e : base_edges) {
      g.edges.push_back(e);
      g.motif_mask.push_back(0);
    }
    for (const auto& [a, b] : motif_edges) {
      g.edges.push_back(make_edge(map(a), map(b)));
      g.motif_mask.push_back(1);
    }
    // Class signal on base nodes, a neutral block on motif nodes, noise everywhere.
    std::size_t signal = g.label;
    if (!rng.bernoulli(spec.feature_bias)) signal = (g.label + 1 + rng.below(kMotifClasses - 1)) % kMotifClasses;
    g.node_features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.num_nodes), kMotifFeatureDim);
    for (std::size_t v = 0; v < g.num_nodes; ++v) {
      const auto r = static_cast<Eigen::Index>(v);
      if (v < base_n && v != anchor) g.node_features(r, static_cast<Eigen::Index>(signal)) = 1.0;
      g.node_features(r, kMotifClasses) = rng.uniform();
    }
    ds.graphs.push_back(std::move(g));
  }
  return ds;
}

std::vector<double> empirical_label_dist(const Dataset& dataset, const std::string& env) {
  std::vector<double> counts(dataset.num_classes, 0.0);
  double total = 0.0;
  for (const auto& g : dataset.graphs) {
    if (g.env != env) continue;
    counts.at(g.label) += 1.0;
    total += 1.0;
  }
  if (total == 0.0) throw DomainError("environment '" + env + "' is empty");
  for (double& c : counts) c /= total;
  return counts;
}

namespace {

Dataset merge(std::vector<Dataset> parts) {
  Dataset out;
  out.num_classes = parts.front().num_classes;
  out.feature_dim = parts.front().feature_dim;
  std::vector<std::string> provenance;
  for (auto& p : parts) {
    for (auto& e : p.environments) out.environments.push_back(e);
    for (auto& g : p.graphs) out.graphs.push_back(std::move(g));
    provenance.push_back(p.provenance);
  }
  for (std::size_t i = 0; i < provenance.size(); ++i) out.provenance += (i ? "; " : "") + provenance[i];
  return out;
}

Dataset retag(const Dataset& pool, const std::vector<std::pair<std::string, std::vector<std::size_t>>>& envs,
              const std::string& note) {
  Dataset out;
  out.num_classes = pool.num_classes;
  out.feature_dim = pool.feature_dim;
  out.provenance = pool.provenance + "; " + note;
  for (const auto& [name, idx] : envs) {
    if (idx.empty()) throw DomainError("environment '" + name + "' is empty");
    out.environments.push_back(name);
    for (std::size_t i : idx) {
      Graph g = pool.graphs[i];
      g.env = name;
      out.graphs.push_back(std::move(g));
    }
  }
  return out;
}

}  // namespace

EnvironmentSplit split_bias_levels(const std::vector<double>& levels, std::size_t n_per_env, std::size_t n_test,
                                   std::uint64_t seed, std::size_t base_min, std::size_t base_max) {
  if (levels.size() < 2) throw DomainError("bias-levels split needs at least two training environments");
  std::vector<Dataset> train;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    MotifSpec spec{levels[i], levels[i], base_min, base_max};
    train.push_back(generate_spurious_motif(n_per_env, spec, mix_seed(seed, i + 1), "bias_" + fixed(levels[i], 2)));
  }
  for (std::size_t i = 0; i < levels.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (train[i].environments == train[j].environments)
        throw DomainError("bias levels must be distinct at two decimals");
  EnvironmentSplit out;
  out.train = merge(std::move(train));
  MotifSpec unbiased{1.0 / 3.0, 1.0 / 3.0, base_min, base_max};
  out.test = generate_spurious_motif(n_test, unbiased, mix_seed(seed, 0x7e57), "test");
  return out;
}

EnvironmentSplit split_base_kind(const Dataset& pool, BaseKind holdout) {
  std::map<std::string, std::vector<std::size_t>> by_base;
  for (std::size_t i = 0; i < pool.graphs.size(); ++i) {
    if (pool.graphs[i].base.empty()) throw DomainError("base-kind split needs graphs with a recorded base");
    by_base[pool.graphs[i].base].push_back(i);
  }
  const std::string held = to_string(holdout);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> train_envs, test_env;
  for (BaseKind k : {BaseKind::tree, BaseKind::ladder, BaseKind::wheel}) {
    const std::string name = to_string(k);
    if (name == held) test_env.emplace_back("test", by_base[name]);
    else train_envs.emplace_back("base_" + name, by_base[name]);
  }
  return {retag(pool, train_envs, "split=base-kind holdout=" + held),
          retag(pool, test_env, "split=base-kind holdout=" + held)};
}

EnvironmentSplit split_size_threshold(const Dataset& pool, std::optional<std::size_t> threshold) {
  if (pool.graphs.empty()) throw DomainError("size-threshold split of an empty dataset");
  const auto median_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> sizes;
    for (auto i : idx) sizes.push_back(pool.graphs[i].num_nodes);
    std::nth_element(sizes.begin(), sizes.begin() + static_cast<std::ptrdiff_t>(sizes.size() / 2), sizes.end());
    return sizes[sizes.size() / 2];
  };
  std::vector<std::size_t> all(pool.graphs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::size_t t = threshold.value_or(median_of(all));
  std::vector<std::size_t> small, large;
  for (auto i : all) (pool.graphs[i].num_nodes > t ? large : small).push_back(i);
  if (small.empty() || large.empty()) throw DomainError("size threshold leaves an empty side");
  const std::size_t m = median_of(small);
  std::vector<std::size_t> a, b;
  for (auto i : small) (pool.graphs[i].num_nodes > m ? b : a).push_back(i);
  if (b.empty()) {
    a.clear();
    for (auto i : small) (pool.graphs[i].num_nodes >= m ? b : a).push_back(i);
  }
  const std::string note = "split=size-threshold t=" + std::to_string(t);
  return {retag(pool, {{"size_small", a}, {"size_mid", b}}, note),
          retag(pool, {{"test", large}}, note)};
}

namespace {

json header_json(const Dataset& ds) {
  json h;
  h["version"] = kFormatVersion;
  h["kind"] = "dataset";
  h["num_classes"] = ds.num_classes;
  h["feature_dim"] = ds.feature_dim;
  h["environments"] = ds.environments;
  h["provenance"] = ds.provenance;
  return h;
}

json graph_json(const Graph& g) {
  json r;
  r["version"] = kFormatVersion;
  r["graph_id"] = g.graph_id;
  r["num_nodes"] = g.num_nodes;
  json edges = json::array();
  for (const auto& [u, v] : g.edges) edges.push_back({u, v});
  r["edges"] = std::move(edges);
  json feats = json::array();
  for (Eigen::Index i = 0; i < g.node_features.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < g.node_features.cols(); ++j) row.push_back(g.node_features(i, j));
    feats.push_back(std::move(row));
  }
  r["node_features"] = std::move(feats);
  r["label"] = g.label;
  r["env"] = g.env;
  if (g.has_motif_mask()) {
    json mask = json::array();
    for (std::size_t e = 0; e < g.edges.size(); ++e)
      if (g.motif_mask[e]) mask.push_back({g.edges[e].first, g.edges[e].second});
    r["motif_mask"] = std::move(mask);
  }
  if (!g.base.empty()) r["base"] = g.base;
  return r;
}

void check_version(const json& j, std::size_t line) {
  if (!j.contains("version")) throw ParseError("missing version field", line);
  if (!j["version"].is_number_integer()) throw ParseError("version must be an integer", line);
  const auto v = j["version"].get<long long>();
  if (v != kFormatVersion)
    throw VersionError("format version " + std::to_string(v) + " is not supported by reader version " +
                           std::to_string(kFormatVersion),
                       line);
}

Graph graph_from_json(const json& r, std::size_t feature_dim, std::size_t line) {
  check_version(r, line);
  Graph g;
  g.graph_id = r.at("graph_id").get<std::string>();
  g.num_nodes = r.at("num_nodes").get<std::size_t>();
  for (const auto& e : r.at("edges")) {
    if (!e.is_array() || e.size() != 2) throw ParseError("edge must be a [u, v] pair", line);
    g.edges.push_back(make_edge(e[0].get<std::size_t>(), e[1].get<std::size_t>()));
  }
  const auto& feats = r.at("node_features");
  if (feats.size() != g.num_nodes) throw ParseError("node_features has the wrong number of rows", line);
  g.node_features.resize(static_cast<Eigen::Index>(g.num_nodes), static_cast<Eigen::Index>(feature_dim));
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    if (feats[i].size() != feature_dim) throw ParseError("feature row has the wrong width", line);
    for (std::size_t j = 0; j < feature_dim; ++j)
      g.node_features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = feats[i][j].get<double>();
  }
  g.label = r.at("label").get<std::size_t>();
  g.env = r.at("env").get<std::string>();
  if (r.contains("motif_mask")) {
    std::set<Edge> motif;
    for (const auto& e : r["motif_mask"]) {
      if (!e.is_array() || e.size() != 2) throw ParseError("motif_mask entry must be a [u, v] pair", line);
      motif.insert(make_edge(e[0].get<std::size_t>(), e[1].get<std::size_t>()));
    }
    g.motif_mask.resize(g.edges.size(), 0);
    std::size_t hit = 0;
    for (std::size_t e = 0; e < g.edges.size(); ++e)
      if (motif.contains(g.edges[e])) {
        g.motif_mask[e] = 1;
        ++hit;
      }
    if (hit != motif.size()) throw ParseError("motif_mask names an edge that is not in the graph", line);
  }
  if (r.contains("base")) g.base = r["base"].get<std::string>();
  return g;
}

}  // namespace

std::string serialize_dataset(const Dataset& dataset) {
  std::string out = header_json(dataset).dump();
  out += '\n';
  for (const auto& g : dataset.graphs) {
    out += graph_json(g).dump();
    out += '\n';
  }
  return out;
}

Dataset parse_dataset(const std::string& text) {
  Dataset ds;
  std::size_t line = 0;
  std::size_t pos = 0;
  bool header = false;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string raw = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    ++line;
    if (raw.empty()) continue;
    json j;
    try {
      j = json::parse(raw);
    } catch (const json::parse_error& e) {
      throw ParseError("malformed record: " + std::string(e.what()), line);
    }
    try {
      if (!header) {
        check_version(j, line);
        ds.num_classes = j.at("num_classes").get<std::size_t>();
        ds.feature_dim = j.at("feature_dim").get<std::size_t>();
        ds.environments = j.at("environments").get<std::vector<std::string>>();
        ds.provenance = j.value("provenance", "");
        header = true;
      } else {
        ds.graphs.push_back(graph_from_json(j, ds.feature_dim, line));
      }
    } catch (const ParseError&) {
      throw;
    } catch (const json::exception& e) {
      throw ParseError("malformed record: " + std::string(e.what()), line);
    }
  }
  if (!header) throw ParseError("missing dataset header", 1);
  try {
    ds.validate();
  } catch (const DomainError& e) {
    throw ParseError(e.what());
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  const std::string text = serialize_dataset(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw WriteError("write to '" + path + "' failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return parse_dataset(s.str());
}

}  // namespace snigl::data
