#include "snigl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "snigl/error.hpp"
#include "snigl/random.hpp"

namespace snigl::model {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'N', 'I', 'G', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Matrix glorot(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(static_cast<ad::Index>(rows), static_cast<ad::Index>(cols));
  for (ad::Index i = 0; i < m.rows(); ++i)
    for (ad::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

void add_linear(std::map<std::string, Matrix>& t, const std::string& prefix, std::size_t in, std::size_t out,
                std::uint64_t seed) {
  t[prefix + "W"] = glorot(in, out, mix_seed(seed, name_hash(prefix + "W")));
  t[prefix + "b"] = Matrix::Zero(1, static_cast<ad::Index>(out));
}

void add_encoder(std::map<std::string, Matrix>& t, const std::string& p, const ModelConfig& c, std::uint64_t seed) {
  add_linear(t, p + "/l1/fc1/", c.feature_dim, c.hidden, seed);
  add_linear(t, p + "/l1/fc2/", c.hidden, c.hidden, seed);
  add_linear(t, p + "/l2/fc1/", c.hidden, c.hidden, seed);
  add_linear(t, p + "/l2/fc2/", c.hidden, c.hidden, seed);
}

void add_head(std::map<std::string, Matrix>& t, const std::string& p, const ModelConfig& c, std::uint64_t seed) {
  add_linear(t, p + "/fc1/", c.hidden, c.hidden, seed);
  add_linear(t, p + "/fc2/", c.hidden, c.hidden, seed);
  add_linear(t, p + "/fc3/", c.hidden, c.num_classes, seed);
}

Var linear(const Bound& p, const std::string& prefix, Var x) {
  return ad::add_row(ad::matmul(x, p[prefix + "W"]), p[prefix + "b"]);
}

Var ones_weights(ad::Tape& tape, const GraphBatch& batch) {
  return tape.constant(Matrix::Ones(static_cast<ad::Index>(batch.num_edges()), 1));
}

Matrix weights_matrix(const std::vector<double>& w, std::size_t edges) {
  if (w.empty()) return Matrix::Ones(static_cast<ad::Index>(edges), 1);
  if (w.size() != edges) throw DomainError("edge weights must match the graph's edge count");
  return Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<ad::Index>(w.size()));
}

}  // namespace

std::string to_string(Readout r) { return r == Readout::mean ? "mean" : "max"; }

Readout parse_readout(const std::string& name) {
  if (name == "mean") return Readout::mean;
  if (name == "max") return Readout::max;
  throw DomainError("unknown readout '" + name + "' (expected mean|max)");
}

std::string to_string(EvalMask m) { return m == EvalMask::threshold ? "threshold" : "probability"; }

EvalMask parse_eval_mask(const std::string& name) {
  if (name == "threshold") return EvalMask::threshold;
  if (name == "probability") return EvalMask::probability;
  throw DomainError("unknown eval mask '" + name + "' (expected threshold|probability)");
}

void ModelConfig::validate() const {
  if (feature_dim == 0) throw DomainError("feature_dim must be positive");
  if (hidden == 0) throw DomainError("hidden width must be positive");
  if (num_classes < 2) throw DomainError("num_classes must be at least 2");
}

std::string encoder_prefix(Branch branch) { return branch == Branch::invariant ? "theta_c" : "theta_s"; }

std::string head_prefix(Branch branch, const std::string& env) {
  if (branch == Branch::invariant) return "phi_c";
  if (env.empty()) throw DomainError("variant head needs an environment");
  return "Phi_s/" + env;
}

ModelParams ModelParams::init(const ModelConfig& config, const std::vector<std::string>& envs, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  add_encoder(p.tensors, "theta_c", config, seed);
  add_encoder(p.tensors, "theta_s", config, seed);
  add_head(p.tensors, "phi_c", config, seed);
  for (const auto& e : envs) p.add_variant_head(e, seed);
  return p;
}

void ModelParams::add_variant_head(const std::string& env, std::uint64_t seed) {
  if (env.empty() || env.find('/') != std::string::npos) throw DomainError("invalid environment name '" + env + "'");
  add_head(tensors, head_prefix(Branch::variant, env), config, seed);
}

bool ModelParams::has_variant_head(const std::string& env) const {
  return tensors.contains(head_prefix(Branch::variant, env) + "/fc1/W");
}

std::vector<std::string> ModelParams::variant_envs() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : tensors) {
    if (name.rfind("Phi_s/", 0) != 0) continue;
    const auto rest = name.substr(6);
    const auto env = rest.substr(0, rest.find('/'));
    if (out.empty() || out.back() != env) out.push_back(env);
  }
  return out;
}

const Matrix& ModelParams::at(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw DomainError("unknown parameter '" + name + "'");
  return it->second;
}

bool ModelParams::all_finite() const {
  for (const auto& [_, m] : tensors)
    if (!m.allFinite()) return false;
  return true;
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (!(config == o.config) || tensors.size() != o.tensors.size()) return false;
  for (const auto& [name, m] : tensors) {
    const auto it = o.tensors.find(name);
    if (it == o.tensors.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols() || it->second != m)
      return false;
  }
  return true;
}

GraphBatch GraphBatch::of(const std::vector<const data::Graph*>& graphs) {
  if (graphs.empty()) throw DomainError("empty graph batch");
  GraphBatch b;
  const auto width = graphs.front()->node_features.cols();
  std::size_t nodes = 0;
  for (const auto* g : graphs) nodes += g->num_nodes;
  b.features.resize(static_cast<ad::Index>(nodes), width);
  for (const auto* g : graphs) {
    if (g->node_features.cols() != width) throw DomainError("feature width mismatch inside a batch");
    const std::size_t base = b.num_nodes;
    b.features.middleRows(static_cast<ad::Index>(base), static_cast<ad::Index>(g->num_nodes)) = g->node_features;
    for (const auto& [u, v] : g->edges) {
      b.src.push_back(base + u);
      b.dst.push_back(base + v);
    }
    b.num_nodes += g->num_nodes;
    b.node_offsets.push_back(b.num_nodes);
    b.edge_offsets.push_back(b.src.size());
    b.labels.push_back(g->label);
    b.envs.push_back(g->env);
    ++b.num_graphs;
  }
  return b;
}

GraphBatch GraphBatch::of(const data::Graph& graph) { return of(std::vector<const data::Graph*>{&graph}); }

GraphBatch GraphBatch::replicate(std::size_t copies) const {
  GraphBatch b;
  b.features.resize(static_cast<ad::Index>(num_nodes * copies), features.cols());
  for (std::size_t r = 0; r < copies; ++r) {
    const std::size_t base = r * num_nodes;
    b.features.middleRows(static_cast<ad::Index>(base), static_cast<ad::Index>(num_nodes)) = features;
    for (std::size_t e = 0; e < src.size(); ++e) {
      b.src.push_back(base + src[e]);
      b.dst.push_back(base + dst[e]);
    }
    for (std::size_t g = 0; g < num_graphs; ++g) {
      b.node_offsets.push_back(base + node_offsets[g + 1]);
      b.edge_offsets.push_back(r * src.size() + edge_offsets[g + 1]);
      b.labels.push_back(labels[g]);
      b.envs.push_back(envs[g]);
    }
  }
  b.num_graphs = num_graphs * copies;
  b.num_nodes = num_nodes * copies;
  return b;
}

Bound::Bound(ad::Tape& tape, const ModelParams& params, std::optional<std::vector<std::string>> trainable_prefixes)
    : tape_(tape), config_(params.config) {
  for (const auto& [name, m] : params.tensors) {
    bool train = !trainable_prefixes.has_value();
    if (trainable_prefixes)
      for (const auto& pre : *trainable_prefixes) train = train || name.rfind(pre, 0) == 0;
    vars_.emplace(name, train ? tape.variable(m) : tape.constant(m));
    trainable_.emplace(name, train);
  }
}

Var Bound::operator[](const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw DomainError("unknown parameter '" + name + "'");
  return it->second;
}

std::map<std::string, Matrix> Bound::gradients() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, v] : vars_)
    if (trainable_.at(name)) out.emplace(name, tape_.grad(v));
  return out;
}

Var encode(const Bound& p, Branch branch, const GraphBatch& batch, Var w) {
  if (batch.features.cols() != static_cast<ad::Index>(p.config().feature_dim))
    throw DomainError("feature width " + std::to_string(batch.features.cols()) + " does not match model width " +
                      std::to_string(p.config().feature_dim));
  if (w.rows() != static_cast<ad::Index>(batch.num_edges()) || w.cols() != 1)
    throw DomainError("edge weights must be an E x 1 column");
  const std::string pre = encoder_prefix(branch);
  ad::Tape& t = p.tape();
  Var x = t.constant(batch.features);
  Var h0 = ad::add(x, ad::aggregate(x, w, batch.src, batch.dst));
  Var a1 = ad::tanh(linear(p, pre + "/l1/fc2/", ad::tanh(linear(p, pre + "/l1/fc1/", h0))));
  Var m1 = ad::add(a1, ad::aggregate(a1, w, batch.src, batch.dst));
  return linear(p, pre + "/l2/fc2/", ad::tanh(linear(p, pre + "/l2/fc1/", m1)));
}

Var edge_logits(Var z, const GraphBatch& batch) { return ad::edge_dot(z, batch.src, batch.dst); }

Matrix logistic_noise(std::size_t edges, std::uint64_t seed) {
  Rng rng(seed);
  Matrix n(static_cast<ad::Index>(edges), 1);
  for (ad::Index e = 0; e < n.rows(); ++e) {
    const double u = rng.uniform_open();
    n(e, 0) = std::log(u) - std::log1p(-u);
  }
  return n;
}

Var relaxed_sample(Var logits, const Matrix& noise, double tau, bool hard) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive");
  ad::Tape& t = *logits.tape;
  Var relaxed = ad::sigmoid(ad::scale(ad::add(logits, t.constant(noise)), 1.0 / tau));
  if (!hard) return relaxed;
  Matrix h = ((logits.value() + noise).array() > 0.0).cast<double>().matrix();
  return ad::straight_through(h, relaxed);
}

Var readout(const Bound& p, Var h, Var w, const GraphBatch& batch) {
  Var nodes = ad::incident_any(w, batch.src, batch.dst, batch.num_nodes);
  if (p.config().readout == Readout::max) return ad::segment_weighted_max(h, nodes, batch.node_offsets);
  return ad::segment_weighted_mean(h, nodes, batch.node_offsets);
}

Var head_logits(const Bound& p, const std::string& prefix, Var reps) {
  Var a = ad::tanh(linear(p, prefix + "/fc1/", reps));
  Var b = ad::tanh(linear(p, prefix + "/fc2/", a));
  return linear(p, prefix + "/fc3/", b);
}

Var subgraph_representation(const Bound& p, Branch branch, const GraphBatch& batch, Var w) {
  return readout(p, encode(p, branch, batch, w), w, batch);
}

Matrix eval_weights(const Matrix& probs, EvalMask mode) {
  if (mode == EvalMask::probability) return probs;
  return (probs.array() > 0.5).cast<double>().matrix();
}

Var similarity_mean(Var rep_c, Var others) {
  const double m = static_cast<double>(others.rows());
  Var a = ad::row_normalize(rep_c);
  Var b = ad::row_normalize(others);
  return ad::scale(ad::row_sum(ad::sigmoid(ad::matmul(a, ad::transpose(b)))), 1.0 / m);
}

Matrix encode(const data::Graph& graph, const ModelParams& params, Branch branch, const std::vector<double>& weights) {
  ad::Tape t;
  Bound p(t, params, std::vector<std::string>{});
  const auto batch = GraphBatch::of(graph);
  return encode(p, branch, batch, t.constant(weights_matrix(weights, batch.num_edges()))).value();
}

EdgeProbabilityMask edge_probabilities(const Matrix& z, const data::Graph& graph, Branch kind) {
  if (z.rows() != static_cast<ad::Index>(graph.num_nodes)) throw DomainError("embedding rows must equal node count");
  EdgeProbabilityMask m{graph.graph_id, kind, {}};
  for (const auto& [u, v] : graph.edges)
    m.probs.push_back(causation::sigmoid(z.row(u).dot(z.row(v))));
  return m;
}

EdgeProbabilityMask edge_probabilities(const data::Graph& graph, const ModelParams& params, Branch kind) {
  return edge_probabilities(encode(graph, params, kind), graph, kind);
}

SubgraphSample sample_subgraph(const EdgeProbabilityMask& mask, double tau, std::uint64_t seed, bool hard) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive");
  const Matrix noise = logistic_noise(mask.probs.size(), seed);
  SubgraphSample s{{}, tau, seed, hard};
  for (std::size_t e = 0; e < mask.probs.size(); ++e) {
    const double p = std::clamp(mask.probs[e], 1e-300, 1.0);
    const double logit = std::log(p) - std::log1p(-std::min(p, 1.0 - 1e-16));
    const double x = logit + noise(static_cast<ad::Index>(e), 0);
    s.weights.push_back(hard ? (x > 0.0 ? 1.0 : 0.0) : causation::sigmoid(x / tau));
  }
  return s;
}

causation::Simplex classify(const data::Graph& graph, const ModelParams& params, const std::vector<double>& weights,
                            const std::optional<std::string>& env) {
  if (env && !params.has_variant_head(*env)) throw DomainError("unknown environment '" + *env + "'");
  const Branch branch = env ? Branch::variant : Branch::invariant;
  ad::Tape t;
  Bound p(t, params, std::vector<std::string>{});
  const auto batch = GraphBatch::of(graph);
  Var w = t.constant(weights_matrix(weights, batch.num_edges()));
  Var rep = subgraph_representation(p, branch, batch, w);
  const Matrix probs = ad::softmax_rows(head_logits(p, head_prefix(branch, env.value_or("")), rep)).value();
  std::vector<double> v(probs.data(), probs.data() + probs.size());
  return causation::Simplex::normalized(std::move(v));
}

double estimate_p_c_given_g(const data::Graph& graph, const SubgraphSample& c, std::size_t k,
                            const ModelParams& params, std::uint64_t seed, double tau) {
  if (k == 0) throw DomainError("k must be at least 1");
  const auto mask = edge_probabilities(graph, params, Branch::invariant);
  ad::Tape t;
  Bound p(t, params, std::vector<std::string>{});
  const auto batch = GraphBatch::of(graph);
  Var rep_c = subgraph_representation(p, Branch::invariant, batch, t.constant(weights_matrix(c.weights, batch.num_edges())));
  std::vector<Var> reps;
  for (std::size_t i = 0; i < k; ++i) {
    const auto s = sample_subgraph(mask, tau, mix_seed(seed, i), false);
    reps.push_back(subgraph_representation(p, Branch::invariant, batch, t.constant(weights_matrix(s.weights, batch.num_edges()))));
  }
  return similarity_mean(rep_c, ad::concat_rows(reps)).scalar();
}

BranchOutput infer_invariant(const ModelParams& params, const GraphBatch& batch, EvalMask mode) {
  ad::Tape t;
  Bound p(t, params, std::vector<std::string>{});
  BranchOutput out;
  Var z = encode(p, Branch::invariant, batch, ones_weights(t, batch));
  out.edge_probs = ad::sigmoid(edge_logits(z, batch)).value();
  Var w = t.constant(eval_weights(out.edge_probs, mode));
  Var rep = subgraph_representation(p, Branch::invariant, batch, w);
  out.reps = rep.value();
  out.probs = ad::softmax_rows(head_logits(p, head_prefix(Branch::invariant), rep)).value();
  return out;
}

BranchOutput infer_variant(const ModelParams& params, const GraphBatch& batch, EvalMask mode,
                           const std::optional<std::string>& env) {
  if (env && !params.has_variant_head(*env)) throw DomainError("unknown environment '" + *env + "'");
  ad::Tape t;
  Bound p(t, params, std::vector<std::string>{});
  BranchOutput out;
  Var z = encode(p, Branch::variant, batch, ones_weights(t, batch));
  out.edge_probs = ad::sigmoid(edge_logits(z, batch)).value();
  Var w = t.constant(eval_weights(out.edge_probs, mode));
  Var rep = subgraph_representation(p, Branch::variant, batch, w);
  out.reps = rep.value();
  if (env) out.probs = ad::softmax_rows(head_logits(p, head_prefix(Branch::variant, *env), rep)).value();
  return out;
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw ParseError("checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, params.config.feature_dim);
  put<std::uint64_t>(out, params.config.hidden);
  put<std::uint64_t>(out, params.config.num_classes);
  put<std::uint8_t>(out, params.config.readout == Readout::mean ? 0 : 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, m] : params.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (ad::Index i = 0; i < m.rows(); ++i)
      for (ad::Index j = 0; j < m.cols(); ++j) put<double>(out, m(i, j));
  }
  return out;
}

ModelParams parse_checkpoint(const std::string& in) {
  if (in.size() < sizeof kMagic || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0)
    throw ParseError("not a checkpoint (bad magic)");
  std::size_t pos = sizeof kMagic;
  const auto version = take<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported");
  ModelParams p;
  p.config.feature_dim = take<std::uint64_t>(in, pos);
  p.config.hidden = take<std::uint64_t>(in, pos);
  p.config.num_classes = take<std::uint64_t>(in, pos);
  p.config.readout = take<std::uint8_t>(in, pos) == 0 ? Readout::mean : Readout::max;
  const auto count = take<std::uint32_t>(in, pos);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = take<std::uint32_t>(in, pos);
    if (pos + len > in.size()) throw ParseError("checkpoint is truncated");
    std::string name = in.substr(pos, len);
    pos += len;
    const auto rows = take<std::uint64_t>(in, pos);
    const auto cols = take<std::uint64_t>(in, pos);
    if (rows * cols * sizeof(double) > in.size() - pos) throw ParseError("checkpoint is truncated");
    Matrix m(static_cast<ad::Index>(rows), static_cast<ad::Index>(cols));
    for (ad::Index i = 0; i < m.rows(); ++i)
      for (ad::Index j = 0; j < m.cols(); ++j) m(i, j) = take<double>(in, pos);
    p.tensors.emplace(std::move(name), std::move(m));
  }
  if (pos != in.size()) throw ParseError("trailing bytes after checkpoint");
  p.config.validate();
  return p;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WriteError("write to '" + path + "' failed");
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("checkpoint '" + path + "' not found");
  std::ostringstream s;
  s << in.rdbuf();
  return parse_checkpoint(s.str());
}

void export_masks(const std::vector<const data::Graph*>& graphs, const ModelParams& params, Branch kind,
                  const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path + "' for writing");
  for (const auto* g : graphs) {
    const auto mask = edge_probabilities(*g, params, kind);
    nlohmann::ordered_json j;
    j["graph_id"] = g->graph_id;
    j["kind"] = kind == Branch::invariant ? "invariant" : "variant";
    nlohmann::ordered_json edges = nlohmann::ordered_json::array();
    for (std::size_t e = 0; e < g->edges.size(); ++e)
      edges.push_back({g->edges[e].first, g->edges[e].second, mask.probs[e]});
    j["edges"] = std::move(edges);
    if (g->has_motif_mask()) j["motif_mask"] = g->motif_mask;
    out << j.dump() << '\n';
  }
  if (!out) throw WriteError("write to '" + path + "' failed");
}

}  // namespace snigl::model
