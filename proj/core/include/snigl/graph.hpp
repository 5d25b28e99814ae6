#pragma once

// Attributed graphs, the biased spurious-motif generator, environment splits,
// and the line-delimited dataset format.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace snigl::data {

using Edge = std::pair<std::uint32_t, std::uint32_t>;

inline constexpr int kFormatVersion = 1;

struct Graph {
  std::string graph_id;
  std::size_t num_nodes = 0;
  /// Undirected, stored with first < second.
  std::vector<Edge> edges;
  /// num_nodes x feature_dim.
  Eigen::MatrixXd node_features;
  std::size_t label = 0;
  std::string env;
  /// Per-edge flag: 1 when the edge belongs to the planted motif. Empty when unknown.
  std::vector<std::uint8_t> motif_mask;
  /// Base shape name for generated graphs; empty when unknown.
  std::string base;

  bool has_motif_mask() const { return !motif_mask.empty(); }
  /// Throws DomainError on self-loops, duplicates, out-of-range endpoints or
  /// a feature matrix of the wrong height.
  void validate() const;
  bool operator==(const Graph& other) const;
};

struct Dataset {
  std::vector<Graph> graphs;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::vector<std::string> environments;
  std::string provenance;

  void validate() const;
  std::size_t size() const { return graphs.size(); }
  /// Indices of graphs tagged `env`.
  std::vector<std::size_t> indices_of(const std::string& env) const;
  /// Copy restricted to one environment.
  Dataset subset(const std::string& env) const;
  bool operator==(const Dataset& other) const = default;
};

enum class MotifKind { house, cycle, crane };
enum class BaseKind { tree, ladder, wheel };

std::string to_string(MotifKind kind);
std::string to_string(BaseKind kind);
BaseKind parse_base_kind(const std::string& name);

struct MotifSpec {
  /// Probability that a graph's base is the one paired with its motif.
  double bias = 1.0 / 3.0;
  /// Probability that the base-node class signal equals the label.
  double feature_bias = 1.0 / 3.0;
  std::size_t base_min = 8;
  std::size_t base_max = 12;

  void validate() const;
};

inline constexpr std::size_t kMotifClasses = 3;
inline constexpr std::size_t kMotifFeatureDim = 4;

/// Base kind correlated with motif label `label`.
BaseKind paired_base(std::size_t label);

/// Node and edge lists of the planted shapes.
std::pair<std::size_t, std::vector<Edge>> motif_shape(MotifKind kind);
std::pair<std::size_t, std::vector<Edge>> base_shape(BaseKind kind, std::size_t size, std::uint64_t seed);

/// n graphs, label uniform over {house, cycle, crane}. Each graph draws from
/// its own counter-based stream, so the output is independent of threading.
Dataset generate_spurious_motif(std::size_t n, const MotifSpec& spec, std::uint64_t seed,
                                const std::string& env = "pool");

/// Empirical P(Y) within `env`. Throws DomainError when the env is empty.
std::vector<double> empirical_label_dist(const Dataset& dataset, const std::string& env);

struct EnvironmentSplit {
  Dataset train;
  Dataset test;
};

/// One environment per bias level (feature bias equal to the level), each
/// with n_per_env graphs, plus an unbiased test set of n_test graphs.
EnvironmentSplit split_bias_levels(const std::vector<double>& levels, std::size_t n_per_env,
                                   std::size_t n_test, std::uint64_t seed,
                                   std::size_t base_min = 8, std::size_t base_max = 12);

/// Holds out one base kind as the test split; every other base kind becomes
/// a training environment.
EnvironmentSplit split_base_kind(const Dataset& pool, BaseKind holdout);

/// Test split: graphs with more than `threshold` nodes (median when unset).
/// The remaining graphs are cut at their own median into two environments.
EnvironmentSplit split_size_threshold(const Dataset& pool, std::optional<std::size_t> threshold = {});

/// One JSON record per line after a header line.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);
std::string serialize_dataset(const Dataset& dataset);
Dataset parse_dataset(const std::string& text);

}  // namespace snigl::data
