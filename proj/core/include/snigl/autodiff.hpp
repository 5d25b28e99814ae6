#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
// A Tape records every operation; backward() walks it once in reverse.

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace snigl::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Value of a 1x1 variable.
  double scalar() const;
};

class Tape {
 public:
  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf without gradient.
  Var constant(Matrix value);
  /// Leaf that accumulates a gradient.
  Var variable(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient of the last backward() root w.r.t. v (zeros if unreached).
  Matrix grad(Var v) const;

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

  using Backward = std::function<void(Tape&, std::size_t self)>;
  /// Records a derived value. `backward` runs only when some input requires grad.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  /// Accumulates `g` into the gradient of `v` (no-op for constants).
  void accumulate(Var v, const Matrix& g);
  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }
  const Matrix& upstream(std::size_t self) const { return nodes_[self].grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

// Dense algebra.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
/// a + r with r a 1 x cols row vector broadcast over rows.
Var add_row(Var a, Var r);
/// a + c with c a rows x 1 column vector broadcast over columns.
Var add_col(Var a, Var c);
/// a * s with s a 1x1 variable.
Var scale_by(Var a, Var s);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var reciprocal(Var a);
Var clamp_min(Var a, double floor);

// Elementwise maps.
Var tanh(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var exp(Var a);

// Reductions.
Var sum(Var a);
Var mean(Var a);
/// rows x 1.
Var row_sum(Var a);
/// 1 x cols.
Var col_sum(Var a);
Var log_softmax_rows(Var a);
Var softmax_rows(Var a);

// Indexing.
/// out[i] = a(i, idx[i]) as a column.
Var pick(Var a, std::span<const std::size_t> idx);
Var gather_rows(Var a, std::span<const std::size_t> idx);
Var concat_rows(std::span<const Var> parts);
/// 1x1 view of a(i, j).
Var select(Var a, Index i, Index j);

/// Rows scaled to unit norm: a_i / sqrt(|a_i|^2 + eps).
Var row_normalize(Var a, double eps = 1e-12);
/// D(i, j) = |a_i - a_j|^2.
Var pairwise_sqdist(Var a);

// Graph operations over an undirected edge list (src[e], dst[e]).
/// out_v = sum over incident edges e = {v, u} of w_e h_u. h: n x d, w: E x 1.
Var aggregate(Var h, Var w, std::span<const std::size_t> src, std::span<const std::size_t> dst);
/// out_e = <z_src(e), z_dst(e)>, E x 1.
Var edge_dot(Var z, std::span<const std::size_t> src, std::span<const std::size_t> dst);
/// Node soft membership 1 - prod over incident edges of (1 - w_e), n x 1.
Var incident_any(Var w, std::span<const std::size_t> src, std::span<const std::size_t> dst, std::size_t num_nodes);
/// Per-segment weighted mean: out_g = sum_v m_v h_v / (sum_v m_v + eps) over
/// rows offsets[g] .. offsets[g+1]. h: n x d, m: n x 1.
Var segment_weighted_mean(Var h, Var m, std::span<const std::size_t> offsets, double eps = 1e-8);
/// Per-segment max of m_v h_v.
Var segment_weighted_max(Var h, Var m, std::span<const std::size_t> offsets);

/// Forward value `hard`, backward passes the gradient to `relaxed` unchanged.
Var straight_through(const Matrix& hard, Var relaxed);

}  // namespace snigl::ad
