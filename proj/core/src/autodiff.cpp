#include "snigl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "snigl/error.hpp"

namespace snigl::ad {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(std::string("autodiff: ") + what);
}

std::vector<std::size_t> copy(std::span<const std::size_t> s) { return {s.begin(), s.end()}; }

}  // namespace

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "scalar() on a non-1x1 value");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var{this, nodes_.size() - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool rg = false;
  for (const Var& v : inputs) {
    require(v.tape == this, "mixing variables from different tapes");
    rg = rg || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, rg ? std::move(backward) : Backward{}, rg});
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = g;
  else n.grad += g;
}

void Tape::backward(Var root) {
  require(root.tape == this, "backward root from another tape");
  require(nodes_[root.id].value.size() == 1, "backward root must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Matrix::Ones(1, 1);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul shape mismatch");
  return a.tape->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(Var a) {
  return a.tape->record(a.value().transpose(), {a},
                        [a](Tape& t, std::size_t s) { t.accumulate(a, t.upstream(s).transpose()); });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  return a.tape->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, std::size_t s) {
    t.accumulate(a, t.upstream(s));
    t.accumulate(b, t.upstream(s));
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  return a.tape->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, std::size_t s) {
    t.accumulate(a, t.upstream(s));
    t.accumulate(b, -t.upstream(s));
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape mismatch");
  return a.tape->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var add_row(Var a, Var r) {
  require(r.rows() == 1 && r.cols() == a.cols(), "add_row shape mismatch");
  Matrix out = a.value();
  out.rowwise() += r.value().row(0);
  return a.tape->record(std::move(out), {a, r}, [a, r](Tape& t, std::size_t s) {
    t.accumulate(a, t.upstream(s));
    if (t.requires_grad(r)) t.accumulate(r, t.upstream(s).colwise().sum());
  });
}

Var add_col(Var a, Var c) {
  require(c.cols() == 1 && c.rows() == a.rows(), "add_col shape mismatch");
  Matrix out = a.value();
  out.colwise() += c.value().col(0);
  return a.tape->record(std::move(out), {a, c}, [a, c](Tape& t, std::size_t s) {
    t.accumulate(a, t.upstream(s));
    if (t.requires_grad(c)) t.accumulate(c, t.upstream(s).rowwise().sum());
  });
}

Var scale_by(Var a, Var sv) {
  require(sv.rows() == 1 && sv.cols() == 1, "scale_by needs a 1x1 factor");
  const double k = sv.value()(0, 0);
  return a.tape->record(a.value() * k, {a, sv}, [a, sv](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    if (t.requires_grad(a)) t.accumulate(a, g * sv.value()(0, 0));
    if (t.requires_grad(sv)) t.accumulate(sv, Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
  });
}

Var scale(Var a, double k) {
  return a.tape->record(a.value() * k, {a}, [a, k](Tape& t, std::size_t s) { t.accumulate(a, t.upstream(s) * k); });
}

Var add_scalar(Var a, double k) {
  return a.tape->record(a.value().array() + k, {a},
                        [a](Tape& t, std::size_t s) { t.accumulate(a, t.upstream(s)); });
}

Var reciprocal(Var a) {
  Matrix out = a.value().cwiseInverse();
  return a.tape->record(out, {a}, [a](Tape& t, std::size_t s) {
    const Matrix& v = t.value(Var{&t, s});
    t.accumulate(a, -t.upstream(s).cwiseProduct(v.cwiseProduct(v)));
  });
}

Var clamp_min(Var a, double floor) {
  return a.tape->record(a.value().cwiseMax(floor), {a}, [a, floor](Tape& t, std::size_t s) {
    t.accumulate(a, (a.value().array() > floor).cast<double>().matrix().cwiseProduct(t.upstream(s)));
  });
}

Var tanh(Var a) {
  return a.tape->record(a.value().array().tanh().matrix(), {a}, [a](Tape& t, std::size_t s) {
    const Matrix& y = t.value(Var{&t, s});
    t.accumulate(a, t.upstream(s).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var sigmoid(Var a) {
  Matrix y = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return a.tape->record(std::move(y), {a}, [a](Tape& t, std::size_t s) {
    const Matrix& y = t.value(Var{&t, s});
    t.accumulate(a, t.upstream(s).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Var log(Var a) {
  return a.tape->record(a.value().array().log().matrix(), {a}, [a](Tape& t, std::size_t s) {
    t.accumulate(a, t.upstream(s).cwiseQuotient(a.value()));
  });
}

Var exp(Var a) {
  return a.tape->record(a.value().array().exp().matrix(), {a}, [a](Tape& t, std::size_t s) {
    t.accumulate(a, t.upstream(s).cwiseProduct(t.value(Var{&t, s})));
  });
}

Var sum(Var a) {
  return a.tape->record(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Tape& t, std::size_t s) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), t.upstream(s)(0, 0)));
  });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean of an empty matrix");
  const double n = static_cast<double>(a.value().size());
  return a.tape->record(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [a, n](Tape& t, std::size_t s) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), t.upstream(s)(0, 0) / n));
  });
}

Var row_sum(Var a) {
  return a.tape->record(a.value().rowwise().sum(), {a}, [a](Tape& t, std::size_t s) {
    t.accumulate(a, t.upstream(s).replicate(1, a.cols()));
  });
}

Var col_sum(Var a) {
  return a.tape->record(a.value().colwise().sum(), {a}, [a](Tape& t, std::size_t s) {
    t.accumulate(a, t.upstream(s).replicate(a.rows(), 1));
  });
}

Var log_softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t s) {
    const Matrix& y = t.value(Var{&t, s});
    const Matrix& g = t.upstream(s);
    Matrix p = y.array().exp().matrix();
    Matrix da = g - p.cwiseProduct(g.rowwise().sum().replicate(1, g.cols()));
    t.accumulate(a, da);
  });
}

Var softmax_rows(Var a) { return exp(log_softmax_rows(a)); }

Var pick(Var a, std::span<const std::size_t> idx) {
  require(static_cast<Index>(idx.size()) == a.rows(), "pick needs one index per row");
  Matrix out(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    require(static_cast<Index>(idx[i]) < a.cols(), "pick index out of range");
    out(i, 0) = a.value()(i, static_cast<Index>(idx[i]));
  }
  return a.tape->record(std::move(out), {a}, [a, ix = copy(idx)](Tape& t, std::size_t s) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    const Matrix& up = t.upstream(s);
    for (std::size_t i = 0; i < ix.size(); ++i) g(static_cast<Index>(i), static_cast<Index>(ix[i])) = up(i, 0);
    t.accumulate(a, g);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(static_cast<Index>(idx[i]) < a.rows(), "gather_rows index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(static_cast<Index>(idx[i]));
  }
  return a.tape->record(std::move(out), {a}, [a, ix = copy(idx)](Tape& t, std::size_t s) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    const Matrix& up = t.upstream(s);
    for (std::size_t i = 0; i < ix.size(); ++i) g.row(static_cast<Index>(ix[i])) += up.row(static_cast<Index>(i));
    t.accumulate(a, g);
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Index rows = 0;
  const Index cols = parts[0].cols();
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), parts, [keep](Tape& t, std::size_t s) {
    Index r0 = 0;
    for (const Var& p : keep) {
      if (t.requires_grad(p)) t.accumulate(p, t.upstream(s).middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

Var select(Var a, Index i, Index j) {
  require(i >= 0 && i < a.rows() && j >= 0 && j < a.cols(), "select out of range");
  return a.tape->record(Matrix::Constant(1, 1, a.value()(i, j)), {a}, [a, i, j](Tape& t, std::size_t s) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g(i, j) = t.upstream(s)(0, 0);
    t.accumulate(a, g);
  });
}

Var row_normalize(Var a, double eps) {
  const Matrix& x = a.value();
  Eigen::VectorXd inv = (x.rowwise().squaredNorm().array() + eps).rsqrt();
  Matrix out = inv.asDiagonal() * x;
  return a.tape->record(std::move(out), {a}, [a, inv](Tape& t, std::size_t s) {
    const Matrix& y = t.value(Var{&t, s});
    const Matrix& g = t.upstream(s);
    // d(x/|x|) = (g - y (y.g)) / |x|
    Eigen::VectorXd dots = y.cwiseProduct(g).rowwise().sum();
    Matrix da = inv.asDiagonal() * (g - dots.asDiagonal() * y);
    t.accumulate(a, da);
  });
}

Var pairwise_sqdist(Var a) {
  const Matrix& x = a.value();
  const Index n = x.rows();
  Matrix d(n, n);
  for (Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (x.row(i) - x.row(j)).squaredNorm();
  }
  return a.tape->record(std::move(d), {a}, [a](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    const Matrix& x = a.value();
    // dD_ij/dx_i = 2 (x_i - x_j); symmetric contributions from g_ij and g_ji.
    Matrix gs = g + g.transpose();
    Eigen::VectorXd rs = gs.rowwise().sum();
    Matrix da = 2.0 * (rs.asDiagonal() * x - gs * x);
    t.accumulate(a, da);
  });
}

Var aggregate(Var h, Var w, std::span<const std::size_t> src, std::span<const std::size_t> dst) {
  require(src.size() == dst.size(), "aggregate: src/dst length mismatch");
  require(w.rows() == static_cast<Index>(src.size()) && w.cols() == 1, "aggregate: weight shape");
  const Matrix& hv = h.value();
  const Matrix& wv = w.value();
  Matrix out = Matrix::Zero(hv.rows(), hv.cols());
  for (std::size_t e = 0; e < src.size(); ++e) {
    const Index u = static_cast<Index>(src[e]), v = static_cast<Index>(dst[e]);
    require(u < hv.rows() && v < hv.rows(), "aggregate: node index out of range");
    out.row(v) += wv(static_cast<Index>(e), 0) * hv.row(u);
    out.row(u) += wv(static_cast<Index>(e), 0) * hv.row(v);
  }
  return h.tape->record(std::move(out), {h, w}, [h, w, sv = copy(src), dv = copy(dst)](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    const Matrix& hv = h.value();
    const Matrix& wv = w.value();
    if (t.requires_grad(h)) {
      Matrix gh = Matrix::Zero(hv.rows(), hv.cols());
      for (std::size_t e = 0; e < sv.size(); ++e) {
        const Index u = static_cast<Index>(sv[e]), v = static_cast<Index>(dv[e]);
        gh.row(u) += wv(static_cast<Index>(e), 0) * g.row(v);
        gh.row(v) += wv(static_cast<Index>(e), 0) * g.row(u);
      }
      t.accumulate(h, gh);
    }
    if (t.requires_grad(w)) {
      Matrix gw(static_cast<Index>(sv.size()), 1);
      for (std::size_t e = 0; e < sv.size(); ++e) {
        const Index u = static_cast<Index>(sv[e]), v = static_cast<Index>(dv[e]);
        gw(static_cast<Index>(e), 0) = g.row(v).dot(hv.row(u)) + g.row(u).dot(hv.row(v));
      }
      t.accumulate(w, gw);
    }
  });
}

Var edge_dot(Var z, std::span<const std::size_t> src, std::span<const std::size_t> dst) {
  require(src.size() == dst.size(), "edge_dot: src/dst length mismatch");
  const Matrix& zv = z.value();
  Matrix out(static_cast<Index>(src.size()), 1);
  for (std::size_t e = 0; e < src.size(); ++e) {
    require(static_cast<Index>(src[e]) < zv.rows() && static_cast<Index>(dst[e]) < zv.rows(),
            "edge_dot: node index out of range");
    out(static_cast<Index>(e), 0) = zv.row(static_cast<Index>(src[e])).dot(zv.row(static_cast<Index>(dst[e])));
  }
  return z.tape->record(std::move(out), {z}, [z, sv = copy(src), dv = copy(dst)](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    const Matrix& zv = z.value();
    Matrix gz = Matrix::Zero(zv.rows(), zv.cols());
    for (std::size_t e = 0; e < sv.size(); ++e) {
      const Index u = static_cast<Index>(sv[e]), v = static_cast<Index>(dv[e]);
      const double ge = g(static_cast<Index>(e), 0);
      gz.row(u) += ge * zv.row(v);
      gz.row(v) += ge * zv.row(u);
    }
    t.accumulate(z, gz);
  });
}

Var incident_any(Var w, std::span<const std::size_t> src, std::span<const std::size_t> dst, std::size_t num_nodes) {
  require(w.rows() == static_cast<Index>(src.size()) && w.cols() == 1, "incident_any: weight shape");
  std::vector<std::vector<std::size_t>> inc(num_nodes);
  for (std::size_t e = 0; e < src.size(); ++e) {
    require(src[e] < num_nodes && dst[e] < num_nodes, "incident_any: node index out of range");
    inc[src[e]].push_back(e);
    inc[dst[e]].push_back(e);
  }
  const Matrix& wv = w.value();
  Matrix out(static_cast<Index>(num_nodes), 1);
  for (std::size_t v = 0; v < num_nodes; ++v) {
    double keep = 1.0;
    for (std::size_t e : inc[v]) keep *= 1.0 - wv(static_cast<Index>(e), 0);
    out(static_cast<Index>(v), 0) = 1.0 - keep;
  }
  return w.tape->record(std::move(out), {w}, [w, inc = std::move(inc)](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    const Matrix& wv = w.value();
    Matrix gw = Matrix::Zero(wv.rows(), 1);
    for (std::size_t v = 0; v < inc.size(); ++v) {
      const auto& es = inc[v];
      for (std::size_t a = 0; a < es.size(); ++a) {
        double others = 1.0;
        for (std::size_t b = 0; b < es.size(); ++b)
          if (b != a) others *= 1.0 - wv(static_cast<Index>(es[b]), 0);
        gw(static_cast<Index>(es[a]), 0) += g(static_cast<Index>(v), 0) * others;
      }
    }
    t.accumulate(w, gw);
  });
}

Var segment_weighted_mean(Var h, Var m, std::span<const std::size_t> offsets, double eps) {
  require(offsets.size() >= 2 && offsets.back() == static_cast<std::size_t>(h.rows()), "segment offsets");
  require(m.rows() == h.rows() && m.cols() == 1, "segment weights shape");
  const Index g = static_cast<Index>(offsets.size() - 1);
  const Matrix& hv = h.value();
  const Matrix& mv = m.value();
  Matrix out(g, hv.cols());
  Eigen::VectorXd denom(g);
  for (Index k = 0; k < g; ++k) {
    const Index lo = static_cast<Index>(offsets[k]), n = static_cast<Index>(offsets[k + 1]) - lo;
    denom(k) = mv.middleRows(lo, n).sum() + eps;
    out.row(k) = (mv.middleRows(lo, n).transpose() * hv.middleRows(lo, n)) / denom(k);
  }
  return h.tape->record(out, {h, m}, [h, m, off = copy(offsets), denom, out](Tape& t, std::size_t s) {
    const Matrix& gu = t.upstream(s);
    const Matrix& hv = h.value();
    const Matrix& mv = m.value();
    Matrix gh = Matrix::Zero(hv.rows(), hv.cols());
    Matrix gm = Matrix::Zero(mv.rows(), 1);
    for (std::size_t k = 0; k + 1 < off.size(); ++k) {
      const Index lo = static_cast<Index>(off[k]), n = static_cast<Index>(off[k + 1]) - lo;
      const Index kk = static_cast<Index>(k);
      for (Index v = lo; v < lo + n; ++v) {
        gh.row(v) = gu.row(kk) * (mv(v, 0) / denom(kk));
        gm(v, 0) = gu.row(kk).dot(hv.row(v) - out.row(kk)) / denom(kk);
      }
    }
    if (t.requires_grad(h)) t.accumulate(h, gh);
    if (t.requires_grad(m)) t.accumulate(m, gm);
  });
}

Var segment_weighted_max(Var h, Var m, std::span<const std::size_t> offsets) {
  require(offsets.size() >= 2 && offsets.back() == static_cast<std::size_t>(h.rows()), "segment offsets");
  require(m.rows() == h.rows() && m.cols() == 1, "segment weights shape");
  const Index g = static_cast<Index>(offsets.size() - 1);
  const Matrix& hv = h.value();
  const Matrix& mv = m.value();
  Matrix out(g, hv.cols());
  Eigen::MatrixXi arg(g, hv.cols());
  for (Index k = 0; k < g; ++k) {
    const Index lo = static_cast<Index>(offsets[k]), hi = static_cast<Index>(offsets[k + 1]);
    require(hi > lo, "segment_weighted_max: empty segment");
    for (Index c = 0; c < hv.cols(); ++c) {
      Index best = lo;
      for (Index v = lo + 1; v < hi; ++v)
        if (mv(v, 0) * hv(v, c) > mv(best, 0) * hv(best, c)) best = v;
      arg(k, c) = static_cast<int>(best);
      out(k, c) = mv(best, 0) * hv(best, c);
    }
  }
  return h.tape->record(std::move(out), {h, m}, [h, m, arg](Tape& t, std::size_t s) {
    const Matrix& gu = t.upstream(s);
    const Matrix& hv = h.value();
    const Matrix& mv = m.value();
    Matrix gh = Matrix::Zero(hv.rows(), hv.cols());
    Matrix gm = Matrix::Zero(mv.rows(), 1);
    for (Index k = 0; k < arg.rows(); ++k)
      for (Index c = 0; c < arg.cols(); ++c) {
        const Index v = arg(k, c);
        gh(v, c) += gu(k, c) * mv(v, 0);
        gm(v, 0) += gu(k, c) * hv(v, c);
      }
    if (t.requires_grad(h)) t.accumulate(h, gh);
    if (t.requires_grad(m)) t.accumulate(m, gm);
  });
}

Var straight_through(const Matrix& hard, Var relaxed) {
  require(hard.rows() == relaxed.rows() && hard.cols() == relaxed.cols(), "straight_through shape");
  return relaxed.tape->record(hard, {relaxed},
                              [relaxed](Tape& t, std::size_t s) { t.accumulate(relaxed, t.upstream(s)); });
}

}  // namespace snigl::ad
