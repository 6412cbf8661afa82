#pragma once

// Reverse-mode automatic differentiation over dense rank-2 tensors.
//
// A Graph is rebuilt for every training step. Nodes are appended in
// evaluation order, so creation order is a topological order and backward()
// walks it in reverse. Ops are free functions on Var handles.

#include "rejgen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace rejgen::nd {

template <typename Scalar>
class Graph;

template <typename Scalar>
class Var {
 public:
  Var() = default;

  Graph<Scalar>* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor<Scalar>& value() const { return graph_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  friend class Graph<Scalar>;
  Var(Graph<Scalar>* g, int id) : graph_(g), id_(id) {}

  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Graph {
 public:
  using Mat = Tensor<Scalar>;
  /// Called with the graph and the id of the node being differentiated.
  using Backward = std::function<void(Graph&, int)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var<Scalar> constant(Mat value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient is collected by backward().
  Var<Scalar> leaf(Mat value) { return push(std::move(value), true, {}); }

  /// Records an op result. `backward` is dropped when no input needs a gradient.
  Var<Scalar> record(Mat value, std::span<const Var<Scalar>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& v : inputs) {
      check_owner(v);
      needs = needs || nodes_[v.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() root w.r.t. `v`; zeros when unreachable.
  Mat grad(const Var<Scalar>& v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Accumulation target used by backward closures.
  Mat& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  const Mat& upstream(int id) const { return nodes_[id].grad; }

  void backward(const Var<Scalar>& root) {
    check_owner(root);
    const Mat& rv = nodes_[root.id()].value;
    if (rv.rows() != 1 || rv.cols() != 1)
      throw ShapeError("backward: root must be scalar, got " + shape_string(rv));
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad_ref(root.id()).setOnes();
    for (int id = root.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<Scalar> push(Mat value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat{}, requires_grad, std::move(backward)});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  void check_owner(const Var<Scalar>& v) const {
    if (v.graph() != this) throw std::invalid_argument("Var belongs to a different graph");
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(op, a.rows(), a.cols(), b.rows(), b.cols());
}

template <typename Scalar>
void require_row_vector(const char* op, const Var<Scalar>& x, const Var<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != x.cols())
    throw ShapeError(op, x.rows(), x.cols(), row.rows(), row.cols());
}

}  // namespace detail

// ---------------------------------------------------------------- arithmetic

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul", a.rows(), a.cols(), b.rows(), b.cols());
  const int ia = a.id(), ib = b.id();
  return a.graph()->record(a.value() * b.value(), {a, b}, [ia, ib](Graph<Scalar>& g, int self) {
    const auto& dy = g.upstream(self);
    if (g.requires_grad(ia)) g.grad_ref(ia).noalias() += dy * g.value(ib).transpose();
    if (g.requires_grad(ib)) g.grad_ref(ib).noalias() += g.value(ia).transpose() * dy;
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  const int ia = a.id(), ib = b.id();
  return a.graph()->record(a.value() + b.value(), {a, b}, [ia, ib](Graph<Scalar>& g, int self) {
    const auto& dy = g.upstream(self);
    if (g.requires_grad(ia)) g.grad_ref(ia) += dy;
    if (g.requires_grad(ib)) g.grad_ref(ib) += dy;
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  const int ia = a.id(), ib = b.id();
  return a.graph()->record(a.value() - b.value(), {a, b}, [ia, ib](Graph<Scalar>& g, int self) {
    const auto& dy = g.upstream(self);
    if (g.requires_grad(ia)) g.grad_ref(ia) += dy;
    if (g.requires_grad(ib)) g.grad_ref(ib) -= dy;
  });
}

/// x + row, with `row` (1 x n) repeated over every row of x.
template <typename Scalar>
Var<Scalar> add_rowwise(const Var<Scalar>& x, const Var<Scalar>& row) {
  detail::require_row_vector("add_rowwise", x, row);
  const int ix = x.id(), ir = row.id();
  Tensor<Scalar> out = x.value().rowwise() + row.value().row(0);
  return x.graph()->record(std::move(out), {x, row}, [ix, ir](Graph<Scalar>& g, int self) {
    const auto& dy = g.upstream(self);
    if (g.requires_grad(ix)) g.grad_ref(ix) += dy;
    if (g.requires_grad(ir)) g.grad_ref(ir) += dy.colwise().sum();
  });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape("mul", a, b);
  const int ia = a.id(), ib = b.id();
  Tensor<Scalar> out = a.value().cwiseProduct(b.value());
  return a.graph()->record(std::move(out), {a, b}, [ia, ib](Graph<Scalar>& g, int self) {
    const auto& dy = g.upstream(self);
    if (g.requires_grad(ia)) g.grad_ref(ia) += dy.cwiseProduct(g.value(ib));
    if (g.requires_grad(ib)) g.grad_ref(ib) += dy.cwiseProduct(g.value(ia));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  const int ia = a.id();
  return a.graph()->record(a.value() * s, {a}, [ia, s](Graph<Scalar>& g, int self) {
    g.grad_ref(ia) += g.upstream(self) * s;
  });
}

/// s - a, elementwise.
template <typename Scalar>
Var<Scalar> rsub(Scalar s, const Var<Scalar>& a) {
  const int ia = a.id();
  Tensor<Scalar> out = (-a.value().array() + s).matrix();
  return a.graph()->record(std::move(out), {a}, [ia](Graph<Scalar>& g, int self) {
    g.grad_ref(ia) -= g.upstream(self);
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }

// ---------------------------------------------------------------- nonlinear

/// Natural log with the input clamped below at kEps; no gradient where clamped.
template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
  const int ia = a.id();
  const Scalar eps = static_cast<Scalar>(kEps);
  Tensor<Scalar> out = a.value().unaryExpr([eps](Scalar v) { return std::log(std::max(v, eps)); });
  return a.graph()->record(std::move(out), {a}, [ia, eps](Graph<Scalar>& g, int self) {
    const auto& x = g.value(ia);
    const auto& dy = g.upstream(self);
    auto& dx = g.grad_ref(ia);
    for (Index i = 0; i < x.size(); ++i) {
      const Scalar v = x.data()[i];
      if (v > eps) dx.data()[i] += dy.data()[i] / v;
    }
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  const int ia = a.id();
  Tensor<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.graph()->record(std::move(out), {a}, [ia](Graph<Scalar>& g, int self) {
    const auto& x = g.value(ia);
    g.grad_ref(ia) += (x.array() > Scalar(0)).select(g.upstream(self), Scalar(0)).matrix();
  });
}

/// Row-wise softmax, stabilised by subtracting each row's maximum.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  const auto& x = a.value();
  if (!x.allFinite()) throw std::domain_error("softmax_rows: non-finite input");
  Tensor<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  const int ia = a.id();
  return a.graph()->record(std::move(y), {a}, [ia](Graph<Scalar>& g, int self) {
    const auto& yv = g.value(self);
    const auto& dy = g.upstream(self);
    Tensor<Scalar> dot = dy.cwiseProduct(yv).rowwise().sum();
    g.grad_ref(ia) += yv.cwiseProduct((dy.colwise() - dot.col(0)));
  });
}

/// Row-wise layer normalisation with learned gain and bias (both 1 x n).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       Scalar eps = Scalar(1e-5)) {
  detail::require_row_vector("layer_norm", x, gain);
  detail::require_row_vector("layer_norm", x, bias);
  const auto& xv = x.value();
  const Index n = xv.cols();
  Tensor<Scalar> xhat(xv.rows(), n);
  Tensor<Scalar> inv_std(xv.rows(), 1);
  for (Index r = 0; r < xv.rows(); ++r) {
    const Scalar mu = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mu).square().mean();
    inv_std(r, 0) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu).matrix() * inv_std(r, 0);
  }
  Tensor<Scalar> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.graph()->record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<Scalar>& g,
                                                                             int self) {
        const auto& dy = g.upstream(self);
        if (g.requires_grad(ig)) g.grad_ref(ig) += dy.cwiseProduct(xhat).colwise().sum();
        if (g.requires_grad(ib)) g.grad_ref(ib) += dy.colwise().sum();
        if (!g.requires_grad(ix)) return;
        Tensor<Scalar> dxhat = (dy.array().rowwise() * g.value(ig).row(0).array()).matrix();
        auto& dx = g.grad_ref(ix);
        for (Index r = 0; r < dy.rows(); ++r) {
          const Scalar mean_d = dxhat.row(r).mean();
          const Scalar mean_dx = dxhat.row(r).dot(xhat.row(r)) / Scalar(n);
          dx.row(r) += ((dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx) *
                        inv_std(r, 0))
                           .matrix();
        }
      });
}

// ---------------------------------------------------------------- reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  const int ia = a.id();
  Tensor<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph()->record(std::move(out), {a}, [ia](Graph<Scalar>& g, int self) {
    g.grad_ref(ia).array() += g.upstream(self)(0, 0);
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  const auto n = static_cast<Scalar>(a.value().size());
  if (a.value().size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), Scalar(1) / n);
}

/// Row-wise maximum as an n x 1 column; gradient flows to the first argmax.
template <typename Scalar>
Var<Scalar> max_rows(const Var<Scalar>& a) {
  const auto& x = a.value();
  if (x.cols() == 0) throw ShapeError("max_rows: zero columns");
  Tensor<Scalar> out(x.rows(), 1);
  std::vector<Index> arg(x.rows());
  for (Index r = 0; r < x.rows(); ++r) out(r, 0) = x.row(r).maxCoeff(&arg[r]);
  const int ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia, arg = std::move(arg)](Graph<Scalar>& g,
                                                                            int self) {
    const auto& dy = g.upstream(self);
    auto& dx = g.grad_ref(ia);
    for (Index r = 0; r < dy.rows(); ++r) dx(r, arg[r]) += dy(r, 0);
  });
}

// ---------------------------------------------------------------- structural

/// Stacks the inputs vertically; all must share a column count.
template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows", rows, cols, p.rows(), p.cols());
    rows += p.rows();
  }
  Tensor<Scalar> out(rows, cols);
  std::vector<std::pair<int, Index>> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    offsets.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts[0].graph()->record(std::move(out), parts,
                                  [offsets = std::move(offsets)](Graph<Scalar>& g, int self) {
                                    const auto& dy = g.upstream(self);
                                    for (const auto& [id, off] : offsets) {
                                      if (!g.requires_grad(id)) continue;
                                      auto& dx = g.grad_ref(id);
                                      dx += dy.middleRows(off, dx.rows());
                                    }
                                  });
}

/// Places the inputs side by side; all must share a row count.
template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols", rows, cols, p.rows(), p.cols());
    cols += p.cols();
  }
  Tensor<Scalar> out(rows, cols);
  std::vector<std::pair<int, Index>> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    offsets.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts[0].graph()->record(std::move(out), parts,
                                  [offsets = std::move(offsets)](Graph<Scalar>& g, int self) {
                                    const auto& dy = g.upstream(self);
                                    for (const auto& [id, off] : offsets) {
                                      if (!g.requires_grad(id)) continue;
                                      auto& dx = g.grad_ref(id);
                                      dx += dy.middleCols(off, dx.cols());
                                    }
                                  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows())
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_string(a.value()));
  const int ia = a.id();
  return a.graph()->record(a.value().middleRows(begin, count), {a},
                           [ia, begin, count](Graph<Scalar>& g, int self) {
                             g.grad_ref(ia).middleRows(begin, count) += g.upstream(self);
                           });
}

/// Gathers table rows: out.row(i) = table.row(ids[i]).
template <typename Scalar>
Var<Scalar> embed(const Var<Scalar>& table, std::span<const int> ids) {
  const auto& t = table.value();
  Tensor<Scalar> out(static_cast<Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows())
      throw std::out_of_range("embed: id " + std::to_string(ids[i]) + " outside table " +
                              shape_string(t));
    out.row(static_cast<Index>(i)) = t.row(ids[i]);
  }
  const int it = table.id();
  return table.graph()->record(
      std::move(out), {table},
      [it, ids = std::vector<int>(ids.begin(), ids.end())](Graph<Scalar>& g, int self) {
        const auto& dy = g.upstream(self);
        auto& dt = g.grad_ref(it);
        for (std::size_t i = 0; i < ids.size(); ++i) dt.row(ids[i]) += dy.row(static_cast<Index>(i));
      });
}

/// Per-row element pick: out(i, 0) = a(i, cols[i]).
template <typename Scalar>
Var<Scalar> pick(const Var<Scalar>& a, std::span<const int> cols) {
  const auto& x = a.value();
  if (static_cast<Index>(cols.size()) != x.rows())
    throw ShapeError("pick", x.rows(), x.cols(), static_cast<Index>(cols.size()), 1);
  Tensor<Scalar> out(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    if (cols[r] < 0 || cols[r] >= x.cols())
      throw std::out_of_range("pick: column " + std::to_string(cols[r]) + " outside " +
                              shape_string(x));
    out(r, 0) = x(r, cols[r]);
  }
  const int ia = a.id();
  return a.graph()->record(
      std::move(out), {a},
      [ia, cols = std::vector<int>(cols.begin(), cols.end())](Graph<Scalar>& g, int self) {
        const auto& dy = g.upstream(self);
        auto& dx = g.grad_ref(ia);
        for (Index r = 0; r < dy.rows(); ++r) dx(r, cols[r]) += dy(r, 0);
      });
}

/// Replaces entries where `mask` is non-zero by `fill`; those entries get no gradient.
template <typename Scalar>
Var<Scalar> mask_fill(const Var<Scalar>& a, const Tensor<Scalar>& mask, Scalar fill) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols())
    throw ShapeError("mask_fill", a.rows(), a.cols(), mask.rows(), mask.cols());
  Tensor<Scalar> out = (mask.array() != Scalar(0)).select(fill, a.value().array()).matrix();
  const int ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia, mask](Graph<Scalar>& g, int self) {
    g.grad_ref(ia) += (mask.array() != Scalar(0)).select(Scalar(0), g.upstream(self).array()).matrix();
  });
}

// ---------------------------------------------------------------- attention

/// One block of block-diagonal attention: queries [q_begin, q_begin+q_len)
/// attend to keys [k_begin, k_begin+k_len).
struct AttentionSegment {
  Index q_begin = 0;
  Index q_len = 0;
  Index k_begin = 0;
  Index k_len = 0;
};

/// Scaled dot-product attention evaluated independently per segment.
/// With `causal`, query i of a segment sees keys 0..i of that segment.
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                      std::span<const AttentionSegment> segments, bool causal) {
  if (q.cols() != k.cols()) throw ShapeError("attention q/k", q.rows(), q.cols(), k.rows(), k.cols());
  if (k.rows() != v.rows()) throw ShapeError("attention k/v", k.rows(), k.cols(), v.rows(), v.cols());
  const Scalar scale_factor = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  Tensor<Scalar> out = Tensor<Scalar>::Zero(Q.rows(), V.cols());
  std::vector<Tensor<Scalar>> probs;
  probs.reserve(segments.size());
  for (const auto& s : segments) {
    if (s.q_begin + s.q_len > Q.rows() || s.k_begin + s.k_len > K.rows() || s.k_len == 0)
      throw ShapeError("attention: segment outside inputs");
    if (causal && s.q_len > s.k_len) throw ShapeError("attention: causal segment with q_len > k_len");
    Tensor<Scalar> scores =
        (Q.middleRows(s.q_begin, s.q_len) * K.middleRows(s.k_begin, s.k_len).transpose()) *
        scale_factor;
    for (Index i = 0; i < s.q_len; ++i) {
      const Index visible = causal ? i + 1 : s.k_len;
      const Scalar m = scores.row(i).head(visible).maxCoeff();
      scores.row(i).head(visible) = (scores.row(i).head(visible).array() - m).exp().matrix();
      scores.row(i).tail(s.k_len - visible).setZero();
      scores.row(i) /= scores.row(i).sum();
    }
    out.middleRows(s.q_begin, s.q_len).noalias() = scores * V.middleRows(s.k_begin, s.k_len);
    probs.push_back(std::move(scores));
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.graph()->record(
      std::move(out), {q, k, v},
      [iq, ik, iv, scale_factor, probs = std::move(probs),
       segs = std::vector<AttentionSegment>(segments.begin(), segments.end())](Graph<Scalar>& g,
                                                                             int self) {
        const auto& dy = g.upstream(self);
        const auto& Q = g.value(iq);
        const auto& K = g.value(ik);
        const auto& V = g.value(iv);
        const bool gq = g.requires_grad(iq), gk = g.requires_grad(ik), gv = g.requires_grad(iv);
        for (std::size_t n = 0; n < segs.size(); ++n) {
          const auto& s = segs[n];
          const auto& P = probs[n];
          auto dO = dy.middleRows(s.q_begin, s.q_len);
          if (gv) g.grad_ref(iv).middleRows(s.k_begin, s.k_len).noalias() += P.transpose() * dO;
          if (!gq && !gk) continue;
          Tensor<Scalar> dP = dO * V.middleRows(s.k_begin, s.k_len).transpose();
          Tensor<Scalar> rowdot = dP.cwiseProduct(P).rowwise().sum();
          Tensor<Scalar> dS = P.cwiseProduct(dP.colwise() - rowdot.col(0)) * scale_factor;
          if (gq) g.grad_ref(iq).middleRows(s.q_begin, s.q_len).noalias() += dS * K.middleRows(s.k_begin, s.k_len);
          if (gk) g.grad_ref(ik).middleRows(s.k_begin, s.k_len).noalias() += dS.transpose() * Q.middleRows(s.q_begin, s.q_len);
        }
      });
}

}  // namespace rejgen::nd
