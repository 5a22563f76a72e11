#pragma once

// Minimal tape-free reverse-mode autodiff over dense double arrays.
//
// Graphs are built eagerly: every op allocates a Node that owns its value and
// a closure that pushes the node's gradient into its parents. backward() runs
// the closures in reverse topological order. Parents are held by shared_ptr,
// children are never referenced, so graphs free themselves when the last Var
// goes out of scope.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hivae/tensor.hpp"

namespace hivae::ag {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  Buffer& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph construction in scope (inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var constant(Array a) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(a.shape);
    n->value = std::move(a.data);
    return Var(std::move(n));
  }
  static Var parameter(Array a) {
    Var v = constant(std::move(a));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i < 0 ? static_cast<int>(node_->shape.size()) + i : i)); }
  std::size_t size() const { return node_->value.size(); }
  const Buffer& value() const { return node_->value; }
  Buffer& mutable_value() { return node_->value; }
  const Buffer& grad() const { return node_->grad; }
  Buffer& mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const { return node_->value.at(0); }
  Array array() const { return Array(node_->shape, node_->value); }
  Node* get() const { return node_.get(); }
  const NodePtr& node() const { return node_; }

  void zero_grad() { node_->grad.clear(); }

 private:
  NodePtr node_;
};

namespace detail {

inline bool needs_graph(std::initializer_list<const Var*> inputs) {
  if (!grad_mode()) return false;
  for (const Var* v : inputs)
    if (v->defined() && v->requires_grad()) return true;
  return false;
}

inline Var make(Shape shape, Buffer value, std::vector<Var> parents,
                std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = false;
  if (grad_mode()) {
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) track = true;
  }
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(fn);
  }
  return Var(std::move(n));
}

inline void check_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StrideMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrideMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

inline int rows_of(const Shape& s) { return static_cast<int>(numel(s) / static_cast<std::size_t>(s.back())); }

}  // namespace detail

// Reverse pass from a scalar. Gradients accumulate into every reachable node
// that requires them; parameters keep theirs until zero_grad().
inline void backward(const Var& loss) {
  if (loss.size() != 1) throw ConfigError("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.get()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Intermediate gradients are no longer needed; parameters (leaves) keep theirs.
  for (Node* n : order)
    if (n->backward_fn) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::check_same(a, b, "add");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::make(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same(a, b, "sub");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return detail::make(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same(a, b, "mul");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make(a.shape(), std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return detail::make(a.shape(), std::move(out), {a}, [s](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
  });
}

inline Var exp(const Var& a) {
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
  return detail::make(a.shape(), std::move(out), {a}, [](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
  });
}

// Clamp with zero gradient outside [lo, hi].
inline Var clamp(const Var& a, double lo, double hi) {
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a.value()[i], lo, hi);
  return detail::make(a.shape(), std::move(out), {a}, [lo, hi](Node& n) {
    Node& p = *n.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] >= lo && p.value[i] <= hi) g[i] += n.grad[i];
  });
}

// tanh-approximated GELU.
inline Var gelu(const Var& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.value()[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
  }
  return detail::make(a.shape(), std::move(out), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = p.value[i];
      double u = k * (x + 0.044715 * x * x * x);
      double th = std::tanh(u);
      double du = k * (1.0 + 3.0 * 0.044715 * x * x);
      g[i] += n.grad[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
    }
  });
}

inline Var silu(const Var& a) {
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.value()[i];
    out[i] = x / (1.0 + std::exp(-x));
  }
  return detail::make(a.shape(), std::move(out), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = p.value[i];
      double s = 1.0 / (1.0 + std::exp(-x));
      g[i] += n.grad[i] * (s + x * s * (1.0 - s));
    }
  });
}

// ---------------------------------------------------------------------------
// Row-vector broadcasting over the last axis

inline Var add_rowvec(const Var& x, const Var& v) {
  const std::size_t m = static_cast<std::size_t>(x.shape().back());
  if (v.size() != m) throw ConfigError("add_rowvec: width mismatch");
  Buffer out(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += v.value()[i % m];
  return detail::make(x.shape(), std::move(out), {x, v}, [m](Node& n) {
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % m] += n.grad[i];
    }
  });
}

inline Var mul_rowvec(const Var& x, const Var& v) {
  const std::size_t m = static_cast<std::size_t>(x.shape().back());
  if (v.size() != m) throw ConfigError("mul_rowvec: width mismatch");
  Buffer out(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= v.value()[i % m];
  return detail::make(x.shape(), std::move(out), {x, v}, [m](Node& n) {
    Node& px = *n.parents[0];
    Node& pv = *n.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pv.value[i % m];
    }
    if (pv.requires_grad) {
      auto& g = pv.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % m] += n.grad[i] * px.value[i];
    }
  });
}

// x * (1 + scale) + shift, the adaptive-norm modulation.
inline Var modulate(const Var& x, const Var& shift, const Var& scale_v) {
  const std::size_t m = static_cast<std::size_t>(x.shape().back());
  if (shift.size() != m || scale_v.size() != m) throw ConfigError("modulate: width mismatch");
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.value()[i] * (1.0 + scale_v.value()[i % m]) + shift.value()[i % m];
  return detail::make(x.shape(), std::move(out), {x, shift, scale_v}, [m](Node& n) {
    Node& px = *n.parents[0];
    Node& psh = *n.parents[1];
    Node& psc = *n.parents[2];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * (1.0 + psc.value[i % m]);
    }
    if (psh.requires_grad) {
      auto& g = psh.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % m] += n.grad[i];
    }
    if (psc.requires_grad) {
      auto& g = psc.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % m] += n.grad[i] * px.value[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Dense layers

// x [.., K] @ W [K, M] + b [M]
inline Var linear(const Var& x, const Var& w, const Var& b = Var()) {
  using namespace detail;
  const int k = w.dim(0);
  const int m = w.dim(1);
  if (x.shape().back() != k)
    throw ConfigError("linear: input width " + std::to_string(x.shape().back()) + " != " + std::to_string(k));
  const int rows = rows_of(x.shape());
  Shape os = x.shape();
  os.back() = m;
  Buffer out(static_cast<std::size_t>(rows) * static_cast<std::size_t>(m));
  MapMat y(out.data(), rows, m);
  y.noalias() = CMapMat(x.value().data(), rows, k) * CMapMat(w.value().data(), k, m);
  if (b.defined()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), m);
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make(std::move(os), std::move(out), std::move(parents), [rows, k, m](Node& n) {
    CMapMat gy(n.grad.data(), rows, m);
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    if (px.requires_grad) {
      MapMat gx(px.ensure_grad().data(), rows, k);
      gx.noalias() += gy * CMapMat(pw.value.data(), k, m).transpose();
    }
    if (pw.requires_grad) {
      MapMat gw(pw.ensure_grad().data(), k, m);
      gw.noalias() += CMapMat(px.value.data(), rows, k).transpose() * gy;
    }
    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd> gb(n.parents[2]->ensure_grad().data(), m);
      gb += gy.colwise().sum();
    }
  });
}

// Per-row layer normalization without affine parameters.
inline Var layer_norm(const Var& x, double eps = 1e-6) {
  const std::size_t m = static_cast<std::size_t>(x.shape().back());
  const std::size_t rows = x.size() / m;
  Buffer out(x.size());
  Buffer inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * m;
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += xr[j];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(m);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = (xr[j] - mean) * is;
  }
  return detail::make(x.shape(), std::move(out), {x}, [m, rows, inv_std = std::move(inv_std)](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = n.value.data() + r * m;
      const double* gy = n.grad.data() + r * m;
      double sg = 0.0, sgy = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        sg += gy[j];
        sgy += gy[j] * y[j];
      }
      sg /= static_cast<double>(m);
      sgy /= static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j) g[r * m + j] += inv_std[r] * (gy[j] - sg - y[j] * sgy);
    }
  });
}

// Multi-head scaled dot-product attention, batched over independent groups.
// q: [G*Lq, D], k: [G*Lk, D], v: [G*Lk, Dv]; D and Dv divisible by heads.
// Each output row is a softmax(q k^T / sqrt(D/heads)) weighted mix of v rows
// from the same group.
inline Var attention(const Var& q, const Var& k, const Var& v, int groups, int heads) {
  using namespace detail;
  if (groups <= 0 || heads <= 0) throw ConfigError("attention: groups/heads must be positive");
  const int d = q.shape().back();
  const int dv = v.shape().back();
  if (d == 0 || k.shape().back() != d) throw ConfigError("attention: q/k width mismatch or zero width");
  if (d % heads != 0 || dv % heads != 0) throw ConfigError("attention: width not divisible by heads");
  const int q_rows = rows_of(q.shape());
  const int k_rows = rows_of(k.shape());
  if (k_rows == 0 || rows_of(v.shape()) != k_rows) throw ConfigError("attention: empty or mismatched key/value set");
  if (q_rows % groups != 0 || k_rows % groups != 0) throw ConfigError("attention: rows not divisible by groups");
  const int lq = q_rows / groups;
  const int lk = k_rows / groups;
  const int dh = d / heads;
  const int dvh = dv / heads;
  const double inv_temp = 1.0 / std::sqrt(static_cast<double>(dh));

  Shape os = q.shape();
  os.back() = dv;
  Buffer out(static_cast<std::size_t>(q_rows) * static_cast<std::size_t>(dv));
  const bool track = needs_graph({&q, &k, &v});
  // Softmax weights per (group, head), kept for the backward pass.
  Buffer probs;
  if (track) probs.resize(static_cast<std::size_t>(groups) * heads * lq * lk);
  RowMat p(lq, lk);
  for (int g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      CStrideMap qh(q.value().data() + static_cast<std::size_t>(g) * lq * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
      CStrideMap kh(k.value().data() + static_cast<std::size_t>(g) * lk * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
      CStrideMap vh(v.value().data() + static_cast<std::size_t>(g) * lk * dv + h * dvh, lk, dvh, Eigen::OuterStride<>(dv));
      p.noalias() = (qh * kh.transpose()) * inv_temp;
      for (int i = 0; i < lq; ++i) {
        double mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
      }
      StrideMap oh(out.data() + static_cast<std::size_t>(g) * lq * dv + h * dvh, lq, dvh, Eigen::OuterStride<>(dv));
      oh.noalias() = p * vh;
      if (track)
        MapMat(probs.data() + (static_cast<std::size_t>(g) * heads + h) * lq * lk, lq, lk) = p;
    }
  }
  return make(std::move(os), std::move(out), {q, k, v},
              [=, probs = std::move(probs)](Node& n) {
                Node& pq = *n.parents[0];
                Node& pk = *n.parents[1];
                Node& pv = *n.parents[2];
                double* gq = pq.requires_grad ? pq.ensure_grad().data() : nullptr;
                double* gk = pk.requires_grad ? pk.ensure_grad().data() : nullptr;
                double* gv = pv.requires_grad ? pv.ensure_grad().data() : nullptr;
                RowMat dp(lq, lk);
                for (int g = 0; g < groups; ++g) {
                  for (int h = 0; h < heads; ++h) {
                    CMapMat pm(probs.data() + (static_cast<std::size_t>(g) * heads + h) * lq * lk, lq, lk);
                    CStrideMap go(n.grad.data() + static_cast<std::size_t>(g) * lq * dv + h * dvh, lq, dvh, Eigen::OuterStride<>(dv));
                    CStrideMap vh(pv.value.data() + static_cast<std::size_t>(g) * lk * dv + h * dvh, lk, dvh, Eigen::OuterStride<>(dv));
                    if (gv) {
                      StrideMap gvh(gv + static_cast<std::size_t>(g) * lk * dv + h * dvh, lk, dvh, Eigen::OuterStride<>(dv));
                      gvh.noalias() += pm.transpose() * go;
                    }
                    if (!gq && !gk) continue;
                    dp.noalias() = go * vh.transpose();
                    // softmax backward: ds = p * (dp - rowsum(dp * p))
                    for (int i = 0; i < lq; ++i) {
                      double s = pm.row(i).dot(dp.row(i));
                      dp.row(i) = pm.row(i).array() * (dp.row(i).array() - s);
                    }
                    dp *= inv_temp;
                    if (gq) {
                      CStrideMap kh(pk.value.data() + static_cast<std::size_t>(g) * lk * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
                      StrideMap gqh(gq + static_cast<std::size_t>(g) * lq * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
                      gqh.noalias() += dp * kh;
                    }
                    if (gk) {
                      CStrideMap qh(pq.value.data() + static_cast<std::size_t>(g) * lq * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
                      StrideMap gkh(gk + static_cast<std::size_t>(g) * lk * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
                      gkh.noalias() += dp.transpose() * qh;
                    }
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// Data movement

inline Var reshape(const Var& x, Shape s) {
  if (numel(s) != x.size()) throw ConfigError("reshape " + shape_str(x.shape()) + " -> " + shape_str(s));
  return detail::make(std::move(s), x.value(), {x}, [](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

// out[i] = x[index[i]]; gradient scatters back with accumulation.
inline Var gather(const Var& x, std::vector<std::int32_t> index, Shape out_shape) {
  if (numel(out_shape) != index.size()) throw ConfigError("gather: index size does not match output shape");
  Buffer out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = x.value()[static_cast<std::size_t>(index[i])];
  return detail::make(std::move(out_shape), std::move(out), {x}, [index = std::move(index)](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) g[static_cast<std::size_t>(index[i])] += n.grad[i];
  });
}

inline Var permute(const Var& x, const std::vector<int>& axes) {
  Shape os;
  auto idx = permute_index(x.shape(), axes, &os);
  return gather(x, std::move(idx), std::move(os));
}

// Concatenation along axis 0 (all trailing dims must agree).
inline Var concat0(const std::vector<Var>& xs) {
  if (xs.empty()) throw ConfigError("concat0: empty input");
  Shape tail(xs[0].shape().begin() + 1, xs[0].shape().end());
  int rows = 0;
  std::size_t total = 0;
  for (const auto& v : xs) {
    if (Shape(v.shape().begin() + 1, v.shape().end()) != tail) throw ConfigError("concat0: trailing shape mismatch");
    rows += v.dim(0);
    total += v.size();
  }
  Buffer out;
  out.reserve(total);
  for (const auto& v : xs) out.insert(out.end(), v.value().begin(), v.value().end());
  Shape os = xs[0].shape();
  os[0] = rows;
  return detail::make(std::move(os), std::move(out), xs, [](Node& n) {
    std::size_t off = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

// Rows [begin, end) along axis 0.
inline Var slice0(const Var& x, int begin, int end) {
  const int n0 = x.dim(0);
  if (begin < 0 || end > n0 || begin >= end) throw ConfigError("slice0: bad range");
  const std::size_t inner = x.size() / static_cast<std::size_t>(n0);
  std::vector<std::int32_t> idx(static_cast<std::size_t>(end - begin) * inner);
  std::iota(idx.begin(), idx.end(), static_cast<std::int32_t>(static_cast<std::size_t>(begin) * inner));
  Shape os = x.shape();
  os[0] = end - begin;
  return gather(x, std::move(idx), std::move(os));
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  return detail::make({1}, {s}, {x}, [](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (double& gi : g) gi += n.grad[0];
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// mean((a - b)^2)
inline Var mse(const Var& a, const Var& b) {
  detail::check_same(a, b, "mse");
  const double inv_n = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double r = a.value()[i] - b.value()[i];
    s += r * r;
  }
  return detail::make({1}, {s * inv_n}, {a, b}, [inv_n](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    const double c = 2.0 * inv_n * n.grad[0];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * (pa.value[i] - pb.value[i]);
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= c * (pa.value[i] - pb.value[i]);
    }
  });
}

// mean over elements of 0.5 * (mu^2 + exp(logvar) - 1 - logvar)
inline Var kl_standard_normal(const Var& mu, const Var& logvar) {
  detail::check_same(mu, logvar, "kl");
  const double inv_n = 1.0 / static_cast<double>(mu.size());
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    double m = mu.value()[i], lv = logvar.value()[i];
    s += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
  }
  return detail::make({1}, {s * inv_n}, {mu, logvar}, [inv_n](Node& n) {
    Node& pm = *n.parents[0];
    Node& pl = *n.parents[1];
    const double c = inv_n * n.grad[0];
    if (pm.requires_grad) {
      auto& g = pm.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * pm.value[i];
    }
    if (pl.requires_grad) {
      auto& g = pl.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * 0.5 * (std::exp(pl.value[i]) - 1.0);
    }
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace hivae::ag
