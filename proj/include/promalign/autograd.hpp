#pragma once

// Reverse-mode automatic differentiation over small dense matrices.
// A Var wraps a graph node; ops build new nodes and record a backward
// closure. backward() runs the closures in reverse topological order.
// Single-threaded by design; evaluation order is fixed, so results are
// reproducible bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "promalign/errors.hpp"
#include "promalign/tensor.hpp"

namespace promalign {

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw InternalError(msg);
}

// log(sum(exp(x))) with max subtraction.
inline double logsumexp(const double* x, std::size_t n, std::size_t stride = 1) {
  double m = -HUGE_VAL;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i * stride]);
  if (!std::isfinite(m)) return m;  // all -inf
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i * stride] - m);
  return m + std::log(s);
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Tensor(value.rows(), value.cols(), 0.0);
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = false;
    return Var(n);
  }

  static Var leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->ensure_grad();
    return Var(n);
  }

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& mutable_value() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  Tensor& mutable_grad() { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  std::size_t rows() const { return n_->value.rows(); }
  std::size_t cols() const { return n_->value.cols(); }
  double scalar() const { return n_->value.scalar(); }
  std::shared_ptr<Node> node() const { return n_; }

  void zero_grad() {
    n_->ensure_grad();
    n_->grad.fill(0.0);
  }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

inline std::shared_ptr<Node> make_op(Tensor value, std::vector<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  return n;
}

}  // namespace detail

// Runs backpropagation from a 1x1 loss node. Gradients accumulate into
// every reachable node that requires them; leaves keep theirs until zeroed.
inline void backward(const Var& root) {
  detail::require(root.rows() == 1 && root.cols() == 1, "backward: root must be 1x1");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  root.node()->grad.at(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  detail::require(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.value().data()[i];
  auto n = detail::make_op(std::move(out), {a.node(), b.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward = [self, pa, pb]() {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self->grad.size(); ++i) pa->grad.data()[i] += self->grad.data()[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self->grad.size(); ++i) pb->grad.data()[i] += self->grad.data()[i];
  };
  return Var(n);
}

inline Var sub(const Var& a, const Var& b) {
  detail::require(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.value().data()[i];
  auto n = detail::make_op(std::move(out), {a.node(), b.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward = [self, pa, pb]() {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self->grad.size(); ++i) pa->grad.data()[i] += self->grad.data()[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self->grad.size(); ++i) pb->grad.data()[i] -= self->grad.data()[i];
  };
  return Var(n);
}

inline Var neg(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = -v;
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.size(); ++i) pa->grad.data()[i] -= self->grad.data()[i];
  };
  return Var(n);
}

inline Var mul(const Var& a, const Var& b) {
  detail::require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
  auto n = detail::make_op(std::move(out), {a.node(), b.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward = [self, pa, pb]() {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad.data()[i] += self->grad.data()[i] * pb->value.data()[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pb->grad.data()[i] += self->grad.data()[i] * pa->value.data()[i];
  };
  return Var(n);
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa, c]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      pa->grad.data()[i] += c * self->grad.data()[i];
  };
  return Var(n);
}

// Adds a 1 x C row vector to every row of an R x C matrix.
inline Var add_rowvec(const Var& m, const Var& r) {
  detail::require(r.rows() == 1 && r.cols() == m.cols(), "add_rowvec: shape mismatch");
  Tensor out = m.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += r.value().at(0, j);
  auto n = detail::make_op(std::move(out), {m.node(), r.node()});
  Node* self = n.get();
  Node* pm = m.node().get();
  Node* pr = r.node().get();
  n->backward = [self, pm, pr]() {
    if (pm->requires_grad)
      for (std::size_t i = 0; i < self->grad.size(); ++i) pm->grad.data()[i] += self->grad.data()[i];
    if (pr->requires_grad)
      for (std::size_t i = 0; i < self->grad.rows(); ++i)
        for (std::size_t j = 0; j < self->grad.cols(); ++j)
          pr->grad.at(0, j) += self->grad.at(i, j);
  };
  return Var(n);
}

// Adds an R x 1 column vector to every column of an R x C matrix.
inline Var add_colvec(const Var& m, const Var& c) {
  detail::require(c.cols() == 1 && c.rows() == m.rows(), "add_colvec: shape mismatch");
  Tensor out = m.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += c.value().at(i, 0);
  auto n = detail::make_op(std::move(out), {m.node(), c.node()});
  Node* self = n.get();
  Node* pm = m.node().get();
  Node* pc = c.node().get();
  n->backward = [self, pm, pc]() {
    if (pm->requires_grad)
      for (std::size_t i = 0; i < self->grad.size(); ++i) pm->grad.data()[i] += self->grad.data()[i];
    if (pc->requires_grad)
      for (std::size_t i = 0; i < self->grad.rows(); ++i)
        for (std::size_t j = 0; j < self->grad.cols(); ++j)
          pc->grad.at(i, 0) += self->grad.at(i, j);
  };
  return Var(n);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {
// out(R x C) += A(R x K) * B(K x C), optionally with A or B transposed.
inline void matmul_acc(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out) {
  std::size_t r = ta ? a.cols() : a.rows();
  std::size_t k = ta ? a.rows() : a.cols();
  std::size_t c = tb ? b.rows() : b.cols();
  require((tb ? b.cols() : b.rows()) == k, "matmul: inner dim mismatch");
  require(out.rows() == r && out.cols() == c, "matmul: out shape mismatch");
  for (std::size_t i = 0; i < r; ++i) {
    double* orow = out.row_ptr(i);
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = ta ? a.at(kk, i) : a.at(i, kk);
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = b.row_ptr(kk);
        for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < c; ++j) orow[j] += av * b.at(j, kk);
      }
    }
  }
}
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dim mismatch");
  Tensor out(a.rows(), b.cols(), 0.0);
  detail::matmul_acc(a.value(), false, b.value(), false, out);
  auto n = detail::make_op(std::move(out), {a.node(), b.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward = [self, pa, pb]() {
    if (pa->requires_grad) detail::matmul_acc(self->grad, false, pb->value, true, pa->grad);
    if (pb->requires_grad) detail::matmul_acc(pa->value, true, self->grad, false, pb->grad);
  };
  return Var(n);
}

inline Var transpose(const Var& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.value().at(i, j);
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.rows(); ++i)
      for (std::size_t j = 0; j < self->grad.cols(); ++j)
        pa->grad.at(j, i) += self->grad.at(i, j);
  };
  return Var(n);
}

// Dot product of two 1 x n row vectors.
inline Var dot(const Var& a, const Var& b) {
  detail::require(a.rows() == 1 && b.rows() == 1 && a.cols() == b.cols(), "dot: shape mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) s += a.value().at(0, j) * b.value().at(0, j);
  auto n = detail::make_op(Tensor(1, 1, s), {a.node(), b.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward = [self, pa, pb]() {
    double g = self->grad.at(0, 0);
    if (pa->requires_grad)
      for (std::size_t j = 0; j < pa->value.cols(); ++j) pa->grad.at(0, j) += g * pb->value.at(0, j);
    if (pb->requires_grad)
      for (std::size_t j = 0; j < pb->value.cols(); ++j) pb->grad.at(0, j) += g * pa->value.at(0, j);
  };
  return Var(n);
}

// ---------------------------------------------------------------------------
// Slicing, gathering, concatenation
// ---------------------------------------------------------------------------

inline Var rows(const Var& a, std::size_t r0, std::size_t r1) {
  detail::require(r0 < r1 && r1 <= a.rows(), "rows: bad range");
  Tensor out(r1 - r0, a.cols());
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i - r0, j) = a.value().at(i, j);
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa, r0]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.rows(); ++i)
      for (std::size_t j = 0; j < self->grad.cols(); ++j)
        pa->grad.at(r0 + i, j) += self->grad.at(i, j);
  };
  return Var(n);
}

inline Var row(const Var& a, std::size_t r) { return rows(a, r, r + 1); }

inline Var cols(const Var& a, std::size_t c0, std::size_t c1) {
  detail::require(c0 < c1 && c1 <= a.cols(), "cols: bad range");
  Tensor out(a.rows(), c1 - c0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = a.value().at(i, j);
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa, c0]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.rows(); ++i)
      for (std::size_t j = 0; j < self->grad.cols(); ++j)
        pa->grad.at(i, c0 + j) += self->grad.at(i, j);
  };
  return Var(n);
}

inline Var concat_rows(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_rows: empty");
  std::size_t c = parts[0].cols(), r = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == c, "concat_rows: col mismatch");
    r += p.rows();
  }
  Tensor out(r, c);
  std::size_t off = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(off + i, j) = p.value().at(i, j);
    off += p.rows();
    parents.push_back(p.node());
  }
  auto n = detail::make_op(std::move(out), parents);
  Node* self = n.get();
  n->backward = [self]() {
    std::size_t off2 = 0;
    for (auto& p : self->parents) {
      if (p->requires_grad)
        for (std::size_t i = 0; i < p->value.rows(); ++i)
          for (std::size_t j = 0; j < p->value.cols(); ++j)
            p->grad.at(i, j) += self->grad.at(off2 + i, j);
      off2 += p->value.rows();
    }
  };
  return Var(n);
}

inline Var concat_cols(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols: empty");
  std::size_t r = parts[0].rows(), c = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == r, "concat_cols: row mismatch");
    c += p.cols();
  }
  Tensor out(r, c);
  std::size_t off = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.value().at(i, j);
    off += p.cols();
    parents.push_back(p.node());
  }
  auto n = detail::make_op(std::move(out), parents);
  Node* self = n.get();
  n->backward = [self]() {
    std::size_t off2 = 0;
    for (auto& p : self->parents) {
      if (p->requires_grad)
        for (std::size_t i = 0; i < p->value.rows(); ++i)
          for (std::size_t j = 0; j < p->value.cols(); ++j)
            p->grad.at(i, j) += self->grad.at(i, off2 + j);
      off2 += p->value.cols();
    }
  };
  return Var(n);
}

// Row lookup: out[t] = table[ids[t]]. Backward scatter-adds into the table.
inline Var gather_rows(const Var& table, const std::vector<std::size_t>& ids) {
  detail::require(!ids.empty(), "gather_rows: empty ids");
  for (std::size_t id : ids) detail::require(id < table.rows(), "gather_rows: id out of range");
  Tensor out(ids.size(), table.cols());
  for (std::size_t t = 0; t < ids.size(); ++t)
    for (std::size_t j = 0; j < table.cols(); ++j) out.at(t, j) = table.value().at(ids[t], j);
  auto n = detail::make_op(std::move(out), {table.node()});
  Node* self = n.get();
  Node* pt = table.node().get();
  n->backward = [self, pt, ids]() {
    if (!pt->requires_grad) return;
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (std::size_t j = 0; j < self->grad.cols(); ++j)
        pt->grad.at(ids[t], j) += self->grad.at(t, j);
  };
  return Var(n);
}

// Row lookup across two stacked tables: ids below table.rows() read `table`,
// the rest read `extra` at (id - table.rows()). Lets a small auxiliary table
// (e.g. reserved marker embeddings) live in its own parameter tensor.
inline Var gather_rows_two(const Var& table, const Var& extra,
                           const std::vector<std::size_t>& ids) {
  detail::require(table.cols() == extra.cols(), "gather_rows_two: width mismatch");
  detail::require(!ids.empty(), "gather_rows_two: empty ids");
  std::size_t split = table.rows();
  for (std::size_t id : ids)
    detail::require(id < split + extra.rows(), "gather_rows_two: id out of range");
  Tensor out(ids.size(), table.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const Tensor& src = ids[t] < split ? table.value() : extra.value();
    std::size_t r = ids[t] < split ? ids[t] : ids[t] - split;
    for (std::size_t j = 0; j < table.cols(); ++j) out.at(t, j) = src.at(r, j);
  }
  auto n = detail::make_op(std::move(out), {table.node(), extra.node()});
  Node* self = n.get();
  Node* pt = table.node().get();
  Node* pe = extra.node().get();
  n->backward = [self, pt, pe, ids, split]() {
    for (std::size_t t = 0; t < ids.size(); ++t) {
      Node* dst = ids[t] < split ? pt : pe;
      if (!dst->requires_grad) continue;
      std::size_t r = ids[t] < split ? ids[t] : ids[t] - split;
      for (std::size_t j = 0; j < self->grad.cols(); ++j)
        dst->grad.at(r, j) += self->grad.at(t, j);
    }
  };
  return Var(n);
}

// Mean of a subset of rows; the reduction behind object-region pooling.
inline Var mean_rows_subset(const Var& a, const std::vector<std::size_t>& idxs) {
  detail::require(!idxs.empty(), "mean_rows_subset: empty subset");
  for (std::size_t r : idxs) detail::require(r < a.rows(), "mean_rows_subset: index out of range");
  Tensor out(1, a.cols(), 0.0);
  for (std::size_t r : idxs)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(0, j) += a.value().at(r, j);
  double inv = 1.0 / static_cast<double>(idxs.size());
  for (double& v : out.data()) v *= inv;
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa, idxs, inv]() {
    if (!pa->requires_grad) return;
    for (std::size_t r : idxs)
      for (std::size_t j = 0; j < self->grad.cols(); ++j)
        pa->grad.at(r, j) += inv * self->grad.at(0, j);
  };
  return Var(n);
}

inline Var pick(const Var& a, std::size_t r, std::size_t c) {
  detail::require(r < a.rows() && c < a.cols(), "pick: out of range");
  auto n = detail::make_op(Tensor(1, 1, a.value().at(r, c)), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa, r, c]() {
    if (pa->requires_grad) pa->grad.at(r, c) += self->grad.at(0, 0);
  };
  return Var(n);
}

// Sum of 1x1 terms.
inline Var vsum(const std::vector<Var>& terms) {
  detail::require(!terms.empty(), "vsum: empty");
  double s = 0.0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& t : terms) {
    detail::require(t.rows() == 1 && t.cols() == 1, "vsum: non-scalar term");
    s += t.value().at(0, 0);
    parents.push_back(t.node());
  }
  auto n = detail::make_op(Tensor(1, 1, s), parents);
  Node* self = n.get();
  n->backward = [self]() {
    for (auto& p : self->parents)
      if (p->requires_grad) p->grad.at(0, 0) += self->grad.at(0, 0);
  };
  return Var(n);
}

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  auto n = detail::make_op(Tensor(1, 1, s), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa]() {
    if (!pa->requires_grad) return;
    double g = self->grad.at(0, 0);
    for (double& v : pa->grad.data()) v += g;
  };
  return Var(n);
}

inline Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

inline Var softmax_rows(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double* p = out.row_ptr(i);
    double m = -HUGE_VAL;
    for (std::size_t j = 0; j < out.cols(); ++j) m = std::max(m, p[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < out.cols(); ++j) {
      p[j] = std::exp(p[j] - m);
      s += p[j];
    }
    for (std::size_t j = 0; j < out.cols(); ++j) p[j] /= s;
  }
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->value.rows(); ++i) {
      const double* y = self->value.row_ptr(i);
      const double* g = self->grad.row_ptr(i);
      double gy = 0.0;
      for (std::size_t j = 0; j < self->value.cols(); ++j) gy += g[j] * y[j];
      for (std::size_t j = 0; j < self->value.cols(); ++j)
        pa->grad.at(i, j) += y[j] * (g[j] - gy);
    }
  };
  return Var(n);
}

inline Var log_softmax_rows(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double lse = detail::logsumexp(out.row_ptr(i), out.cols());
    double* p = out.row_ptr(i);
    for (std::size_t j = 0; j < out.cols(); ++j) p[j] -= lse;
  }
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->value.rows(); ++i) {
      const double* y = self->value.row_ptr(i);  // log-probs
      const double* g = self->grad.row_ptr(i);
      double gs = 0.0;
      for (std::size_t j = 0; j < self->value.cols(); ++j) gs += g[j];
      for (std::size_t j = 0; j < self->value.cols(); ++j)
        pa->grad.at(i, j) += g[j] - std::exp(y[j]) * gs;
    }
  };
  return Var(n);
}

// Column-wise log-sum-exp of an R x C matrix, yielding 1 x C.
inline Var logsumexp_cols(const Var& a) {
  Tensor out(1, a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j)
    out.at(0, j) = detail::logsumexp(a.value().data().data() + j, a.rows(), a.cols());
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa]() {
    if (!pa->requires_grad) return;
    for (std::size_t j = 0; j < pa->value.cols(); ++j) {
      double lse = self->value.at(0, j);
      double g = self->grad.at(0, j);
      if (g == 0.0) continue;
      for (std::size_t i = 0; i < pa->value.rows(); ++i)
        pa->grad.at(i, j) += g * std::exp(pa->value.at(i, j) - lse);
    }
  };
  return Var(n);
}

// Row-wise log-sum-exp of an R x C matrix, yielding R x 1.
inline Var logsumexp_rows(const Var& a) {
  Tensor out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i)
    out.at(i, 0) = detail::logsumexp(a.value().row_ptr(i), a.cols());
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < pa->value.rows(); ++i) {
      double lse = self->value.at(i, 0);
      double g = self->grad.at(i, 0);
      if (g == 0.0) continue;
      for (std::size_t j = 0; j < pa->value.cols(); ++j)
        pa->grad.at(i, j) += g * std::exp(pa->value.at(i, j) - lse);
    }
  };
  return Var(n);
}

inline Var gelu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) {
    double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    v = v * phi;
  }
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa]() {
    if (!pa->requires_grad) return;
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < pa->value.size(); ++i) {
      double x = pa->value.data()[i];
      double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      double dens = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      pa->grad.data()[i] += self->grad.data()[i] * (phi + x * dens);
    }
  };
  return Var(n);
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = detail::stable_sigmoid(v);
  auto n = detail::make_op(std::move(out), {a.node()});
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward = [self, pa]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->value.size(); ++i) {
      double y = self->value.data()[i];
      pa->grad.data()[i] += self->grad.data()[i] * y * (1.0 - y);
    }
  };
  return Var(n);
}

// Per-row layer normalization with learned gain/bias (1 x C each).
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  std::size_t C = x.cols();
  detail::require(gamma.rows() == 1 && gamma.cols() == C, "layer_norm: gamma shape");
  detail::require(beta.rows() == 1 && beta.cols() == C, "layer_norm: beta shape");
  Tensor out(x.rows(), C);
  Tensor xhat(x.rows(), C);
  Tensor inv_std(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* p = x.value().row_ptr(i);
    double mu = 0.0;
    for (std::size_t j = 0; j < C; ++j) mu += p[j];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t j = 0; j < C; ++j) var += (p[j] - mu) * (p[j] - mu);
    var /= static_cast<double>(C);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std.at(i, 0) = is;
    for (std::size_t j = 0; j < C; ++j) {
      double xh = (p[j] - mu) * is;
      xhat.at(i, j) = xh;
      out.at(i, j) = gamma.value().at(0, j) * xh + beta.value().at(0, j);
    }
  }
  auto n = detail::make_op(std::move(out), {x.node(), gamma.node(), beta.node()});
  Node* self = n.get();
  Node* px = x.node().get();
  Node* pg = gamma.node().get();
  Node* pb = beta.node().get();
  auto xh = std::make_shared<Tensor>(std::move(xhat));
  auto is = std::make_shared<Tensor>(std::move(inv_std));
  n->backward = [self, px, pg, pb, xh, is]() {
    std::size_t R = self->value.rows(), C = self->value.cols();
    for (std::size_t i = 0; i < R; ++i) {
      const double* g = self->grad.row_ptr(i);
      if (pg->requires_grad)
        for (std::size_t j = 0; j < C; ++j) pg->grad.at(0, j) += g[j] * xh->at(i, j);
      if (pb->requires_grad)
        for (std::size_t j = 0; j < C; ++j) pb->grad.at(0, j) += g[j];
      if (px->requires_grad) {
        double mean_h = 0.0, mean_hx = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
          double h = g[j] * pg->value.at(0, j);
          mean_h += h;
          mean_hx += h * xh->at(i, j);
        }
        mean_h /= static_cast<double>(C);
        mean_hx /= static_cast<double>(C);
        double s = is->at(i, 0);
        for (std::size_t j = 0; j < C; ++j) {
          double h = g[j] * pg->value.at(0, j);
          px->grad.at(i, j) += s * (h - mean_h - xh->at(i, j) * mean_hx);
        }
      }
    }
  };
  return Var(n);
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

// Mean binary cross-entropy over probabilities in (0,1). Probabilities are
// clamped to [1e-7, 1-1e-7] before the logs; outside that range the gradient
// through the clamp is zero.
inline Var binary_cross_entropy(const Var& probs, const std::vector<int>& labels) {
  detail::require(probs.rows() == 1, "binary_cross_entropy: expects 1 x B probs");
  if (probs.cols() != labels.size())
    throw InputError("binary_cross_entropy: probability/label length mismatch");
  constexpr double eps = 1e-7;
  std::size_t B = labels.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double p = std::min(std::max(probs.value().at(0, i), eps), 1.0 - eps);
    double y = labels[i] ? 1.0 : 0.0;
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  loss /= static_cast<double>(B);
  auto n = detail::make_op(Tensor(1, 1, loss), {probs.node()});
  Node* self = n.get();
  Node* pp = probs.node().get();
  n->backward = [self, pp, labels]() {
    if (!pp->requires_grad) return;
    double g = self->grad.at(0, 0) / static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      double p = pp->value.at(0, i);
      if (p <= 1e-7 || p >= 1.0 - 1e-7) continue;
      double y = labels[i] ? 1.0 : 0.0;
      pp->grad.at(0, i) += g * (p - y) / (p * (1.0 - p));
    }
  };
  return Var(n);
}

// Mean over rows of -sum_j targets[i][j] * log softmax(logits[i])[j].
inline Var soft_cross_entropy(const Var& logits, const Tensor& targets) {
  if (!(logits.rows() == targets.rows() && logits.cols() == targets.cols()))
    throw InputError("soft_cross_entropy: logits/targets shape mismatch");
  std::size_t R = logits.rows(), C = logits.cols();
  double loss = 0.0;
  Tensor probs(R, C);
  for (std::size_t i = 0; i < R; ++i) {
    double lse = detail::logsumexp(logits.value().row_ptr(i), C);
    for (std::size_t j = 0; j < C; ++j) {
      double logp = logits.value().at(i, j) - lse;
      probs.at(i, j) = std::exp(logp);
      loss -= targets.at(i, j) * logp;
    }
  }
  loss /= static_cast<double>(R);
  auto n = detail::make_op(Tensor(1, 1, loss), {logits.node()});
  Node* self = n.get();
  Node* pl = logits.node().get();
  auto pr = std::make_shared<Tensor>(std::move(probs));
  auto tg = std::make_shared<Tensor>(targets);
  n->backward = [self, pl, pr, tg]() {
    if (!pl->requires_grad) return;
    std::size_t R2 = pl->value.rows(), C2 = pl->value.cols();
    double g = self->grad.at(0, 0) / static_cast<double>(R2);
    for (std::size_t i = 0; i < R2; ++i) {
      double qsum = 0.0;
      for (std::size_t j = 0; j < C2; ++j) qsum += tg->at(i, j);
      for (std::size_t j = 0; j < C2; ++j)
        pl->grad.at(i, j) += g * (pr->at(i, j) * qsum - tg->at(i, j));
    }
  };
  return Var(n);
}

// Mean categorical cross-entropy against integer class labels.
inline Var cross_entropy(const Var& logits, const std::vector<std::size_t>& gold) {
  if (logits.rows() != gold.size())
    throw InputError("cross_entropy: batch size mismatch");
  std::size_t R = logits.rows(), C = logits.cols();
  for (std::size_t i = 0; i < R; ++i)
    if (gold[i] >= C)
      throw InputError("cross_entropy: label index " + std::to_string(gold[i]) +
                       " out of range at row " + std::to_string(i));
  double loss = 0.0;
  Tensor probs(R, C);
  for (std::size_t i = 0; i < R; ++i) {
    double lse = detail::logsumexp(logits.value().row_ptr(i), C);
    for (std::size_t j = 0; j < C; ++j)
      probs.at(i, j) = std::exp(logits.value().at(i, j) - lse);
    loss -= logits.value().at(i, gold[i]) - lse;
  }
  loss /= static_cast<double>(R);
  auto n = detail::make_op(Tensor(1, 1, loss), {logits.node()});
  Node* self = n.get();
  Node* pl = logits.node().get();
  auto pr = std::make_shared<Tensor>(std::move(probs));
  n->backward = [self, pl, pr, gold]() {
    if (!pl->requires_grad) return;
    std::size_t R2 = pl->value.rows(), C2 = pl->value.cols();
    double g = self->grad.at(0, 0) / static_cast<double>(R2);
    for (std::size_t i = 0; i < R2; ++i)
      for (std::size_t j = 0; j < C2; ++j)
        pl->grad.at(i, j) += g * (pr->at(i, j) - (j == gold[i] ? 1.0 : 0.0));
  };
  return Var(n);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

// Affine map x -> x*W + b  (W: in x out, b: 1 x out).
struct Linear {
  Var w;
  Var b;

  Linear() = default;
  Linear(Var weight, Var bias) : w(std::move(weight)), b(std::move(bias)) {}

  std::size_t in_dim() const { return w.rows(); }
  std::size_t out_dim() const { return w.cols(); }

  Var operator()(const Var& x) const { return add_rowvec(matmul(x, w), b); }
};

}  // namespace promalign
