#include "stx/tensor.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace stx {

using detail::TensorNode;

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (Index e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

std::shared_ptr<TensorNode> make_leaf(Shape shape, Array value, bool requires_grad) {
  check_shape(shape);
  if (value.size() != numel(shape)) {
    throw ShapeError("data length does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->leaf = true;
  return n;
}

// Right-aligned broadcast result shape.
Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t ra = a.size(), rb = b.size();
  const std::size_t r = std::max(ra, rb);
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    Index da = k < ra ? a[ra - 1 - k] : 1;
    Index db = k < rb ? b[rb - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[r - 1 - k] = std::max(da, db);
  }
  return out;
}

// Per-axis element strides for reading `src` while iterating `out`
// (right-aligned; 0 where src broadcasts).
std::vector<Index> bcast_strides(const Shape& src, const Shape& out) {
  const std::size_t rs = src.size(), ro = out.size();
  std::vector<Index> strides(ro, 0);
  Index acc = 1;
  for (std::size_t k = 0; k < ro; ++k) {  // k counts from the trailing axis
    std::size_t oi = ro - 1 - k;
    if (k < rs) {
      Index ds = src[rs - 1 - k];
      strides[oi] = (ds == 1) ? 0 : acc;
      acc *= ds;
    } else {
      strides[oi] = 0;
    }
  }
  return strides;
}

// Iterates the linearized `out` shape, yielding (i_out, off_a, off_b).
template <class F>
void bcast_loop(const Shape& out, const std::vector<Index>& sa, const std::vector<Index>& sb,
                F&& f) {
  const Index n = numel(out);
  const int r = static_cast<int>(out.size());
  std::vector<Index> coord(static_cast<std::size_t>(r), 0);
  Index oa = 0, ob = 0;
  for (Index i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (int k = r - 1; k >= 0; --k) {
      ++coord[static_cast<std::size_t>(k)];
      oa += sa[static_cast<std::size_t>(k)];
      ob += sb[static_cast<std::size_t>(k)];
      if (coord[static_cast<std::size_t>(k)] < out[static_cast<std::size_t>(k)]) break;
      coord[static_cast<std::size_t>(k)] = 0;
      oa -= sa[static_cast<std::size_t>(k)] * out[static_cast<std::size_t>(k)];
      ob -= sb[static_cast<std::size_t>(k)] * out[static_cast<std::size_t>(k)];
    }
  }
}

void ensure_grad(TensorNode& n) {
  if (n.grad.size() == 0) n.grad = Array::Zero(n.value.size());
}

Index normalize_axis(Index axis, Index rank) {
  Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

Eigen::Map<const MatrixRM> as_matrix(const Array& a, Index rows, Index cols) {
  return Eigen::Map<const MatrixRM>(a.data(), rows, cols);
}

Eigen::Map<MatrixRM> as_matrix(Array& a, Index rows, Index cols) {
  return Eigen::Map<MatrixRM>(a.data(), rows, cols);
}

}  // namespace

Tensor make_op(Shape shape, Array value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->leaf = false;
  bool rg = false;
  for (const Tensor& p : parents) rg = rg || p.requires_grad();
  n->requires_grad = rg;
  // Untracked results drop their history so constant pipelines do not pin
  // intermediate buffers.
  if (rg) {
    for (const Tensor& p : parents) n->parents.push_back(p.node_);
    n->backward_fn = std::move(backward);
  }
  return Tensor(std::move(n));
}

// ---- Tensor basics ----

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Index n = numel(shape);
  return Tensor(make_leaf(std::move(shape), Array::Zero(n), requires_grad));
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Index n = numel(shape);
  return Tensor(make_leaf(std::move(shape), Array::Constant(n, value), requires_grad));
}

Tensor Tensor::eye(Index n) {
  Array v = Array::Zero(n * n);
  for (Index i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor(make_leaf({n, n}, std::move(v), false));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  Array v(1);
  v[0] = value;
  return Tensor(make_leaf({}, std::move(v), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  Array v = Eigen::Map<const Array>(data.data(), static_cast<Index>(data.size()));
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from_array(Shape shape, Array data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Array v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::normal(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Array v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
Index Tensor::rank() const { return static_cast<Index>(node_->shape.size()); }
Index Tensor::size() const { return node_->value.size(); }

Index Tensor::dim(Index axis) const {
  Index a = normalize_axis(axis, rank());
  return node_->shape[static_cast<std::size_t>(a)];
}

const Array& Tensor::value() const { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() requires a single-element tensor");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<Index> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) throw ShapeError("at(): index rank mismatch");
  Index off = 0;
  std::size_t k = 0;
  for (Index i : idx) {
    if (i < 0 || i >= s[k]) throw ShapeError("at(): index out of range");
    off = off * s[k] + i;
    ++k;
  }
  return node_->value[off];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return node_->grad.size() != 0; }

const Array& Tensor::grad() const {
  if (!has_grad()) throw ValueError("tensor has no gradient buffer");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad.size() != 0) node_->grad.setZero();
}

void Tensor::set_value(const Array& v) {
  if (!node_->leaf) throw ValueError("set_value is restricted to leaf tensors");
  if (v.size() != node_->value.size()) throw ShapeError("set_value: size mismatch");
  node_->value = v;
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(node_->shape, node_->value, false));
}

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() requires a scalar root");
  if (!node_->requires_grad) {
    throw ValueError("backward() on a tensor that does not require grad");
  }
  // Topological order over the tracked subgraph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    bool descended = false;
    while (next < n->parents.size()) {
      TensorNode* p = n->parents[next].get();
      ++next;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }
  // Interior gradients restart each pass; leaf gradients accumulate.
  for (TensorNode* n : order) {
    if (n->leaf) {
      ensure_grad(*n);
    } else {
      n->grad = Array::Zero(n->value.size());
    }
  }
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---- elementwise binary ----

namespace {

enum class BinKind { Add, Sub, Mul, Div, Max };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto sa = bcast_strides(a.shape(), out_shape);
  auto sb = bcast_strides(b.shape(), out_shape);
  const Array& va = a.value();
  const Array& vb = b.value();
  Array out(numel(out_shape));
  switch (kind) {
    case BinKind::Add:
      bcast_loop(out_shape, sa, sb, [&](Index i, Index oa, Index ob) { out[i] = va[oa] + vb[ob]; });
      break;
    case BinKind::Sub:
      bcast_loop(out_shape, sa, sb, [&](Index i, Index oa, Index ob) { out[i] = va[oa] - vb[ob]; });
      break;
    case BinKind::Mul:
      bcast_loop(out_shape, sa, sb, [&](Index i, Index oa, Index ob) { out[i] = va[oa] * vb[ob]; });
      break;
    case BinKind::Div:
      bcast_loop(out_shape, sa, sb, [&](Index i, Index oa, Index ob) { out[i] = va[oa] / vb[ob]; });
      break;
    case BinKind::Max:
      bcast_loop(out_shape, sa, sb,
                 [&](Index i, Index oa, Index ob) { out[i] = va[oa] >= vb[ob] ? va[oa] : vb[ob]; });
      break;
  }
  auto backward = [kind, out_shape, sa, sb](TensorNode& self) {
    TensorNode* na = self.parents[0].get();
    TensorNode* nb = self.parents[1].get();
    const Array& g = self.grad;
    const Array& va = na->value;
    const Array& vb = nb->value;
    const bool wa = na->requires_grad;
    const bool wb = nb->requires_grad;
    bcast_loop(out_shape, sa, sb, [&](Index i, Index oa, Index ob) {
      switch (kind) {
        case BinKind::Add:
          if (wa) na->grad[oa] += g[i];
          if (wb) nb->grad[ob] += g[i];
          break;
        case BinKind::Sub:
          if (wa) na->grad[oa] += g[i];
          if (wb) nb->grad[ob] -= g[i];
          break;
        case BinKind::Mul:
          if (wa) na->grad[oa] += g[i] * vb[ob];
          if (wb) nb->grad[ob] += g[i] * va[oa];
          break;
        case BinKind::Div:
          if (wa) na->grad[oa] += g[i] / vb[ob];
          if (wb) nb->grad[ob] -= g[i] * va[oa] / (vb[ob] * vb[ob]);
          break;
        case BinKind::Max:
          // Ties route to the first operand.
          if (va[oa] >= vb[ob]) {
            if (wa) na->grad[oa] += g[i];
          } else {
            if (wb) nb->grad[ob] += g[i];
          }
          break;
      }
    });
  };
  return make_op(std::move(out_shape), std::move(out), {a, b}, std::move(backward));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Mul); }
Tensor divide(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Div); }
Tensor maximum(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Max); }

Tensor neg(const Tensor& a) {
  Array out = -a.value();
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (p->requires_grad) p->grad -= self.grad;
  });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
Tensor operator+(double s, const Tensor& a) { return add(Tensor::scalar(s), a); }
Tensor operator-(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
Tensor operator-(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }
Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }
Tensor operator/(const Tensor& a, double s) { return divide(a, Tensor::scalar(s)); }
Tensor operator-(const Tensor& a) { return neg(a); }

// ---- elementwise functions ----

namespace {

template <class FwdF, class BwdF>
Tensor unary_op(const Tensor& a, FwdF&& fwd, BwdF&& bwd) {
  const Array& va = a.value();
  Array out(va.size());
  for (Index i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
  return make_op(a.shape(), std::move(out), {a},
                 [bwd = std::forward<BwdF>(bwd)](TensorNode& self) {
                   TensorNode* p = self.parents[0].get();
                   if (!p->requires_grad) return;
                   const Array& g = self.grad;
                   for (Index i = 0; i < g.size(); ++i) {
                     p->grad[i] += g[i] * bwd(p->value[i], self.value[i]);
                   }
                 });
}

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double negative_slope) {
  return unary_op(
      a, [negative_slope](double x) { return x > 0.0 ? x : negative_slope * x; },
      [negative_slope](double x, double) { return x > 0.0 ? 1.0 : negative_slope; });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  Array out(1);
  out[0] = a.value().sum();
  return make_op({}, std::move(out), {a}, [](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (p->requires_grad) p->grad += self.grad[0];
  });
}

Tensor sum(const Tensor& a, Index axis, bool keepdim) {
  Index ax = normalize_axis(axis, a.rank());
  Shape keep_shape = a.shape();
  keep_shape[static_cast<std::size_t>(ax)] = 1;
  auto so = bcast_strides(keep_shape, a.shape());
  Array out = Array::Zero(numel(keep_shape));
  const Array& va = a.value();
  bcast_loop(a.shape(), so, so, [&](Index i, Index oo, Index) { out[oo] += va[i]; });
  Shape out_shape = keep_shape;
  if (!keepdim) out_shape.erase(out_shape.begin() + ax);
  auto backward = [in_shape = a.shape(), so](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (!p->requires_grad) return;
    const Array& g = self.grad;
    bcast_loop(in_shape, so, so, [&](Index i, Index oo, Index) { p->grad[i] += g[oo]; });
  };
  return make_op(std::move(out_shape), std::move(out), {a}, std::move(backward));
}

Tensor mean(const Tensor& a) { return sum(a) * (1.0 / static_cast<double>(a.size())); }

Tensor mean(const Tensor& a, Index axis, bool keepdim) {
  Index ax = normalize_axis(axis, a.rank());
  double scale = 1.0 / static_cast<double>(a.dim(ax));
  return sum(a, axis, keepdim) * scale;
}

namespace {

Tensor max_impl(const Tensor& a, Index ax, bool keepdim, bool full) {
  Shape keep_shape;
  std::vector<Index> so;
  if (full) {
    keep_shape = Shape(a.shape().size(), 1);
    so = std::vector<Index>(a.shape().size(), 0);
  } else {
    keep_shape = a.shape();
    keep_shape[static_cast<std::size_t>(ax)] = 1;
    so = bcast_strides(keep_shape, a.shape());
  }
  Index out_n = numel(keep_shape);
  Array out = Array::Constant(out_n, -std::numeric_limits<double>::infinity());
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out_n), Index{0});
  const Array& va = a.value();
  bcast_loop(a.shape(), so, so, [&](Index i, Index oo, Index) {
    if (va[i] > out[oo]) {
      out[oo] = va[i];
      (*argmax)[static_cast<std::size_t>(oo)] = i;
    }
  });
  Shape out_shape;
  if (full) {
    out_shape = {};
  } else {
    out_shape = keep_shape;
    if (!keepdim) out_shape.erase(out_shape.begin() + ax);
  }
  auto backward = [argmax](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (!p->requires_grad) return;
    const Array& g = self.grad;
    for (Index oo = 0; oo < g.size(); ++oo) {
      p->grad[(*argmax)[static_cast<std::size_t>(oo)]] += g[oo];
    }
  };
  return make_op(std::move(out_shape), std::move(out), {a}, std::move(backward));
}

}  // namespace

Tensor max(const Tensor& a) { return max_impl(a, 0, false, true); }

Tensor max(const Tensor& a, Index axis, bool keepdim) {
  Index ax = normalize_axis(axis, a.rank());
  return max_impl(a, ax, keepdim, false);
}

Tensor logsumexp(const Tensor& a, Index axis, bool keepdim) {
  Index ax = normalize_axis(axis, a.rank());
  Tensor m = max(a, ax, true);
  Tensor lse = log(sum(exp(a - m), ax, true)) + m;
  if (keepdim) return lse;
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + ax);
  return reshape(lse, out_shape);
}

Tensor softmax(const Tensor& a, Index axis) {
  Index ax = normalize_axis(axis, a.rank());
  Tensor e = exp(a - max(a, ax, true));
  return e / sum(e, ax, true);
}

// ---- shape / indexing ----

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_op(std::move(shape), a.value(), {a}, [](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (p->requires_grad) p->grad += self.grad;
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects rank-2, got " + shape_str(a.shape()));
  Index r = a.dim(0), c = a.dim(1);
  Array out(a.size());
  as_matrix(out, c, r) = as_matrix(a.value(), r, c).transpose();
  return make_op({c, r}, std::move(out), {a}, [r, c](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (!p->requires_grad) return;
    as_matrix(p->grad, r, c) += as_matrix(self.grad, c, r).transpose();
  });
}

Tensor take_rows(const Tensor& a, const std::vector<Index>& rows) {
  if (a.rank() != 2) throw ShapeError("take_rows expects rank-2, got " + shape_str(a.shape()));
  Index n = a.dim(0), d = a.dim(1);
  for (Index r : rows) {
    if (r < 0 || r >= n) throw ShapeError("take_rows: row index out of range");
  }
  Index m = static_cast<Index>(rows.size());
  Array out(m * d);
  const Array& va = a.value();
  for (Index i = 0; i < m; ++i) {
    out.segment(i * d, d) = va.segment(rows[static_cast<std::size_t>(i)] * d, d);
  }
  auto idx = std::make_shared<std::vector<Index>>(rows);
  return make_op({m, d}, std::move(out), {a}, [idx, d](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (!p->requires_grad) return;
    for (std::size_t i = 0; i < idx->size(); ++i) {
      p->grad.segment((*idx)[i] * d, d) += self.grad.segment(static_cast<Index>(i) * d, d);
    }
  });
}

Tensor take_diag(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw ShapeError("take_diag expects a square matrix, got " + shape_str(a.shape()));
  }
  Index n = a.dim(0);
  Array out(n);
  for (Index i = 0; i < n; ++i) out[i] = a.value()[i * n + i];
  return make_op({n}, std::move(out), {a}, [n](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (!p->requires_grad) return;
    for (Index i = 0; i < n; ++i) p->grad[i * n + i] += self.grad[i];
  });
}

Tensor crop_hw(const Tensor& a, Index top, Index bottom, Index left, Index right) {
  if (a.rank() < 2) throw ShapeError("crop_hw expects rank >= 2");
  Index h = a.shape()[a.shape().size() - 2];
  Index w = a.shape()[a.shape().size() - 1];
  if (top < 0 || left < 0 || bottom > h || right > w || bottom <= top || right <= left) {
    throw ShapeError("crop_hw: invalid rect");
  }
  Index lead = a.size() / (h * w);
  Index oh = bottom - top, ow = right - left;
  Shape out_shape = a.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Array out(lead * oh * ow);
  const Array& va = a.value();
  for (Index l = 0; l < lead; ++l) {
    for (Index y = 0; y < oh; ++y) {
      out.segment((l * oh + y) * ow, ow) = va.segment((l * h + top + y) * w + left, ow);
    }
  }
  auto backward = [h, w, lead, oh, ow, top, left](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (!p->requires_grad) return;
    for (Index l = 0; l < lead; ++l) {
      for (Index y = 0; y < oh; ++y) {
        p->grad.segment((l * h + top + y) * w + left, ow) +=
            self.grad.segment((l * oh + y) * ow, ow);
      }
    }
  };
  return make_op(std::move(out_shape), std::move(out), {a}, std::move(backward));
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Index m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Array out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
  auto backward = [m, k, n](TensorNode& self) {
    TensorNode* na = self.parents[0].get();
    TensorNode* nb = self.parents[1].get();
    auto g = as_matrix(self.grad, m, n);
    if (na->requires_grad) {
      as_matrix(na->grad, m, k).noalias() += g * as_matrix(nb->value, k, n).transpose();
    }
    if (nb->requires_grad) {
      as_matrix(nb->grad, k, n).noalias() += as_matrix(na->value, m, k).transpose() * g;
    }
  };
  return make_op({m, n}, std::move(out), {a, b}, std::move(backward));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size()) {
    throw ShapeError("dot expects equal-length rank-1 tensors");
  }
  return sum(mul(a, b));
}

Tensor solve_spd(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw ShapeError("solve_spd expects a square matrix, got " + shape_str(a.shape()));
  }
  Index n = a.dim(0);
  if (b.rank() != 1 || b.size() != n) {
    throw ShapeError("solve_spd: rhs length must match matrix size");
  }
  Eigen::MatrixXd A = as_matrix(a.value(), n, n);
  double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * (1.0 + A.cwiseAbs().maxCoeff())) {
    throw NumericalError("solve_spd: matrix is not symmetric (max asymmetry " +
                         std::to_string(asym) + ")");
  }
  auto llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(A);
  if (llt->info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    std::string diag;
    if (es.info() == Eigen::Success) {
      double lo = es.eigenvalues().minCoeff();
      double hi = es.eigenvalues().maxCoeff();
      diag = " (eigenvalue range [" + std::to_string(lo) + ", " + std::to_string(hi) + "])";
    }
    throw NumericalError("solve_spd: Cholesky factorization failed, matrix not positive definite" +
                         diag);
  }
  Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b.value().data(), n);
  Eigen::VectorXd x = llt->solve(rhs);
  Array out = Eigen::Map<const Array>(x.data(), n);
  auto xv = std::make_shared<Eigen::VectorXd>(std::move(x));
  auto backward = [llt, xv, n](TensorNode& self) {
    TensorNode* na = self.parents[0].get();
    TensorNode* nb = self.parents[1].get();
    Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(self.grad.data(), n);
    Eigen::VectorXd gb = llt->solve(g);
    if (nb->requires_grad) {
      Eigen::Map<Eigen::VectorXd>(nb->grad.data(), n) += gb;
    }
    if (na->requires_grad) {
      as_matrix(na->grad, n, n).noalias() -= gb * xv->transpose();
    }
  };
  return make_op({n}, std::move(out), {a, b}, std::move(backward));
}

// ---- structured ops ----

Tensor conv2d(const Tensor& x, const Tensor& kernel, Index stride, Index pad) {
  if (x.rank() != 4) throw ShapeError("conv2d expects N x C x H x W input");
  if (kernel.rank() != 4) throw ShapeError("conv2d expects O x C x kh x kw kernel");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Index O = kernel.dim(0), KC = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
  if (KC != C) throw ShapeError("conv2d: kernel channel count does not match input");
  Index Ho = (H + 2 * pad - KH) / stride + 1;
  Index Wo = (W + 2 * pad - KW) / stride + 1;
  if (H + 2 * pad < KH || W + 2 * pad < KW) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const Index ckk = C * KH * KW;
  const Index hw_out = Ho * Wo;

  // im2col per sample, cached for the backward pass.
  auto cols = std::make_shared<std::vector<MatrixRM>>();
  cols->reserve(static_cast<std::size_t>(N));
  const Array& vx = x.value();
  Array out(N * O * hw_out);
  auto kmat = as_matrix(kernel.value(), O, ckk);
  for (Index n = 0; n < N; ++n) {
    MatrixRM col = MatrixRM::Zero(ckk, hw_out);
    for (Index c = 0; c < C; ++c) {
      for (Index ki = 0; ki < KH; ++ki) {
        for (Index kj = 0; kj < KW; ++kj) {
          Index row = (c * KH + ki) * KW + kj;
          for (Index oy = 0; oy < Ho; ++oy) {
            Index iy = oy * stride + ki - pad;
            if (iy < 0 || iy >= H) continue;
            for (Index ox = 0; ox < Wo; ++ox) {
              Index ix = ox * stride + kj - pad;
              if (ix < 0 || ix >= W) continue;
              col(row, oy * Wo + ox) = vx[((n * C + c) * H + iy) * W + ix];
            }
          }
        }
      }
    }
    Eigen::Map<MatrixRM>(out.data() + n * O * hw_out, O, hw_out).noalias() = kmat * col;
    cols->push_back(std::move(col));
  }

  auto backward = [cols, N, C, H, W, O, KH, KW, Ho, Wo, stride, pad, ckk,
                   hw_out](TensorNode& self) {
    TensorNode* nx = self.parents[0].get();
    TensorNode* nk = self.parents[1].get();
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const MatrixRM> g(self.grad.data() + n * O * hw_out, O, hw_out);
      if (nk->requires_grad) {
        as_matrix(nk->grad, O, ckk).noalias() += g * (*cols)[static_cast<std::size_t>(n)].transpose();
      }
      if (nx->requires_grad) {
        MatrixRM dcol = as_matrix(nk->value, O, ckk).transpose() * g;
        for (Index c = 0; c < C; ++c) {
          for (Index ki = 0; ki < KH; ++ki) {
            for (Index kj = 0; kj < KW; ++kj) {
              Index row = (c * KH + ki) * KW + kj;
              for (Index oy = 0; oy < Ho; ++oy) {
                Index iy = oy * stride + ki - pad;
                if (iy < 0 || iy >= H) continue;
                for (Index ox = 0; ox < Wo; ++ox) {
                  Index ix = ox * stride + kj - pad;
                  if (ix < 0 || ix >= W) continue;
                  nx->grad[((n * C + c) * H + iy) * W + ix] += dcol(row, oy * Wo + ox);
                }
              }
            }
          }
        }
      }
    }
  };
  return make_op({N, O, Ho, Wo}, std::move(out), {x, kernel}, std::move(backward));
}

namespace {

struct LerpAxis {
  std::vector<Index> i0, i1;
  std::vector<double> w0, w1;
};

LerpAxis lerp_axis(Index in_n, Index out_n) {
  LerpAxis ax;
  ax.i0.resize(static_cast<std::size_t>(out_n));
  ax.i1.resize(static_cast<std::size_t>(out_n));
  ax.w0.resize(static_cast<std::size_t>(out_n));
  ax.w1.resize(static_cast<std::size_t>(out_n));
  const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  for (Index o = 0; o < out_n; ++o) {
    double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (s < 0.0) s = 0.0;
    double cap = static_cast<double>(in_n - 1);
    if (s > cap) s = cap;
    Index lo = static_cast<Index>(std::floor(s));
    Index hi = std::min<Index>(lo + 1, in_n - 1);
    double w1 = s - static_cast<double>(lo);
    ax.i0[static_cast<std::size_t>(o)] = lo;
    ax.i1[static_cast<std::size_t>(o)] = hi;
    ax.w1[static_cast<std::size_t>(o)] = w1;
    ax.w0[static_cast<std::size_t>(o)] = 1.0 - w1;
  }
  return ax;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, Index out_h, Index out_w) {
  if (x.rank() < 2) throw ShapeError("resize_bilinear expects rank >= 2");
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: target extents must be positive");
  Index H = x.shape()[x.shape().size() - 2];
  Index W = x.shape()[x.shape().size() - 1];
  Index lead = x.size() / (H * W);
  auto ay = std::make_shared<LerpAxis>(lerp_axis(H, out_h));
  auto axs = std::make_shared<LerpAxis>(lerp_axis(W, out_w));
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Array out(lead * out_h * out_w);
  const Array& vx = x.value();
  for (Index l = 0; l < lead; ++l) {
    const double* src = vx.data() + l * H * W;
    double* dst = out.data() + l * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const double* r0 = src + ay->i0[static_cast<std::size_t>(oy)] * W;
      const double* r1 = src + ay->i1[static_cast<std::size_t>(oy)] * W;
      double wy0 = ay->w0[static_cast<std::size_t>(oy)];
      double wy1 = ay->w1[static_cast<std::size_t>(oy)];
      for (Index ox = 0; ox < out_w; ++ox) {
        Index x0 = axs->i0[static_cast<std::size_t>(ox)];
        Index x1 = axs->i1[static_cast<std::size_t>(ox)];
        double wx0 = axs->w0[static_cast<std::size_t>(ox)];
        double wx1 = axs->w1[static_cast<std::size_t>(ox)];
        dst[oy * out_w + ox] =
            wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
      }
    }
  }
  auto backward = [ay, axs, lead, H, W, out_h, out_w](TensorNode& self) {
    TensorNode* p = self.parents[0].get();
    if (!p->requires_grad) return;
    for (Index l = 0; l < lead; ++l) {
      double* gsrc = p->grad.data() + l * H * W;
      const double* gdst = self.grad.data() + l * out_h * out_w;
      for (Index oy = 0; oy < out_h; ++oy) {
        Index y0 = ay->i0[static_cast<std::size_t>(oy)];
        Index y1 = ay->i1[static_cast<std::size_t>(oy)];
        double wy0 = ay->w0[static_cast<std::size_t>(oy)];
        double wy1 = ay->w1[static_cast<std::size_t>(oy)];
        for (Index ox = 0; ox < out_w; ++ox) {
          Index x0 = axs->i0[static_cast<std::size_t>(ox)];
          Index x1 = axs->i1[static_cast<std::size_t>(ox)];
          double wx0 = axs->w0[static_cast<std::size_t>(ox)];
          double wx1 = axs->w1[static_cast<std::size_t>(ox)];
          double g = gdst[oy * out_w + ox];
          gsrc[y0 * W + x0] += wy0 * wx0 * g;
          gsrc[y0 * W + x1] += wy0 * wx1 * g;
          gsrc[y1 * W + x0] += wy1 * wx0 * g;
          gsrc[y1 * W + x1] += wy1 * wx1 * g;
        }
      }
    }
  };
  return make_op(std::move(out_shape), std::move(out), {x}, std::move(backward));
}

// ---- composites ----

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  if (a.rank() != 2) throw ShapeError("l2_normalize_rows expects rank-2");
  Tensor n2 = sum(mul(a, a), 1, /*keepdim=*/true);
  return divide(a, sqrt(n2 + eps));
}

}  // namespace stx
