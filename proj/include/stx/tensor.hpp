#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stx/errors.hpp"
#include "stx/rng.hpp"

namespace stx {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode;
}

// Dense float64 tensor with reverse-mode differentiation. Tensors are value
// handles onto shared graph nodes; every operation below is a pure function
// of its inputs and records a backward closure when any input is tracked.
// A differentiation graph must stay confined to one thread; the value buffers
// themselves are immutable after construction and safe to share for reading.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor eye(Index n);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor from_array(Shape shape, Array data, bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);
  static Tensor normal(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Index rank() const;
  Index size() const;
  Index dim(Index axis) const;

  const Array& value() const;
  double item() const;
  double at(std::initializer_list<Index> idx) const;

  bool requires_grad() const;
  bool has_grad() const;
  const Array& grad() const;
  void zero_grad();

  // Replaces the stored values of a leaf tensor (optimizer updates only).
  void set_value(const Array& v);

  // Same values, no graph history, no gradient tracking.
  Tensor detach() const;

  // Reverse pass from a scalar root. Leaf gradients accumulate across calls;
  // interior gradients are recomputed per pass.
  void backward() const;

  detail::TensorNode* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op(Shape shape, Array value, std::vector<Tensor> parents,
                        std::function<void(detail::TensorNode&)> backward);
};

namespace detail {
struct TensorNode {
  Shape shape;
  Array value;
  Array grad;  // size 0 until first needed
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
};
}  // namespace detail

// ---- elementwise arithmetic (trailing-dimension broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double s);
Tensor operator+(double s, const Tensor& a);
Tensor operator-(const Tensor& a, double s);
Tensor operator-(double s, const Tensor& a);
Tensor operator*(const Tensor& a, double s);
Tensor operator*(double s, const Tensor& a);
Tensor operator/(const Tensor& a, double s);
Tensor operator-(const Tensor& a);

// ---- elementwise functions ----
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double negative_slope);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, Index axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, Index axis, bool keepdim = false);
Tensor max(const Tensor& a);
Tensor max(const Tensor& a, Index axis, bool keepdim = false);
Tensor logsumexp(const Tensor& a, Index axis, bool keepdim = false);
Tensor softmax(const Tensor& a, Index axis);

// ---- shape / indexing ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank-2
Tensor take_rows(const Tensor& a, const std::vector<Index>& rows);  // rank-2
Tensor take_diag(const Tensor& a);  // rank-2 square -> rank-1
// Crop of the last two axes; bounds are [top, bottom) x [left, right).
Tensor crop_hw(const Tensor& a, Index top, Index bottom, Index left, Index right);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor dot(const Tensor& a, const Tensor& b);  // rank-1 . rank-1 -> scalar
// Solves A x = b for symmetric positive definite A (Cholesky). Differentiable
// through the factorization: dL/db = A^-1 g, dL/dA = -(A^-1 g) x^T.
Tensor solve_spd(const Tensor& a, const Tensor& b);

// ---- structured ops ----
// x: N x C x H x W, kernel: O x C x kh x kw, symmetric zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernel, Index stride, Index pad);
// Bilinear resample of the last two axes (half-pixel centers, clamped).
Tensor resize_bilinear(const Tensor& x, Index out_h, Index out_w);

// ---- composites ----
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);  // rank-2

}  // namespace stx
