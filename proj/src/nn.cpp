#include "stx/nn.hpp"

#include <cmath>

namespace stx {

Conv2d::Conv2d(Index in_ch, Index out_ch, Index k, Index stride_, Index pad_, Rng& rng,
               bool zero_init)
    : stride(stride_), pad(pad_) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
  if (zero_init) {
    w = Tensor::zeros({out_ch, in_ch, k, k}, /*requires_grad=*/true);
  } else {
    w = Tensor::uniform({out_ch, in_ch, k, k}, rng, -bound, bound, /*requires_grad=*/true);
  }
  b = Tensor::zeros({out_ch}, /*requires_grad=*/true);
}

Tensor Conv2d::operator()(const Tensor& x) const {
  Index out_ch = w.dim(0);
  return add(conv2d(x, w, stride, pad), reshape(b, {out_ch, 1, 1}));
}

void Conv2d::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "/w", w);
  out.emplace_back(prefix + "/b", b);
}

Linear::Linear(Index in_dim, Index out_dim, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  w = Tensor::uniform({in_dim, out_dim}, rng, -bound, bound, /*requires_grad=*/true);
  b = Tensor::zeros({out_dim}, /*requires_grad=*/true);
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, w), b); }

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "/w", w);
  out.emplace_back(prefix + "/b", b);
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::add(const Tensor& p) {
  if (!p.requires_grad()) throw ValueError("Adam: parameter does not require grad");
  slots_.push_back({p, Array::Zero(p.size()), Array::Zero(p.size())});
}

void Adam::add(const NamedTensors& params) {
  for (const auto& [name, p] : params) {
    (void)name;
    add(p);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Slot& s : slots_) {
    // A parameter outside the current graph has no grad buffer; treat as zero.
    static const Array empty;
    const Array& g = s.param.has_grad() ? s.param.grad() : empty;
    if (g.size() == 0) {
      s.m *= beta1_;
      s.v *= beta2_;
    } else {
      s.m = beta1_ * s.m + (1.0 - beta1_) * g;
      s.v = beta2_ * s.v + (1.0 - beta2_) * g.square();
    }
    Array update = (s.m / bc1) / ((s.v / bc2).sqrt() + eps_);
    s.param.set_value(s.param.value() - lr_ * update);
  }
}

void Adam::zero_grads() {
  for (Slot& s : slots_) s.param.zero_grad();
}

void Adam::collect_state(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const Slot& s = slots_[i];
    std::string base = prefix + "/" + std::to_string(i);
    out.emplace_back(base + "/m", Tensor::from_array(s.param.shape(), s.m));
    out.emplace_back(base + "/v", Tensor::from_array(s.param.shape(), s.v));
  }
  out.emplace_back(prefix + "/t",
                   Tensor::scalar(static_cast<double>(t_)));
}

void Adam::load_state(const std::string& prefix,
                      const std::function<Tensor(const std::string&)>& lookup) {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    std::string base = prefix + "/" + std::to_string(i);
    Tensor m = lookup(base + "/m");
    Tensor v = lookup(base + "/v");
    if (m.size() != slots_[i].param.size() || v.size() != slots_[i].param.size()) {
      throw IoError("Adam state size mismatch at " + base);
    }
    slots_[i].m = m.value();
    slots_[i].v = v.value();
  }
  t_ = static_cast<std::int64_t>(std::llround(lookup(prefix + "/t").item()));
}

}  // namespace stx
