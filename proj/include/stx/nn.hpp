#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stx/rng.hpp"
#include "stx/tensor.hpp"

namespace stx {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Convolution layer over N x C x H x W with bias.
struct Conv2d {
  Tensor w;  // out x in x k x k
  Tensor b;  // out
  Index stride = 1;
  Index pad = 0;

  Conv2d() = default;
  Conv2d(Index in_ch, Index out_ch, Index k, Index stride, Index pad, Rng& rng,
         bool zero_init = false);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// Fully connected layer over row-major batches (n x in -> n x out).
struct Linear {
  Tensor w;  // in x out
  Tensor b;  // out

  Linear() = default;
  Linear(Index in_dim, Index out_dim, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// Adam with per-parameter moment buffers.
class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps);

  void add(const Tensor& p);
  void add(const NamedTensors& params);
  void step();
  void zero_grads();

  std::int64_t iterations() const { return t_; }
  void collect_state(const std::string& prefix, NamedTensors& out) const;
  void load_state(const std::string& prefix,
                  const std::function<Tensor(const std::string&)>& lookup);

 private:
  struct Slot {
    Tensor param;
    Array m, v;
  };
  std::vector<Slot> slots_;
  double lr_ = 2e-4, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

}  // namespace stx
