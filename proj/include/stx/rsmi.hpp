#pragma once

#include <utility>
#include <vector>

#include "stx/rng.hpp"
#include "stx/tensor.hpp"

namespace stx {

// A batch of patch embeddings drawn from one encoder layer.
struct EmbeddingBatch {
  Tensor vectors;  // N x d
  Index layer_index = 0;
  bool normalized = false;
};

// Paired samples (z_i, w_i): rows correspond.
struct PairedSamples {
  Tensor z;  // N x dz
  Tensor w;  // N x dw
};

struct RsmiConfig {
  double ridge = 1e-3;   // added to the Gram statistic for the solve
  double mix = 0.5;      // relative-divergence mixture ratio rho
  Index basis_count = 64;
  // Explicit bandwidths; 0 selects the median pairwise distance heuristic.
  double sigma_z = 0.0;
  double sigma_w = 0.0;
};

// Fitted least-squares density-ratio state. h_mat is the raw Gram statistic;
// the ridge enters only the solve for alpha.
struct KernelModel {
  Tensor centers_z;  // M x dz, constant
  Tensor centers_w;  // M x dw, differentiable view of the w samples
  double sigma_z = 1.0;
  double sigma_w = 1.0;
  Tensor alpha;  // M
  Tensor h_vec;  // M
  Tensor h_mat;  // M x M
  double ridge = 0.0;
  double mix = 0.5;
};

using LayerPairSet = std::vector<std::pair<EmbeddingBatch, EmbeddingBatch>>;

// Empirical product-of-marginals samples: re-pairs w rows by a uniform random
// derangement so no joint pair survives. Optionally reports the permutation.
PairedSamples make_product_samples(const PairedSamples& joint, Rng& rng,
                                   std::vector<Index>* permutation = nullptr);

// Median pairwise Euclidean distance between rows (the bandwidth heuristic).
double median_pairwise_distance(const Tensor& rows);

// Gaussian cross-kernel exp(-|a_i - b_j|^2 / (2 sigma^2)) as an (n x m) tensor.
Tensor gaussian_cross_kernel(const Tensor& a, const Tensor& b, double sigma);

KernelModel fit_rsmi(const PairedSamples& joint, const PairedSamples& product,
                     const RsmiConfig& cfg, Rng& rng);

// 2 a^T h - a^T H a - 1 on the fitted model.
Tensor rsmi_value(const KernelModel& model);

// Negative mean estimated rSMI across layers. Input-side embeddings are
// treated as constants; gradients reach only the output side.
Tensor ts_loss(const LayerPairSet& layers, const RsmiConfig& cfg, Rng& rng);

}  // namespace stx
