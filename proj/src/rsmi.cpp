#include "stx/rsmi.hpp"

#include <algorithm>
#include <cmath>

namespace stx {

PairedSamples make_product_samples(const PairedSamples& joint, Rng& rng,
                                   std::vector<Index>* permutation) {
  if (joint.z.rank() != 2 || joint.w.rank() != 2) {
    throw ShapeError("make_product_samples expects N x d sample matrices");
  }
  Index n = joint.z.dim(0);
  if (joint.w.dim(0) != n) throw ShapeError("make_product_samples: sample counts differ");
  if (n < 2) throw ValueError("make_product_samples: need at least 2 pairs");
  std::vector<Index> pi = rng.derangement(n);
  if (permutation) *permutation = pi;
  return {joint.z, take_rows(joint.w, pi)};
}

double median_pairwise_distance(const Tensor& rows) {
  if (rows.rank() != 2) throw ShapeError("median_pairwise_distance expects rank-2");
  Index n = rows.dim(0), d = rows.dim(1);
  if (n < 2) throw ValueError("median_pairwise_distance: need at least 2 rows");
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  const Array& v = rows.value();
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (Index k = 0; k < d; ++k) {
        double diff = v[i * d + k] - v[j * d + k];
        s += diff * diff;
      }
      dist.push_back(std::sqrt(s));
    }
  }
  std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  return dist[mid];
}

Tensor gaussian_cross_kernel(const Tensor& a, const Tensor& b, double sigma) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("gaussian_cross_kernel expects matching row dimensions");
  }
  if (!(sigma > 0.0)) throw NumericalError("gaussian_cross_kernel: bandwidth must be positive");
  Index m = b.dim(0);
  Tensor ra = sum(mul(a, a), 1, /*keepdim=*/true);            // n x 1
  Tensor rb = reshape(sum(mul(b, b), 1), {1, m});             // 1 x m
  Tensor sq = ra + rb - 2.0 * matmul(a, transpose(b));        // n x m
  return exp(sq * (-0.5 / (sigma * sigma)));
}

KernelModel fit_rsmi(const PairedSamples& joint, const PairedSamples& product,
                     const RsmiConfig& cfg, Rng& rng) {
  Index n = joint.z.dim(0);
  if (joint.w.dim(0) != n || product.z.dim(0) != n || product.w.dim(0) != n) {
    throw ShapeError("fit_rsmi: joint and product sample counts must match");
  }
  if (n < 2) throw ValueError("fit_rsmi: need at least 2 samples");
  if (cfg.mix < 0.0 || cfg.mix > 1.0) throw ValueError("fit_rsmi: mix must lie in [0, 1]");

  double sigma_z = cfg.sigma_z > 0.0 ? cfg.sigma_z : median_pairwise_distance(joint.z.detach());
  double sigma_w = cfg.sigma_w > 0.0 ? cfg.sigma_w : median_pairwise_distance(joint.w.detach());
  if (!(sigma_z > 0.0) || !(sigma_w > 0.0)) {
    throw NumericalError("fit_rsmi: degenerate input, all pairwise distances are zero");
  }

  Index m = std::min<Index>(cfg.basis_count, n);
  std::vector<Index> centers = rng.sample_without_replacement(n, m);

  KernelModel model;
  model.sigma_z = sigma_z;
  model.sigma_w = sigma_w;
  model.ridge = cfg.ridge;
  model.mix = cfg.mix;
  model.centers_z = take_rows(product.z, centers).detach();
  model.centers_w = take_rows(product.w, centers);

  Tensor phi_prod = mul(gaussian_cross_kernel(product.z.detach(), model.centers_z, sigma_z),
                        gaussian_cross_kernel(product.w, model.centers_w, sigma_w));
  Tensor phi_joint = mul(gaussian_cross_kernel(joint.z.detach(), model.centers_z, sigma_z),
                         gaussian_cross_kernel(joint.w, model.centers_w, sigma_w));

  model.h_vec = mean(phi_prod, 0);
  double inv_n = 1.0 / static_cast<double>(n);
  Tensor gram_prod = matmul(transpose(phi_prod), phi_prod) * (cfg.mix * inv_n);
  Tensor gram_joint = matmul(transpose(phi_joint), phi_joint) * ((1.0 - cfg.mix) * inv_n);
  model.h_mat = gram_prod + gram_joint;

  Tensor regularized = model.h_mat + Tensor::eye(m) * cfg.ridge;
  model.alpha = solve_spd(regularized, model.h_vec);
  return model;
}

Tensor rsmi_value(const KernelModel& model) {
  Index m = model.alpha.size();
  Tensor ha = reshape(matmul(model.h_mat, reshape(model.alpha, {m, 1})), {m});
  return 2.0 * dot(model.alpha, model.h_vec) - dot(model.alpha, ha) - 1.0;
}

Tensor ts_loss(const LayerPairSet& layers, const RsmiConfig& cfg, Rng& rng) {
  if (layers.empty()) throw ValueError("ts_loss: empty layer set");
  Tensor acc;
  for (const auto& [in_batch, out_batch] : layers) {
    if (in_batch.vectors.dim(0) != out_batch.vectors.dim(0) ||
        in_batch.vectors.dim(1) != out_batch.vectors.dim(1)) {
      throw ShapeError("ts_loss: paired batches must share N and d");
    }
    // The input image is fixed; its embeddings carry no gradient.
    PairedSamples pair{in_batch.vectors.detach(), out_batch.vectors};
    PairedSamples product = make_product_samples(pair, rng);
    KernelModel model = fit_rsmi(pair, product, cfg, rng);
    Tensor v = rsmi_value(model);
    acc = acc.defined() ? acc + v : v;
  }
  return neg(acc * (1.0 / static_cast<double>(layers.size())));
}

}  // namespace stx
