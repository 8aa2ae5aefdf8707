#include "stx/contrastive.hpp"

#include <cmath>

namespace stx {

namespace {

void check_unit_rows(const Tensor& t, Index d, const char* what) {
  const Array& v = t.value();
  Index rows = t.size() / d;
  for (Index r = 0; r < rows; ++r) {
    double n2 = v.segment(r * d, d).square().sum();
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
      throw ValueError(std::string("contract violation: ") + what +
                       " rows must be unit-normalized");
    }
  }
}

// sims[i, k] = rows_a[i] . negatives[i, k]
Tensor per_query_sims(const Tensor& negatives, const Tensor& rows_a) {
  Index n = negatives.dim(0), d = negatives.dim(2);
  Tensor a = reshape(rows_a, {n, 1, d});
  return sum(mul(negatives, a), 2);
}

}  // namespace

void validate_batch(const ContrastiveBatch& batch) {
  if (batch.queries.rank() != 2 || batch.positives.rank() != 2 || batch.negatives.rank() != 3) {
    throw ShapeError("contrastive batch expects queries/positives N x d and negatives N x K x d");
  }
  Index n = batch.queries.dim(0), d = batch.queries.dim(1);
  if (batch.positives.dim(0) != n || batch.positives.dim(1) != d) {
    throw ShapeError("contrastive batch: positives shape mismatch");
  }
  if (batch.negatives.dim(0) != n || batch.negatives.dim(2) != d) {
    throw ShapeError("contrastive batch: negatives shape mismatch");
  }
  if (batch.negatives.dim(1) < 1) throw ValueError("contrastive batch: need K >= 1 negatives");
  if (!(batch.tau > 0.0)) throw ValueError("contrastive batch: tau must be positive");
  if (batch.beta < 0.0) throw ValueError("contrastive batch: beta must be nonnegative");
  check_unit_rows(batch.queries, d, "query");
  check_unit_rows(batch.positives, d, "positive");
  check_unit_rows(batch.negatives, d, "negative");
}

Tensor internal_negatives(const Tensor& positives) {
  if (positives.rank() != 2) throw ShapeError("internal_negatives expects N x d");
  Index n = positives.dim(0), d = positives.dim(1);
  if (n < 2) throw ValueError("internal_negatives: need at least 2 patches");
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(n * (n - 1)));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (j != i) rows.push_back(j);
    }
  }
  return reshape(take_rows(positives, rows), {n, n - 1, d});
}

Tensor info_nce(const ContrastiveBatch& batch) {
  validate_batch(batch);
  Index n = batch.queries.dim(0);
  Tensor pos = sum(mul(batch.queries, batch.positives), 1) * (1.0 / batch.tau);          // N
  Tensor nsim = per_query_sims(batch.negatives, batch.queries) * (1.0 / batch.tau);      // N x K
  Tensor pos_col = reshape(pos, {n, 1});
  Tensor m = maximum(max(nsim, 1, /*keepdim=*/true), pos_col);
  Tensor denom = log(exp(pos_col - m) + sum(exp(nsim - m), 1, /*keepdim=*/true)) + m;
  return mean(reshape(denom, {n}) - pos);
}

Tensor dce(const ContrastiveBatch& batch) {
  validate_batch(batch);
  Index k = batch.negatives.dim(1);
  Tensor pos = sum(mul(batch.queries, batch.positives), 1) * (1.0 / batch.tau);
  Tensor nsim = per_query_sims(batch.negatives, batch.queries) * (1.0 / batch.tau);
  Tensor lse = logsumexp(nsim, 1);  // N
  return mean(lse - std::log(static_cast<double>(k)) - pos);
}

Tensor vmf_weights(const Tensor& query_pos, const Tensor& negatives, double beta) {
  if (query_pos.rank() != 1 || negatives.rank() != 2 || negatives.dim(1) != query_pos.size()) {
    throw ShapeError("vmf_weights expects z (d) and negatives (K x d)");
  }
  if (beta < 0.0) throw ValueError("vmf_weights: beta must be nonnegative");
  Index d = query_pos.size();
  Tensor sims = reshape(matmul(negatives, reshape(query_pos, {d, 1})), {negatives.dim(0)});
  return softmax(sims * beta, 0);
}

Tensor hdce(const ContrastiveBatch& batch) {
  validate_batch(batch);
  Index k = batch.negatives.dim(1);
  Index n_eff = batch.negative_count_override > 0 ? batch.negative_count_override : k;
  Tensor pos = sum(mul(batch.queries, batch.positives), 1) * (1.0 / batch.tau);
  Tensor nsim = per_query_sims(batch.negatives, batch.queries) * (1.0 / batch.tau);  // N x K
  // Log of the self-normalized vMF importance weights, rowwise.
  Tensor psim = per_query_sims(batch.negatives, batch.positives) * batch.beta;  // N x K
  Tensor logw = psim - logsumexp(psim, 1, /*keepdim=*/true);
  Tensor log_e = logsumexp(nsim + logw, 1);  // N
  return mean(log_e + std::log(static_cast<double>(n_eff)) - pos);
}

ProjectionHead::ProjectionHead(Index in_dim, Index hidden_dim, Index out_dim, Rng& rng)
    : fc1(in_dim, hidden_dim, rng), fc2(hidden_dim, out_dim, rng) {}

Tensor ProjectionHead::operator()(const Tensor& rows) const {
  return l2_normalize_rows(fc2(relu(fc1(rows))));
}

void ProjectionHead::collect(const std::string& prefix, NamedTensors& out) const {
  fc1.collect(prefix + "/fc1", out);
  fc2.collect(prefix + "/fc2", out);
}

std::vector<Index> sample_patch_indices(Index hw, Index count, Rng& rng) {
  if (count < 1 || count > hw) {
    throw ValueError("sample_patch_indices: count must lie in [1, H*W]");
  }
  return rng.sample_without_replacement(hw, count);
}

Tensor gather_patches(const Tensor& fmap, const std::vector<Index>& indices) {
  if (fmap.rank() != 3) throw ShapeError("gather_patches expects C x H x W");
  Index c = fmap.dim(0), hw = fmap.dim(1) * fmap.dim(2);
  Tensor rows = transpose(reshape(fmap, {c, hw}));  // HW x C
  return take_rows(rows, indices);
}

PatchSample sample_patches(const Tensor& fmap, const ProjectionHead& head, Index count,
                           Index layer_index, Rng& rng) {
  Index hw = fmap.dim(1) * fmap.dim(2);
  PatchSample out;
  out.indices = sample_patch_indices(hw, count, rng);
  out.batch = EmbeddingBatch{project_patches(fmap, head, out.indices), layer_index, true};
  return out;
}

Tensor project_patches(const Tensor& fmap, const ProjectionHead& head,
                       const std::vector<Index>& indices) {
  return head(gather_patches(fmap, indices));
}

}  // namespace stx
