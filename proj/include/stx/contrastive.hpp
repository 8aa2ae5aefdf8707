#pragma once

#include <vector>

#include "stx/nn.hpp"
#include "stx/rng.hpp"
#include "stx/rsmi.hpp"
#include "stx/tensor.hpp"

namespace stx {

// Patch-contrastive batch under the cosine-similarity convention: all rows
// unit-normalized, negatives for query i never contain patch i.
struct ContrastiveBatch {
  Tensor queries;    // N x d   (output patches, `w-hat`)
  Tensor positives;  // N x d   (corresponding input patches, `z`)
  Tensor negatives;  // N x K x d (other input patches, `z-`)
  double tau = 0.07;
  double beta = 0.5;
  // N in the hard-negative denominator; 0 uses K (the per-query negative count).
  Index negative_count_override = 0;
};

// Throws ValueError on contract violations (non-unit rows, bad tau/K).
void validate_batch(const ContrastiveBatch& batch);

// Negatives for each query = the other queries' positives (K = N - 1).
Tensor internal_negatives(const Tensor& positives);

// Baseline: positive term included in the denominator.
Tensor info_nce(const ContrastiveBatch& batch);

// Decoupled variant: denominator averages the negatives only.
Tensor dce(const ContrastiveBatch& batch);

// Hard-negative importance weights: softmax over beta * z^T z- (max-subtracted).
Tensor vmf_weights(const Tensor& query_pos, const Tensor& negatives, double beta);

// Hard-negative decoupled loss: denominator N * sum_j w_j exp(sim_j / tau)
// with w from vmf_weights.
Tensor hdce(const ContrastiveBatch& batch);

// Two-layer projection head shared between the input and output features of
// one encoder layer; output rows are unit-normalized.
struct ProjectionHead {
  Linear fc1, fc2;

  ProjectionHead() = default;
  ProjectionHead(Index in_dim, Index hidden_dim, Index out_dim, Rng& rng);

  Tensor operator()(const Tensor& rows) const;  // n x in -> n x out, unit rows
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// Distinct spatial locations, uniform over the H*W grid.
std::vector<Index> sample_patch_indices(Index hw, Index count, Rng& rng);

// Rows of a C x H x W feature map at flat spatial indices -> n x C.
Tensor gather_patches(const Tensor& fmap, const std::vector<Index>& indices);

struct PatchSample {
  std::vector<Index> indices;
  EmbeddingBatch batch;
};

// Draws locations once; apply the same indices to the paired feature map via
// project_patches so input/output patches correspond spatially.
PatchSample sample_patches(const Tensor& fmap, const ProjectionHead& head, Index count,
                           Index layer_index, Rng& rng);
Tensor project_patches(const Tensor& fmap, const ProjectionHead& head,
                       const std::vector<Index>& indices);

}  // namespace stx
