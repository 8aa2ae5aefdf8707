#pragma once

#include <utility>
#include <vector>

#include "stx/nn.hpp"
#include "stx/rng.hpp"
#include "stx/tensor.hpp"

namespace stx {

// Source-pixel crop rectangle plus the extent it is resampled to.
struct CropSpec {
  Index top = 0, bottom = 0, left = 0, right = 0;
  Index target_h = 0, target_w = 0;

  Index height() const { return bottom - top; }
  Index width() const { return right - left; }
  bool identity_resize() const { return target_h == height() && target_w == width(); }
};

enum class CropMode { Global, Local, Tiling };

// Global: one random rect covering at least `global_coverage` of each image
// dimension, resampled to crop_size^2. Local: one random crop_size^2 rect,
// no resampling. Tiling: a regular stride grid covering every pixel, last
// row/column clamped to the image edge.
std::vector<CropSpec> plan_crops(Index image_h, Index image_w, Index crop_size, Index stride,
                                 Rng& rng, CropMode mode, double global_coverage = 0.5);

// Overlap-averaged reassembly of per-crop predictions (each C x rect_h x
// rect_w, already mapped back to source extents). Throws CoverageError when
// any pixel is left uncovered.
Tensor stitch(const std::vector<std::pair<CropSpec, Tensor>>& predictions, Index image_h,
              Index image_w);

// Per-pixel convex combination: mask * local + (1 - mask) * global.
// mask is H x W in [0, 1]; predictions are C x H x W.
Tensor fuse(const Tensor& local_pred, const Tensor& global_pred, const Tensor& scale_map);

// Two-conv sigmoid head over global-branch features; emits the H x W scale
// map at the requested extents (feature-resolution prediction, bilinearly
// upsampled). Trains jointly with the generators.
struct ScaleAttention {
  Conv2d c1, c2;

  ScaleAttention() = default;
  ScaleAttention(Index in_ch, Index hidden_ch, Rng& rng);

  Tensor operator()(const Tensor& features, Index out_h, Index out_w) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// Extracts the crop described by `spec` from a C x H x W image and resamples
// it to the spec's target extents.
Tensor apply_crop(const Tensor& image, const CropSpec& spec);

// Maps a prediction at the spec's target extents back to the source rect size.
Tensor invert_resize(const Tensor& prediction, const CropSpec& spec);

}  // namespace stx
