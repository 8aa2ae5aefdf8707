#include "stx/multiscale.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace stx {

namespace {

// Tile origins along one axis: 0, stride, ... with the last origin clamped
// so the final tile ends exactly at the image edge.
std::vector<Index> tile_origins(Index extent, Index crop, Index stride) {
  std::vector<Index> out;
  for (Index o = 0;; o += stride) {
    if (o + crop >= extent) {
      out.push_back(extent - crop);
      break;
    }
    out.push_back(o);
  }
  return out;
}

}  // namespace

std::vector<CropSpec> plan_crops(Index image_h, Index image_w, Index crop_size, Index stride,
                                 Rng& rng, CropMode mode, double global_coverage) {
  if (crop_size < 1) throw ShapeError("plan_crops: crop_size must be positive");
  if (crop_size > image_h || crop_size > image_w) {
    throw ShapeError("plan_crops: crop " + std::to_string(crop_size) + " larger than image " +
                     std::to_string(image_h) + "x" + std::to_string(image_w));
  }
  std::vector<CropSpec> crops;
  switch (mode) {
    case CropMode::Global: {
      if (global_coverage <= 0.0 || global_coverage > 1.0) {
        throw ValueError("plan_crops: global_coverage must lie in (0, 1]");
      }
      Index min_h = static_cast<Index>(std::ceil(global_coverage * static_cast<double>(image_h)));
      Index min_w = static_cast<Index>(std::ceil(global_coverage * static_cast<double>(image_w)));
      Index rect_h = min_h + rng.uniform_int(image_h - min_h + 1);
      Index rect_w = min_w + rng.uniform_int(image_w - min_w + 1);
      Index top = rng.uniform_int(image_h - rect_h + 1);
      Index left = rng.uniform_int(image_w - rect_w + 1);
      crops.push_back({top, top + rect_h, left, left + rect_w, crop_size, crop_size});
      break;
    }
    case CropMode::Local: {
      Index top = rng.uniform_int(image_h - crop_size + 1);
      Index left = rng.uniform_int(image_w - crop_size + 1);
      crops.push_back({top, top + crop_size, left, left + crop_size, crop_size, crop_size});
      break;
    }
    case CropMode::Tiling: {
      if (stride < 1) throw ShapeError("plan_crops: tiling stride must be positive");
      for (Index oy : tile_origins(image_h, crop_size, stride)) {
        for (Index ox : tile_origins(image_w, crop_size, stride)) {
          crops.push_back({oy, oy + crop_size, ox, ox + crop_size, crop_size, crop_size});
        }
      }
      break;
    }
  }
  return crops;
}

Tensor stitch(const std::vector<std::pair<CropSpec, Tensor>>& predictions, Index image_h,
              Index image_w) {
  if (predictions.empty()) throw CoverageError("stitch: no predictions supplied");
  Index channels = predictions.front().second.dim(0);
  Array value_sum = Array::Zero(channels * image_h * image_w);
  Array weight_sum = Array::Zero(image_h * image_w);
  for (const auto& [spec, pred] : predictions) {
    if (pred.rank() != 3 || pred.dim(0) != channels || pred.dim(1) != spec.height() ||
        pred.dim(2) != spec.width()) {
      throw ShapeError("stitch: prediction extents do not match the crop rect");
    }
    if (spec.top < 0 || spec.left < 0 || spec.bottom > image_h || spec.right > image_w) {
      throw ShapeError("stitch: crop rect outside the image");
    }
    const Array& pv = pred.value();
    Index rh = spec.height(), rw = spec.width();
    for (Index y = 0; y < rh; ++y) {
      for (Index x = 0; x < rw; ++x) {
        Index px = (spec.top + y) * image_w + (spec.left + x);
        weight_sum[px] += 1.0;
        for (Index c = 0; c < channels; ++c) {
          value_sum[c * image_h * image_w + px] += pv[(c * rh + y) * rw + x];
        }
      }
    }
  }
  Index uncovered = 0;
  Index first_y = -1, first_x = -1;
  for (Index y = 0; y < image_h; ++y) {
    for (Index x = 0; x < image_w; ++x) {
      if (weight_sum[y * image_w + x] == 0.0) {
        if (uncovered == 0) {
          first_y = y;
          first_x = x;
        }
        ++uncovered;
      }
    }
  }
  if (uncovered > 0) {
    throw CoverageError("stitch: " + std::to_string(uncovered) +
                        " uncovered pixels, first at (" + std::to_string(first_y) + ", " +
                        std::to_string(first_x) + ")");
  }
  for (Index c = 0; c < channels; ++c) {
    for (Index px = 0; px < image_h * image_w; ++px) {
      value_sum[c * image_h * image_w + px] /= weight_sum[px];
    }
  }
  return Tensor::from_array({channels, image_h, image_w}, std::move(value_sum));
}

Tensor fuse(const Tensor& local_pred, const Tensor& global_pred, const Tensor& scale_map) {
  if (local_pred.shape() != global_pred.shape()) {
    throw ShapeError("fuse: branch predictions must share a shape");
  }
  if (scale_map.rank() != 2 || local_pred.rank() != 3 ||
      scale_map.dim(0) != local_pred.dim(1) || scale_map.dim(1) != local_pred.dim(2)) {
    throw ShapeError("fuse: scale map extents must match the predictions");
  }
  return mul(scale_map, local_pred) + mul(1.0 - scale_map, global_pred);
}

ScaleAttention::ScaleAttention(Index in_ch, Index hidden_ch, Rng& rng)
    : c1(in_ch, hidden_ch, 3, 1, 1, rng), c2(hidden_ch, 1, 3, 1, 1, rng) {}

Tensor ScaleAttention::operator()(const Tensor& features, Index out_h, Index out_w) const {
  Tensor f = features;
  if (f.rank() == 3) f = reshape(f, {1, f.dim(0), f.dim(1), f.dim(2)});
  if (f.rank() != 4 || f.dim(0) != 1) {
    throw ShapeError("ScaleAttention expects one C x H x W feature map");
  }
  Tensor m = sigmoid(c2(relu(c1(f))));  // 1 x 1 x h x w
  Tensor up = resize_bilinear(m, out_h, out_w);
  return reshape(up, {out_h, out_w});
}

void ScaleAttention::collect(const std::string& prefix, NamedTensors& out) const {
  c1.collect(prefix + "/c1", out);
  c2.collect(prefix + "/c2", out);
}

Tensor apply_crop(const Tensor& image, const CropSpec& spec) {
  Tensor rect = crop_hw(image, spec.top, spec.bottom, spec.left, spec.right);
  if (spec.identity_resize()) return rect;
  return resize_bilinear(rect, spec.target_h, spec.target_w);
}

Tensor invert_resize(const Tensor& prediction, const CropSpec& spec) {
  if (prediction.dim(prediction.rank() - 2) == spec.height() &&
      prediction.dim(prediction.rank() - 1) == spec.width()) {
    return prediction;
  }
  return resize_bilinear(prediction, spec.height(), spec.width());
}

}  // namespace stx
