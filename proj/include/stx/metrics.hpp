#pragma once

#include <map>
#include <string>
#include <vector>

#include "stx/image.hpp"

namespace stx {

struct SegScores {
  double pixel_acc = 0.0;
  double class_acc = 0.0;
  double mean_iou = 0.0;
};

// Named scalar metrics plus the number of samples they aggregate.
struct MetricReport {
  std::map<std::string, double> values;
  Index sample_count = 0;

  std::string to_json() const;
};

// Fraction of pixels whose max channel deviation is strictly below delta
// (8-bit scale).
double delta_accuracy(const ImageU8& pred, const ImageU8& gt, double delta);

// Root mean squared deviation over all pixels and channels (8-bit scale).
double rmse(const ImageU8& pred, const ImageU8& gt);

// pixel accuracy, per-class recall averaged over classes present in gt, and
// IoU averaged over classes present in either map.
SegScores seg_metrics(const LabelMap& pred, const LabelMap& gt);

// Total-variation distance between the prediction's class histogram and a
// reference distribution: 0.5 * sum_c |freq_c - ref_c|, in [0, 1].
double histogram_divergence(const LabelMap& pred, const std::vector<double>& ref_distribution);

}  // namespace stx
