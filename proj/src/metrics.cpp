#include "stx/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace stx {

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["sample_count"] = sample_count;
  for (const auto& [k, v] : values) j["metrics"][k] = v;
  return j.dump(2);
}

namespace {

void check_same_extents(const ImageU8& a, const ImageU8& b) {
  if (a.h != b.h || a.w != b.w || a.c != b.c) {
    throw ShapeError("image extents differ");
  }
}

}  // namespace

double delta_accuracy(const ImageU8& pred, const ImageU8& gt, double delta) {
  check_same_extents(pred, gt);
  Index hits = 0;
  const Index n = pred.h * pred.w;
  for (Index p = 0; p < n; ++p) {
    int dev = 0;
    for (Index ch = 0; ch < pred.c; ++ch) {
      int d = std::abs(static_cast<int>(pred.data[static_cast<std::size_t>(p * pred.c + ch)]) -
                       static_cast<int>(gt.data[static_cast<std::size_t>(p * pred.c + ch)]));
      dev = std::max(dev, d);
    }
    if (static_cast<double>(dev) < delta) ++hits;  // strict inequality
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double rmse(const ImageU8& pred, const ImageU8& gt) {
  check_same_extents(pred, gt);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    double d = static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pred.data.size()));
}

SegScores seg_metrics(const LabelMap& pred, const LabelMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("label map extents differ");
  if (pred.num_classes != gt.num_classes) throw ShapeError("class counts differ");
  const int c = gt.num_classes;
  std::vector<std::int64_t> confusion(static_cast<std::size_t>(c) * static_cast<std::size_t>(c), 0);
  for (std::size_t i = 0; i < gt.ids.size(); ++i) {
    confusion[static_cast<std::size_t>(gt.ids[i]) * c + static_cast<std::size_t>(pred.ids[i])]++;
  }
  SegScores s;
  std::int64_t correct = 0, total = static_cast<std::int64_t>(gt.ids.size());
  for (int k = 0; k < c; ++k) correct += confusion[static_cast<std::size_t>(k) * c + k];
  s.pixel_acc = static_cast<double>(correct) / static_cast<double>(total);

  double recall_sum = 0.0;
  int gt_classes = 0;
  double iou_sum = 0.0;
  int union_classes = 0;
  for (int k = 0; k < c; ++k) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += confusion[static_cast<std::size_t>(k) * c + j];
      col += confusion[static_cast<std::size_t>(j) * c + k];
    }
    std::int64_t diag = confusion[static_cast<std::size_t>(k) * c + k];
    if (row > 0) {
      recall_sum += static_cast<double>(diag) / static_cast<double>(row);
      ++gt_classes;
    }
    std::int64_t uni = row + col - diag;
    if (uni > 0) {
      iou_sum += static_cast<double>(diag) / static_cast<double>(uni);
      ++union_classes;
    }
  }
  s.class_acc = gt_classes > 0 ? recall_sum / gt_classes : 0.0;
  s.mean_iou = union_classes > 0 ? iou_sum / union_classes : 0.0;
  return s;
}

double histogram_divergence(const LabelMap& pred, const std::vector<double>& ref_distribution) {
  if (static_cast<int>(ref_distribution.size()) != pred.num_classes) {
    throw ShapeError("reference distribution class count differs");
  }
  double ref_sum = 0.0;
  for (double r : ref_distribution) ref_sum += r;
  if (std::abs(ref_sum - 1.0) > 1e-6) {
    throw ValueError("reference distribution must sum to 1");
  }
  std::vector<double> freq(ref_distribution.size(), 0.0);
  for (int id : pred.ids) freq[static_cast<std::size_t>(id)] += 1.0;
  for (double& f : freq) f /= static_cast<double>(pred.ids.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < freq.size(); ++k) acc += std::abs(freq[k] - ref_distribution[k]);
  return 0.5 * acc;
}

}  // namespace stx
