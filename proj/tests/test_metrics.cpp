#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stx/metrics.hpp"
#include "stx/rng.hpp"

using namespace stx;

namespace {

ImageU8 solid(Index h, Index w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  ImageU8 img{h, w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * 3))};
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

ImageU8 random_image(Index h, Index w, Rng& rng) {
  ImageU8 img{h, w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * 3))};
  for (auto& px : img.data) px = static_cast<std::uint8_t>(rng.uniform_int(256));
  return img;
}

LabelMap labels_from(std::initializer_list<int> ids, Index h, Index w, int classes) {
  LabelMap lm{h, w, classes, std::vector<int>(ids)};
  return lm;
}

}  // namespace

TEST_CASE("delta accuracy: identical, boundary, and partial cases") {
  ImageU8 a = solid(2, 2, 100, 100, 100);
  CHECK(delta_accuracy(a, a, 1.0) == doctest::Approx(1.0));
  CHECK(delta_accuracy(a, a, 1e-9) == doctest::Approx(1.0));

  // Uniform offset of exactly 5 with delta = 5: strict inequality fails.
  ImageU8 b = solid(2, 2, 105, 105, 105);
  CHECK(delta_accuracy(b, a, 5.0) == doctest::Approx(0.0));
  CHECK(delta_accuracy(b, a, 5.0001) == doctest::Approx(1.0));

  // One of four pixels deviating by 20, delta = 10.
  ImageU8 c = a;
  c.at(1, 1, 0) = 120;
  CHECK(delta_accuracy(c, a, 10.0) == doctest::Approx(0.75));
}

TEST_CASE("delta accuracy is monotone non-decreasing in delta") {
  Rng rng(6);
  ImageU8 p = random_image(8, 8, rng);
  ImageU8 g = random_image(8, 8, rng);
  double prev = -1.0;
  for (double d : {0.5, 2.0, 5.0, 10.0, 50.0, 200.0, 256.0}) {
    double acc = delta_accuracy(p, g, d);
    CHECK(acc >= prev);
    prev = acc;
  }
  CHECK(prev == doctest::Approx(1.0));
}

TEST_CASE("rmse: identical, constant offset, checkerboard") {
  ImageU8 a = solid(4, 4, 50, 60, 70);
  CHECK(rmse(a, a) == doctest::Approx(0.0));

  ImageU8 b = solid(4, 4, 57, 67, 77);
  CHECK(rmse(b, a) == doctest::Approx(7.0));

  // Checkerboard offsets {0, 10}: mean square = 50, rmse = sqrt(50).
  ImageU8 c = a;
  for (Index y = 0; y < 4; ++y) {
    for (Index x = 0; x < 4; ++x) {
      if ((x + y) % 2 == 0) {
        for (Index ch = 0; ch < 3; ++ch) c.at(y, x, ch) = static_cast<std::uint8_t>(c.at(y, x, ch) + 10);
      }
    }
  }
  CHECK(rmse(c, a) == doctest::Approx(std::sqrt(50.0)).epsilon(1e-12));
}

TEST_CASE("rmse satisfies the triangle bound on random triples") {
  Rng rng(17);
  for (int rep = 0; rep < 30; ++rep) {
    ImageU8 a = random_image(6, 6, rng);
    ImageU8 b = random_image(6, 6, rng);
    ImageU8 c = random_image(6, 6, rng);
    CHECK(rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12);
  }
}

TEST_CASE("seg metrics: perfect prediction scores ones") {
  LabelMap gt = labels_from({0, 1, 2, 0}, 2, 2, 3);
  auto s = seg_metrics(gt, gt);
  CHECK(s.pixel_acc == doctest::Approx(1.0));
  CHECK(s.class_acc == doctest::Approx(1.0));
  CHECK(s.mean_iou == doctest::Approx(1.0));
}

TEST_CASE("seg metrics: all-one-class prediction vs two equal classes") {
  LabelMap gt = labels_from({0, 0, 1, 1}, 2, 2, 2);
  LabelMap pred = labels_from({0, 0, 0, 0}, 2, 2, 2);
  auto s = seg_metrics(pred, gt);
  CHECK(s.pixel_acc == doctest::Approx(0.5));
  CHECK(s.class_acc == doctest::Approx(0.5));
  // IoU: class 0 -> 2/4, class 1 -> 0/2; mean = 0.25.
  CHECK(s.mean_iou == doctest::Approx(0.25));
}

TEST_CASE("seg metrics: disjoint prediction has zero mean IoU") {
  LabelMap gt = labels_from({0, 0, 1, 1}, 2, 2, 2);
  LabelMap pred = labels_from({1, 1, 0, 0}, 2, 2, 2);
  auto s = seg_metrics(pred, gt);
  CHECK(s.mean_iou == doctest::Approx(0.0));
  CHECK(s.pixel_acc == doctest::Approx(0.0));
}

TEST_CASE("seg metrics are invariant under a simultaneous class permutation") {
  Rng rng(23);
  const Index n = 10;
  LabelMap gt{n, n, 3, std::vector<int>(static_cast<std::size_t>(n * n))};
  LabelMap pred = gt;
  for (auto& v : gt.ids) v = static_cast<int>(rng.uniform_int(3));
  for (auto& v : pred.ids) v = static_cast<int>(rng.uniform_int(3));
  auto s1 = seg_metrics(pred, gt);
  int perm[3] = {2, 0, 1};
  LabelMap gt2 = gt, pred2 = pred;
  for (auto& v : gt2.ids) v = perm[v];
  for (auto& v : pred2.ids) v = perm[v];
  auto s2 = seg_metrics(pred2, gt2);
  CHECK(s1.pixel_acc == doctest::Approx(s2.pixel_acc).epsilon(1e-15));
  CHECK(s1.class_acc == doctest::Approx(s2.class_acc).epsilon(1e-15));
  CHECK(s1.mean_iou == doctest::Approx(s2.mean_iou).epsilon(1e-15));
}

TEST_CASE("seg metrics reject mismatched class counts") {
  LabelMap a = labels_from({0, 1}, 1, 2, 2);
  LabelMap b = labels_from({0, 1}, 1, 2, 3);
  CHECK_THROWS_AS((void)seg_metrics(a, b), ShapeError);
}

TEST_CASE("histogram divergence: identical, disjoint, arithmetic") {
  LabelMap both = labels_from({0, 0, 1, 1}, 2, 2, 2);
  CHECK(histogram_divergence(both, {0.5, 0.5}) == doctest::Approx(0.0));

  LabelMap only0 = labels_from({0, 0, 0, 0}, 2, 2, 2);
  CHECK(histogram_divergence(only0, {0.0, 1.0}) == doctest::Approx(1.0));

  CHECK(histogram_divergence(both, {0.75, 0.25}) == doctest::Approx(0.25));

  CHECK_THROWS_AS((void)histogram_divergence(both, {0.5, 0.4}), ValueError);
}

TEST_CASE("histogram divergence is symmetric and bounded") {
  Rng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    LabelMap a{4, 4, 3, std::vector<int>(16)};
    LabelMap b{4, 4, 3, std::vector<int>(16)};
    for (auto& v : a.ids) v = static_cast<int>(rng.uniform_int(3));
    for (auto& v : b.ids) v = static_cast<int>(rng.uniform_int(3));
    auto freq = [](const LabelMap& lm) {
      std::vector<double> f(3, 0.0);
      for (int id : lm.ids) f[static_cast<std::size_t>(id)] += 1.0 / 16.0;
      return f;
    };
    double dab = histogram_divergence(a, freq(b));
    double dba = histogram_divergence(b, freq(a));
    CHECK(dab == doctest::Approx(dba).epsilon(1e-12));
    CHECK(dab >= 0.0);
    CHECK(dab <= 1.0);
  }
}

TEST_CASE("metric report serializes to json") {
  MetricReport r;
  r.sample_count = 3;
  r.values["rmse"] = 7.5;
  r.values["pixel_acc"] = 0.875;
  std::string j = r.to_json();
  CHECK(j.find("\"rmse\"") != std::string::npos);
  CHECK(j.find("\"sample_count\": 3") != std::string::npos);
}
