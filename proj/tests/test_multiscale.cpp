#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stx/multiscale.hpp"
#include "support/fd.hpp"

using namespace stx;

namespace {

Array rasterize_coverage(const std::vector<CropSpec>& plans, Index h, Index w) {
  Array cover = Array::Zero(h * w);
  for (const auto& s : plans) {
    for (Index y = s.top; y < s.bottom; ++y) {
      for (Index x = s.left; x < s.right; ++x) cover[y * w + x] += 1.0;
    }
  }
  return cover;
}

}  // namespace

TEST_CASE("tiling 512/256/256 gives exactly 4 non-overlapping tiles") {
  Rng rng(1);
  auto plans = plan_crops(512, 512, 256, 256, rng, CropMode::Tiling);
  CHECK(plans.size() == 4);
  Array cover = rasterize_coverage(plans, 512, 512);
  CHECK(cover.minCoeff() == 1.0);
  CHECK(cover.maxCoeff() == 1.0);
}

TEST_CASE("tiling 512/256/128 gives 9 tiles with up to 4x interior coverage") {
  Rng rng(1);
  auto plans = plan_crops(512, 512, 256, 128, rng, CropMode::Tiling);
  CHECK(plans.size() == 9);
  Array cover = rasterize_coverage(plans, 512, 512);
  CHECK(cover.minCoeff() == 1.0);
  CHECK(cover.maxCoeff() == 4.0);
}

TEST_CASE("global crops are deterministic per seed and cover at least half") {
  Rng a(42), b(42);
  auto pa = plan_crops(100, 80, 32, 0, a, CropMode::Global, 0.5);
  auto pb = plan_crops(100, 80, 32, 0, b, CropMode::Global, 0.5);
  REQUIRE(pa.size() == 1);
  CHECK(pa[0].top == pb[0].top);
  CHECK(pa[0].left == pb[0].left);
  CHECK(pa[0].height() == pb[0].height());
  CHECK(pa[0].height() * 2 >= 100);
  CHECK(pa[0].width() * 2 >= 80);
  CHECK(pa[0].target_h == 32);
  for (int i = 0; i < 50; ++i) {
    auto p = plan_crops(100, 80, 32, 0, a, CropMode::Global, 0.5)[0];
    CHECK(p.top >= 0);
    CHECK(p.bottom <= 100);
    CHECK(p.left >= 0);
    CHECK(p.right <= 80);
  }
}

TEST_CASE("crops larger than the image are rejected") {
  Rng rng(1);
  CHECK_THROWS_AS((void)plan_crops(64, 64, 65, 1, rng, CropMode::Local), ShapeError);
  CHECK_THROWS_AS((void)plan_crops(64, 64, 16, 0, rng, CropMode::Tiling), ShapeError);
}

TEST_CASE("stitch of a single full-image crop is the identity") {
  Rng rng(3);
  Tensor img = Tensor::uniform({3, 8, 10}, rng, -1.0, 1.0);
  CropSpec full{0, 8, 0, 10, 8, 10};
  Tensor out = stitch({{full, img}}, 8, 10);
  for (Index i = 0; i < img.size(); ++i) CHECK(out.value()[i] == img.value()[i]);
}

TEST_CASE("two fully overlapping crops average") {
  Tensor a = Tensor::full({1, 4, 4}, 1.0);
  Tensor b = Tensor::full({1, 4, 4}, 3.0);
  CropSpec full{0, 4, 0, 4, 4, 4};
  Tensor out = stitch({{full, a}, {full, b}}, 4, 4);
  for (Index i = 0; i < out.size(); ++i) CHECK(out.value()[i] == doctest::Approx(2.0));
}

TEST_CASE("stitching restrictions of one image reconstructs it") {
  Rng rng(9);
  Tensor img = Tensor::uniform({3, 48, 48}, rng, -1.0, 1.0);
  Rng prng(1);
  auto plans = plan_crops(48, 48, 16, 8, prng, CropMode::Tiling);
  std::vector<std::pair<CropSpec, Tensor>> preds;
  for (const auto& s : plans) preds.emplace_back(s, crop_hw(img, s.top, s.bottom, s.left, s.right));
  Tensor out = stitch(preds, 48, 48);
  double max_dev = (out.value() - img.value()).abs().maxCoeff();
  CHECK(max_dev <= 1e-12);
}

TEST_CASE("constant-valued predictions over the 9-tile plan stitch to the constant") {
  Rng rng(1);
  auto plans = plan_crops(512, 512, 256, 128, rng, CropMode::Tiling);
  std::vector<std::pair<CropSpec, Tensor>> preds;
  for (const auto& s : plans) preds.emplace_back(s, Tensor::full({1, 256, 256}, 0.77));
  Tensor out = stitch(preds, 512, 512);
  CHECK(out.value().minCoeff() == doctest::Approx(0.77).epsilon(1e-15));
  CHECK(out.value().maxCoeff() == doctest::Approx(0.77).epsilon(1e-15));
}

TEST_CASE("stitch raises a coverage error naming the uncovered region") {
  Tensor tile = Tensor::full({1, 2, 2}, 1.0);
  CropSpec corner{0, 2, 0, 2, 2, 2};
  try {
    (void)stitch({{corner, tile}}, 4, 4);
    FAIL("expected CoverageError");
  } catch (const CoverageError& e) {
    std::string msg = e.what();
    CHECK(msg.find("uncovered") != std::string::npos);
    CHECK(msg.find("12") != std::string::npos);  // 16 - 4 covered
  }
}

TEST_CASE("fuse honors the mask bit-exactly at the extremes") {
  Rng rng(5);
  Tensor local = Tensor::uniform({3, 6, 6}, rng, -1.0, 1.0);
  Tensor global = Tensor::uniform({3, 6, 6}, rng, -1.0, 1.0);
  Tensor ones = Tensor::full({6, 6}, 1.0);
  Tensor zeros = Tensor::zeros({6, 6});
  Tensor f1 = fuse(local, global, ones);
  Tensor f0 = fuse(local, global, zeros);
  for (Index i = 0; i < local.size(); ++i) {
    CHECK(f1.value()[i] == local.value()[i]);
    CHECK(f0.value()[i] == global.value()[i]);
  }
  Tensor half = fuse(Tensor::full({1, 2, 2}, 2.0), Tensor::full({1, 2, 2}, 4.0),
                     Tensor::full({2, 2}, 0.5));
  for (Index i = 0; i < 4; ++i) CHECK(half.value()[i] == doctest::Approx(3.0));
}

TEST_CASE("fused output stays within the pointwise branch envelope") {
  Rng rng(11);
  Tensor local = Tensor::uniform({2, 5, 5}, rng, -1.0, 1.0);
  Tensor global = Tensor::uniform({2, 5, 5}, rng, -1.0, 1.0);
  Array mv(25);
  for (Index i = 0; i < 25; ++i) mv[i] = rng.uniform(0.0, 1.0);
  Tensor mask = Tensor::from_array({5, 5}, mv);
  Tensor out = fuse(local, global, mask);
  for (Index c = 0; c < 2; ++c) {
    for (Index i = 0; i < 25; ++i) {
      double lo = std::min(local.value()[c * 25 + i], global.value()[c * 25 + i]);
      double hi = std::max(local.value()[c * 25 + i], global.value()[c * 25 + i]);
      CHECK(out.value()[c * 25 + i] >= lo - 1e-15);
      CHECK(out.value()[c * 25 + i] <= hi + 1e-15);
    }
  }
  CHECK_THROWS_AS((void)fuse(local, global, Tensor::zeros({4, 4})), ShapeError);
}

TEST_CASE("scale attention emits values in (0, 1) at the requested extents") {
  Rng rng(21);
  ScaleAttention attn(8, 4, rng);
  Tensor feat = Tensor::uniform({8, 4, 4}, rng, -2.0, 2.0);
  Tensor m = attn(feat, 16, 12);
  CHECK(m.shape() == Shape{16, 12});
  CHECK(m.value().minCoeff() >= 0.0);
  CHECK(m.value().maxCoeff() <= 1.0);
}

TEST_CASE("zero-weight attention head yields a flat 0.5 map") {
  Rng rng(22);
  ScaleAttention attn(4, 4, rng);
  attn.c1.w.set_value(Array::Zero(attn.c1.w.size()));
  attn.c2.w.set_value(Array::Zero(attn.c2.w.size()));
  Tensor feat = Tensor::uniform({4, 3, 3}, rng, -1.0, 1.0);
  Tensor m = attn(feat, 6, 6);
  for (Index i = 0; i < m.size(); ++i) CHECK(m.value()[i] == doctest::Approx(0.5));
}

TEST_CASE("gradient flows from a fused-output loss into the attention head") {
  Rng rng(23);
  ScaleAttention attn(4, 4, rng);
  Tensor feat = Tensor::uniform({4, 4, 4}, rng, -1.0, 1.0);
  Tensor local = Tensor::uniform({3, 8, 8}, rng, -1.0, 1.0);
  Tensor global = Tensor::uniform({3, 8, 8}, rng, -1.0, 1.0);
  Tensor loss = sum(mul(fuse(local, global, attn(feat, 8, 8)), Tensor::full({3, 8, 8}, 0.3)));
  loss.backward();
  REQUIRE(attn.c1.w.has_grad());
  CHECK(attn.c1.w.grad().abs().maxCoeff() > 0.0);
  CHECK(attn.c2.w.has_grad());
}

TEST_CASE("fused multiscale forward gradients match finite differences") {
  Rng rng(29);
  ScaleAttention attn(2, 3, rng);
  Array f0(2 * 3 * 3), l0(2 * 6 * 6), g0(2 * 6 * 6);
  for (Index i = 0; i < f0.size(); ++i) f0[i] = rng.uniform(-1, 1);
  for (Index i = 0; i < l0.size(); ++i) l0[i] = rng.uniform(-1, 1);
  for (Index i = 0; i < g0.size(); ++i) g0[i] = rng.uniform(-1, 1);
  Array w1 = attn.c1.w.value(), w2 = attn.c2.w.value();

  auto f = [&](const std::vector<Array>& l, std::vector<Tensor>* tr) {
    ScaleAttention head = attn;  // shares parameter tensors
    head.c1.w.set_value(l[3]);
    head.c2.w.set_value(l[4]);
    Tensor feat = Tensor::from_array({2, 3, 3}, l[0], true);
    Tensor local = Tensor::from_array({2, 6, 6}, l[1], true);
    Tensor global = Tensor::from_array({2, 6, 6}, l[2], true);
    Tensor loss = sum(mul(fuse(local, global, head(feat, 6, 6)), local + 0.2));
    if (tr) {
      head.c1.w.zero_grad();
      head.c2.w.zero_grad();
      loss.backward();
      *tr = {feat, local, global, head.c1.w, head.c2.w};
    }
    return loss.item();
  };
  auto rep = stx::testing::check_gradients(f, {f0, l0, g0, w1, w2});
  CHECK_MESSAGE(rep.max_rel_err < 1e-4, "max_rel_err=", rep.max_rel_err);
}

TEST_CASE("random tiling plans always cover every pixel when stride <= crop") {
  Rng rng(2025);
  for (int rep = 0; rep < 20; ++rep) {
    Index h = 16 + rng.uniform_int(120);
    Index w = 16 + rng.uniform_int(120);
    Index crop = 4 + rng.uniform_int(std::min(h, w) - 3);
    Index stride = 1 + rng.uniform_int(crop);
    auto plans = plan_crops(h, w, crop, stride, rng, CropMode::Tiling);
    Array cover = rasterize_coverage(plans, h, w);
    CHECK(cover.minCoeff() >= 1.0);
  }
}
