#include "semfield/metrics.hpp"

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace semfield {
namespace {

LabelMap map2(std::initializer_list<uint8_t> v) {
  LabelMap m(2, 2);
  m.labels = v;
  return m;
}

TEST(Miou, HandCases) {
  const auto a = map2({0, 1, 2, 3});
  EXPECT_EQ(miou(a, a, 4), 1.0);
  EXPECT_EQ(miou(map2({0, 0, 0, 0}), map2({1, 1, 1, 1}), 4), 0.0);
  EXPECT_EQ(miou(map2({0, 0, 1, 1}), map2({0, 1, 1, 1}), 2), 7.0 / 12.0);
}

TEST(Miou, SymmetricAndPermutationInvariant) {
  std::mt19937 g(0);
  LabelMap p(6, 6), q(6, 6);
  for (size_t i = 0; i < 36; ++i) {
    p.labels[i] = static_cast<uint8_t>(g() % 4);
    q.labels[i] = static_cast<uint8_t>(g() % 4);
  }
  EXPECT_DOUBLE_EQ(miou(p, q, 4), miou(q, p, 4));
  const uint8_t perm[4] = {2, 0, 3, 1};
  LabelMap pp = p, qq = q;
  for (auto& l : pp.labels) l = perm[l];
  for (auto& l : qq.labels) l = perm[l];
  EXPECT_DOUBLE_EQ(miou(p, q, 4), miou(pp, qq, 4));
}

TEST(Miou, AbsentClassesAreSkipped) {
  EXPECT_EQ(miou(map2({0, 0, 1, 1}), map2({0, 0, 1, 1}), 8), 1.0);
}

TEST(Confusion, CountsAndShapeCheck) {
  const auto c = confusion(map2({0, 0, 1, 1}), map2({0, 1, 1, 1}), 2);
  EXPECT_EQ(c.at(0, 0), 1);
  EXPECT_EQ(c.at(1, 0), 1);
  EXPECT_EQ(c.at(1, 1), 2);
  EXPECT_EQ(c.at(0, 1), 0);
  EXPECT_EQ(c.total(), 4);
  EXPECT_THROW(confusion(map2({0, 0, 0, 0}), LabelMap(3, 3), 2), std::invalid_argument);
  EXPECT_THROW(confusion(map2({0, 0, 0, 5}), map2({0, 0, 0, 0}), 2), std::out_of_range);
}

TEST(Psnr, KnownValues) {
  Tensor<float> a({1, 2, 3}), b({1, 2, 3});
  EXPECT_EQ(psnr(a, a), kPsnrIdentical);
  b = Tensor<float>::full({1, 2, 3}, 0.1f);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
  EXPECT_THROW(psnr(a, Tensor<float>({2, 2, 3})), ShapeError);
}

ViewSample view(const CameraPose& pose, int res, float depth, const std::function<float(int, int, int)>& color) {
  ViewSample v{pose, Tensor<float>({res, res, 3}), Tensor<float>::full({res, res}, depth), Tensor<float>::ones({res, res})};
  auto c = v.rgb.mutable_values();
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x)
      for (int ch = 0; ch < 3; ++ch) c[static_cast<size_t>((y * res + x) * 3 + ch)] = color(y, x, ch);
  return v;
}

TEST(Reproject, IdentityWarpIsExact) {
  const auto v = view({0.1, 0.2}, 16, 1.0f, [](int y, int x, int ch) { return 0.01f * (y * 7 + x * 3 + ch); });
  const auto r = reproject(v, v);
  EXPECT_LE(r.mean_error, 1e-6);
  EXPECT_EQ(r.valid_pixels, 256);
}

TEST(Reproject, ConstantColorAcrossViewsIsConsistent) {
  const auto a = view({0.0, 0.0}, 16, 1.0f, [](int, int, int) { return 0.4f; });
  const auto b = view({0.0, 0.1}, 16, 1.0f, [](int, int, int) { return 0.4f; });
  const auto r = reproject(a, b);
  EXPECT_GT(r.valid_pixels, 0);
  EXPECT_NEAR(r.mean_error, 0.0, 1e-6);
  const auto c = view({0.0, 0.1}, 16, 1.0f, [](int, int, int) { return 0.9f; });
  EXPECT_NEAR(reproject(a, c).mean_error, 0.5, 1e-6);
}

TEST(Reproject, TransparentViewsHaveNoValidPixels) {
  auto a = view({0.0, 0.0}, 8, 1.0f, [](int, int, int) { return 0.4f; });
  a.opacity = Tensor<float>({8, 8});
  EXPECT_THROW(reproject(a, a), std::runtime_error);
}

TEST(Reproject, ModelSelfConsistency) {
  const auto cfg = testing::tiny_generator();
  Rng rng(0);
  auto params = init_generator(cfg, rng);
  // Push density up so the toy field is opaque enough to measure.
  params.set("density.b", Tensor<float>({1}, {4.0f}));
  const auto zs = sample_latents(rng, 1, 8).reshaped({8}), zt = sample_latents(rng, 1, 8).reshaped({8});
  SamplingConfig s;
  s.samples = 8;
  const CameraPose p{0.05, 0.1};
  const auto self = reprojection_consistency(params, cfg, zs, zt, p, p, s, 16);
  EXPECT_LE(self.mean_error, 1e-6);
  EXPECT_GT(self.valid_pixels, 0);
}

}  // namespace
}  // namespace semfield
