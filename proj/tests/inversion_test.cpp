#include "semfield/inversion.hpp"
#include "semfield/metrics.hpp"

#include "support/fixtures.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace semfield {
namespace {

struct Toy {
  GeneratorConfig cfg = testing::tiny_generator();
  ParameterSet<float> params;
  SamplingConfig sampling;
  Tensor<float> zs, zt, zt2;
  CameraPose pose{0.1, 0.2};
  Toy() {
    Rng rng(11);
    params = init_generator(cfg, rng);
    zs = sample_latents(rng, 1, cfg.shape_dim).reshaped({cfg.shape_dim});
    zt = sample_latents(rng, 1, cfg.texture_dim).reshaped({cfg.texture_dim});
    zt2 = sample_latents(rng, 1, cfg.texture_dim).reshaped({cfg.texture_dim});
    sampling.samples = 6;
    sampling.stratified = false;
  }
  Render view(const Tensor<float>& s, const Tensor<float>& t, int res = 8) const {
    return render_view(params, cfg, s, t, pose, sampling, res);
  }
  InversionTask task_for(const Render& target, int steps) const {
    InversionTask task;
    task.mask = target.labels;
    task.pose = pose;
    task.steps = steps;
    task.seed = 3;
    return task;
  }
};

TEST(InvertSemantic, FixedPointStartsAtPerfectIoU) {
  Toy t;
  auto task = t.task_for(t.view(t.zs, t.zt), 3);
  task.init_z_s = t.zs;
  task.init_z_t = t.zt;
  const auto r = invert_semantic(t.params, t.cfg, t.sampling, task);
  ASSERT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(r.trace[0].miou, 1.0);
}

TEST(InvertSemantic, ZeroStepsReturnsInitialization) {
  Toy t;
  auto task = t.task_for(t.view(t.zs, t.zt), 0);
  task.init_z_s = t.zt2;
  const auto r = invert_semantic(t.params, t.cfg, t.sampling, task);
  EXPECT_TRUE(bit_equal(r.z_s, t.zt2));
  EXPECT_TRUE(r.trace.empty());
}

TEST(InvertSemantic, TextureCodeStaysFixed) {
  Toy t;
  auto task = t.task_for(t.view(t.zs, t.zt), 5);
  task.init_z_t = t.zt2;
  const auto r = invert_semantic(t.params, t.cfg, t.sampling, task);
  EXPECT_TRUE(bit_equal(r.z_t, t.zt2));
  for (size_t i = 0; i < r.trace.size(); ++i) EXPECT_EQ(r.trace[i].iter, static_cast<int>(i));
}

TEST(InvertSemantic, BackgroundTargetLossDecreases) {
  Toy t;
  InversionTask task;
  task.mask = LabelMap(8, 8, 0);
  task.pose = t.pose;
  task.steps = 51;
  const auto r = invert_semantic(t.params, t.cfg, t.sampling, task);
  EXPECT_LT(r.trace[50].loss, r.trace[0].loss);
  EXPECT_LE(r.final.loss, r.trace[50].loss);
}

TEST(InvertSemantic, NonFiniteLossAbortsWithTrace) {
  Toy t;
  auto task = t.task_for(t.view(t.zs, t.zt), 5);
  auto broken = t.params;
  broken.set("semantic.b", Tensor<float>({4}, {std::nanf(""), 0.f, 0.f, 0.f}));
  try {
    invert_semantic(broken, t.cfg, t.sampling, task);
    FAIL() << "expected InversionError";
  } catch (const InversionError& e) {
    EXPECT_NE(std::string(e.what()).find("not finite"), std::string::npos);
  }
}

TEST(InvertSemantic, CancellationStopsWithinOneIteration) {
  Toy t;
  auto task = t.task_for(t.view(t.zs, t.zt), 100);
  int seen = 0;
  InversionControl control;
  control.progress = [&](const TraceRecord&) { ++seen; };
  control.cancelled = [&] { return seen >= 3; };
  const auto r = invert_semantic(t.params, t.cfg, t.sampling, task, control);
  EXPECT_TRUE(r.cancelled);
  EXPECT_LE(r.trace.size(), 4u);
  EXPECT_GE(r.trace.size(), 3u);
}

TEST(InvertSemantic, RejectsBadTasks) {
  Toy t;
  auto task = t.task_for(t.view(t.zs, t.zt), 5);
  task.mask.labels[0] = 9;
  EXPECT_THROW(invert_semantic(t.params, t.cfg, t.sampling, task), std::out_of_range);
  task = t.task_for(t.view(t.zs, t.zt), 5);
  task.lr = 0;
  EXPECT_THROW(invert_semantic(t.params, t.cfg, t.sampling, task), std::invalid_argument);
}

TEST(InvertFull, InitAtTruthHasZeroLoss) {
  Toy t;
  const Render target = t.view(t.zs, t.zt);
  auto task = t.task_for(target, 2);
  task.image = target.rgb;
  task.soft_mask = target.sem_probs;
  task.init_z_s = t.zs;
  task.init_z_t = t.zt;
  const auto r = invert_full(t.params, t.cfg, t.sampling, task);
  EXPECT_NEAR(r.trace[0].loss, 0.0, 1e-6);
  ASSERT_TRUE(r.trace[0].psnr);
  EXPECT_GT(*r.trace[0].psnr, 60.0);
}

TEST(InvertFull, ZeroRgbWeightMatchesSemanticInversion) {
  Toy t;
  const Render target = t.view(t.zs, t.zt);
  auto task = t.task_for(target, 4);
  task.image = target.rgb;
  task.w_rgb = 0;
  task.init_z_t = t.zt2;
  task.w_sem = 1.0;
  const auto full = invert_full(t.params, t.cfg, t.sampling, task);
  const auto sem = invert_semantic(t.params, t.cfg, t.sampling, task);
  EXPECT_TRUE(bit_equal(full.z_s, sem.z_s));
  EXPECT_TRUE(bit_equal(full.z_t, t.zt2));
}

TEST(InvertFull, ImproveOverRandomInit) {
  Toy t;
  const Render target = t.view(t.zs, t.zt);
  auto task = t.task_for(target, 60);
  task.image = target.rgb;
  task.lr = 3e-2;
  const auto r = invert_full(t.params, t.cfg, t.sampling, task);
  EXPECT_LT(r.final.loss, r.trace[0].loss);
  EXPECT_GT(*r.final.psnr, *r.trace[0].psnr);
}

TEST(LocalEdit, UneditedMaskBarelyMovesCode) {
  Toy t;
  const Render base = t.view(t.zs, t.zt);
  const auto same = local_edit(t.params, t.cfg, t.sampling, t.zs, t.zt, base.labels, t.pose, 30, 1e-2, 0.1);
  EXPECT_TRUE(bit_equal(same.z_t, t.zt));
  LabelMap random(8, 8);
  std::mt19937 g(1);
  for (auto& l : random.labels) l = static_cast<uint8_t>(g() % 4);
  const auto other = local_edit(t.params, t.cfg, t.sampling, t.zs, t.zt, random, t.pose, 30, 1e-2, 0.1);
  EXPECT_TRUE(bit_equal(same.z_s, t.zs));
  const double moved = (same.z_s.array() - t.zs.array()).matrix().norm();
  const double moved_random = (other.z_s.array() - t.zs.array()).matrix().norm();
  EXPECT_GT(moved_random, 0.0);
  EXPECT_LE(moved * 10, moved_random);
  EXPECT_TRUE(bit_equal(other.z_t, t.zt));
}

TEST(LocalEdit, PaintedRegionGainsItsClass) {
  Toy t;
  const Render base = t.view(t.zs, t.zt);
  LabelMap edited = base.labels;
  // Paint a block with the class that is rarest in the current render.
  std::vector<int> counts(4, 0);
  for (uint8_t l : base.labels.labels) ++counts[l];
  const auto cls = static_cast<uint8_t>(std::min_element(counts.begin(), counts.end()) - counts.begin());
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) edited.at(y, x) = cls;
  const auto r = local_edit(t.params, t.cfg, t.sampling, t.zs, t.zt, edited, t.pose, 150, 5e-2, 0.1);
  EXPECT_LT(r.final.loss, r.trace[0].loss);
  const Render after = t.view(r.z_s, t.zt);
  double before_mass = 0, after_mass = 0;
  for (int y = 2; y < 6; ++y) {
    for (int x = 2; x < 6; ++x) {
      before_mass += base.sem_probs[(y * 8 + x) * 4 + cls];
      after_mass += after.sem_probs[(y * 8 + x) * 4 + cls];
    }
  }
  EXPECT_GT(after_mass, before_mass);
}

TEST(StyleTransfer, SemanticsIgnoreTextureAndOriginalIsIdentity) {
  Toy t;
  const std::vector<CameraPose> poses{{0.0, 0.0}, {0.1, -0.3}};
  const auto own = style_transfer(t.params, t.cfg, t.sampling, t.zs, t.zt, poses, 8);
  const auto swapped = style_transfer(t.params, t.cfg, t.sampling, t.zs, t.zt2, poses, 8);
  ASSERT_EQ(own.size(), 2u);
  for (size_t i = 0; i < poses.size(); ++i) {
    const auto direct = render_view(t.params, t.cfg, t.zs, t.zt, poses[i], t.sampling, 8);
    EXPECT_TRUE(bit_equal(own[i].rgb, direct.rgb));
    EXPECT_EQ(own[i].labels, swapped[i].labels);
    EXPECT_TRUE(bit_equal(own[i].depth, swapped[i].depth));
    EXPECT_FALSE(bit_equal(own[i].rgb, swapped[i].rgb));
  }
}

TEST(MorphGrid, CornersRowsAndSymmetry) {
  Toy t;
  Rng rng(5);
  const LatentPair a{t.zs, t.zt};
  const LatentPair b{sample_latents(rng, 1, 8).reshaped({8}), t.zt2};
  const int n = 3;
  const auto grid = morph_grid(t.params, t.cfg, t.sampling, a, b, n, t.pose, 8);
  ASSERT_EQ(grid.size(), 9u);
  EXPECT_TRUE(bit_equal(grid[0].rgb, t.view(a.z_s, a.z_t).rgb));
  EXPECT_TRUE(bit_equal(grid[8].rgb, t.view(b.z_s, b.z_t).rgb));
  for (int i = 0; i < n; ++i)
    for (int j = 1; j < n; ++j) EXPECT_EQ(grid[static_cast<size_t>(i * n + j)].labels, grid[static_cast<size_t>(i * n)].labels);
  const auto flipped = morph_grid(t.params, t.cfg, t.sampling, b, a, n, t.pose, 8);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto& x = grid[static_cast<size_t>(i * n + j)];
      const auto& y = flipped[static_cast<size_t>((n - 1 - i) * n + (n - 1 - j))];
      EXPECT_TRUE(bit_equal(x.rgb, y.rgb)) << i << "," << j;
    }
  }
  EXPECT_THROW(morph_grid(t.params, t.cfg, t.sampling, a, b, 1, t.pose, 8), std::invalid_argument);
}

TEST(Latents, ArchiveRoundTrip) {
  Toy t;
  const auto back = latents_from_archive(TensorArchive::deserialize(latents_archive({t.zs, t.zt}).serialize()));
  EXPECT_TRUE(bit_equal(back.z_s, t.zs));
  EXPECT_TRUE(bit_equal(back.z_t, t.zt));
}

TEST(Trace, NdjsonLine) {
  TraceRecord r{7, 0.5, 0.25, std::nullopt};
  const auto j = nlohmann::json::parse(to_ndjson(r));
  EXPECT_EQ(j["iter"], 7);
  EXPECT_EQ(j["miou"], 0.25);
  EXPECT_FALSE(j.contains("psnr"));
  r.psnr = 30.0;
  EXPECT_EQ(nlohmann::json::parse(to_ndjson(r))["psnr"], 30.0);
}

}  // namespace
}  // namespace semfield
