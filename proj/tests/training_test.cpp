#include "semfield/archive.hpp"
#include "semfield/config.hpp"
#include "semfield/diffmath/gradcheck.hpp"
#include "semfield/training.hpp"

#include "support/fixtures.hpp"
#include "support/test_support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>

namespace semfield {
namespace {

using testing::random_tensor;

const double kLn2 = std::log(2.0);

DiscriminatorConfig small_d(int in_channels, int outputs) {
  DiscriminatorConfig c;
  c.resolution = 8;
  c.in_channels = in_channels;
  c.outputs = outputs;
  c.widths = {4, 5};
  return c;
}

ParameterSet<double> zeroed(ParameterSet<double> ps) {
  for (auto& p : ps) p.value = Tensor<double>(p.value.shape());
  return ps;
}

TEST(GanF, MatchesClosedForm) {
  EXPECT_DOUBLE_EQ(gan_f(0.0), -kLn2);
  for (double t : {-30.0, -2.5, -0.1, 0.7, 4.0, 30.0}) EXPECT_NEAR(gan_f(t), -std::log1p(std::exp(-t)), 1e-14) << t;
  EXPECT_NEAR(gan_f(-1000.0), -1000.0, 1e-9);
  EXPECT_EQ(gan_f(1000.0), -0.0);
  EXPECT_TRUE(std::isfinite(gan_f(-1e6)));
}

TEST(PoseDistance, SquaredAndPlain) {
  const Var<double> pred(Tensor<double>({2, 2}, {0.3, 0.4, 0.0, 0.0}));
  const Tensor<double> target({2, 2}, {0.0, 0.0, 0.0, 0.0});
  EXPECT_NEAR(pose_distance(pred, target, true).value().item(), (0.25 + 0.0) / 2, 1e-12);
  EXPECT_NEAR(pose_distance(pred, target, false).value().item(), (0.5 + 0.0) / 2, 1e-5);
  const auto t = pose_tensor<double>({CameraPose{0.1, -0.2}});
  EXPECT_EQ(t.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(t[0], 0.1);
  EXPECT_DOUBLE_EQ(t[1], -0.2);
}

struct Ds {
  DiscriminatorConfig c = small_d(3, 3);
  DiscriminatorConfig s = small_d(4 + 3, 1);
  ParameterSet<double> pc, ps;
  Tensor<double> real, fake, masks, sem, poses;
  Ds() {
    Rng rng(1);
    pc = init_discriminator(c, "dc.", rng).cast<double>();
    ps = init_discriminator(s, "ds.", rng).cast<double>();
    std::mt19937_64 g(2);
    real = random_tensor({2, 8, 8, 3}, g, 0, 1);
    fake = random_tensor({2, 8, 8, 3}, g, 0, 1);
    masks = random_tensor({2, 8, 8, 4}, g, 0, 1);
    sem = random_tensor({2, 8, 8, 4}, g, 0, 1);
    poses = random_tensor({2, 2}, g, -0.3, 0.3);
  }
};

TEST(Losses, ZeroWeightsAndNeutralCriticsGiveTwoLn2) {
  Ds d;
  LossWeights w{0, 0, 0, true};
  const auto pc = zeroed(d.pc), ps = zeroed(d.ps);
  Tape<double> tape(TapeMode::build_grad_graph);
  const BoundParameters<double> bc(pc, &tape), bs(ps, &tape);
  EXPECT_NEAR(loss_dc(bc, d.c, tape, d.real, d.fake, d.poses, w).total.value().item(), 2 * kLn2, 1e-12);
  EXPECT_NEAR(loss_ds(bs, d.s, tape, d.masks, d.real, d.sem, d.fake, w).total.value().item(), 2 * kLn2, 1e-12);

  // The generator side with the same neutral critics.
  const auto cfg = testing::tiny_generator();
  Rng rng(0);
  const auto gp = init_generator(cfg, rng).cast<double>();
  const BoundParameters<double> g(gp, &tape);
  SamplingConfig sampling;
  sampling.samples = 4;
  sampling.stratified = false;
  const auto zs = sample_latents(rng, 2, 8).cast<double>(), zt = sample_latents(rng, 2, 8).cast<double>();
  const std::vector<CameraPose> poses{{0.1, 0.2}, {0.0, -0.1}};
  const auto fake = render(g, cfg, Var<double>(zs), Var<double>(zt), poses, sampling, 8, nullptr);
  EXPECT_NEAR(loss_g(bc, d.c, bs, d.s, fake, poses, w).total.value().item(), 2 * kLn2, 1e-12);
}

TEST(Losses, DiscriminatorTermsMatchDirectEvaluation) {
  Ds d;
  LossWeights w{0, 0, 0, true};
  Tape<double> tape(TapeMode::build_grad_graph);
  const BoundParameters<double> bc(d.pc, &tape);
  const auto l = loss_dc(bc, d.c, tape, d.real, d.fake, d.poses, w);
  const BoundParameters<double> plain(d.pc, nullptr);
  const auto sr = d_color(plain, d.c, Var<double>(d.real)).score.value();
  const auto sf = d_color(plain, d.c, Var<double>(d.fake)).score.value();
  double real = 0, fake = 0;
  for (int b = 0; b < 2; ++b) {
    real += -gan_f(sr[b]) / 2;
    fake += -gan_f(-sf[b]) / 2;
  }
  EXPECT_NEAR(l.real, real, 1e-12);
  EXPECT_NEAR(l.fake, fake, 1e-12);
  EXPECT_NEAR(l.total.value().item(), real + fake, 1e-12);
}

TEST(Losses, R1MatchesFiniteDifferenceGradientNorm) {
  Ds d;
  LossWeights w{1.0, 1.0, 0, true};
  Tape<double> tape(TapeMode::build_grad_graph);
  const BoundParameters<double> bc(d.pc, &tape);
  const auto l = loss_dc(bc, d.c, tape, d.real, d.fake, d.poses, w);
  const BoundParameters<double> plain(d.pc, nullptr);
  const Tensor<double> g =
      numeric_gradient([&](const Var<double>& x) { return sum(d_color(plain, d.c, x).score); }, d.real);
  const double oracle = g.array().square().sum() / 2;
  EXPECT_NEAR(l.r1, oracle, 1e-6 * std::max(1.0, oracle));

  // D_s: the gradient covers both the semantic and the image half.
  const BoundParameters<double> bs(d.ps, &tape);
  const auto ls = loss_ds(bs, d.s, tape, d.masks, d.real, d.sem, d.fake, w);
  const BoundParameters<double> plain_s(d.ps, nullptr);
  const double gm = numeric_gradient([&](const Var<double>& m) { return sum(d_semantic(plain_s, d.s, m, Var<double>(d.real))); }, d.masks)
                        .array().square().sum();
  const double gi = numeric_gradient([&](const Var<double>& x) { return sum(d_semantic(plain_s, d.s, Var<double>(d.masks), x)); }, d.real)
                        .array().square().sum();
  EXPECT_NEAR(ls.r1, (gm + gi) / 2, 1e-6 * std::max(1.0, ls.r1));
}

TEST(Losses, R1PenaltyParameterGradientMatchesFiniteDifferences) {
  Ds d;
  LossWeights w{10.0, 10.0, 1.0, true};
  auto total = [&](Tape<double>& tape, const BoundParameters<double>& b) {
    return loss_dc(b, d.c, tape, d.real, d.fake, d.poses, w).total;
  };
  Tape<double> tape(TapeMode::build_grad_graph);
  const BoundParameters<double> bc(d.pc, &tape);
  const auto grads = tape.backward(total(tape, bc));
  std::mt19937_64 pick(1);
  const double h = 1e-6;
  for (size_t i = 0; i < d.pc.size(); ++i) {
    const Tensor<double> analytic = grads.or_zero(bc.at(i));
    const int64_t c = static_cast<int64_t>(pick() % static_cast<uint64_t>(d.pc[i].value.size()));
    auto at = [&](double delta) {
      ParameterSet<double> copy = d.pc;
      Tensor<double> v = copy[i].value.cast<double>();
      v.mutable_values()[static_cast<size_t>(c)] += delta;
      copy[i].value = v;
      Tape<double> t(TapeMode::build_grad_graph);
      const BoundParameters<double> b(copy, &t);
      return total(t, b).value().item();
    };
    const double numeric = (at(h) - at(-h)) / (2 * h);
    EXPECT_NEAR(analytic[c], numeric, 1e-5 * std::max(1.0, std::abs(numeric))) << d.pc[i].name;
  }
}

TEST(Losses, SemanticTermNeverReachesColorParameters) {
  Ds d;
  const auto cfg = testing::tiny_generator();
  Rng rng(0);
  const auto gp = init_generator(cfg, rng).cast<double>();
  Tape<double> tape;
  const BoundParameters<double> g(gp, &tape);
  const BoundParameters<double> bc(d.pc, nullptr), bs(d.ps, nullptr);
  SamplingConfig sampling;
  sampling.samples = 4;
  sampling.stratified = false;
  const std::vector<CameraPose> poses{{0.1, 0.2}, {0.0, -0.1}};
  const auto fake = render(g, cfg, Var<double>(sample_latents(rng, 2, 8).cast<double>()),
                           Var<double>(sample_latents(rng, 2, 8).cast<double>()), poses, sampling, 8, nullptr);
  const auto l = loss_g(bc, d.c, bs, d.s, fake, poses, LossWeights{}, GeneratorTerms{false, true, false});
  const auto grads = tape.backward(l.total);
  double color = 0, geometry = 0;
  for (size_t i = 0; i < gp.size(); ++i) {
    const double m = grads.or_zero(g.at(i)).array().abs().maxCoeff();
    (is_color_group(gp[i].group) ? color : geometry) += m;
  }
  EXPECT_EQ(color, 0.0);
  EXPECT_GT(geometry, 0.0);

  const auto lc = loss_g(bc, d.c, bs, d.s, fake, poses, LossWeights{}, GeneratorTerms{true, false, false});
  EXPECT_GT(lc.color, 0.0);
}

TEST(Adam, ZeroGradientLeavesParametersExactly) {
  ParameterSet<float> ps;
  ps.add("a", ParamGroup::trunk, Tensor<float>({3}, {1.f, -2.f, 3.f}));
  ps.add("b", ParamGroup::trunk, Tensor<float>({1}, {5.f}));
  Adam adam(AdamConfig{0.1, 0.0, 0.9, 1e-8}, ps);
  const Tensor<float> zero({3});
  adam.step(ps, {&zero, nullptr});
  EXPECT_TRUE(bit_equal(ps.get("a"), Tensor<float>({3}, {1.f, -2.f, 3.f})));
  EXPECT_EQ(ps.get("b")[0], 5.f);
}

TEST(Adam, FirstStepsMatchHandComputation) {
  ParameterSet<float> ps;
  ps.add("a", ParamGroup::trunk, Tensor<float>({2}, {0.f, 1.f}));
  const AdamConfig cfg{0.01, 0.5, 0.9, 1e-8};
  Adam adam(cfg, ps);
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {0, 1};
  const double gs[3][2] = {{1.0, -0.5}, {0.2, 0.3}, {-2.0, 0.0}};
  for (int t = 1; t <= 3; ++t) {
    const Tensor<float> g({2}, {static_cast<float>(gs[t - 1][0]), static_cast<float>(gs[t - 1][1])});
    adam.step(ps, {&g});
    for (int i = 0; i < 2; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * gs[t - 1][i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * gs[t - 1][i] * gs[t - 1][i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t)), vh = v[i] / (1 - std::pow(cfg.beta2, t));
      x[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      EXPECT_NEAR(ps.get("a")[i], x[i], 1e-6) << "step " << t;
    }
  }
  EXPECT_EQ(adam.steps(), 3);
}

TEST(Adam, SaveLoadRoundTrip) {
  ParameterSet<float> ps;
  ps.add("a", ParamGroup::trunk, Tensor<float>({2}, {0.f, 1.f}));
  Adam adam(AdamConfig{}, ps);
  const Tensor<float> g({2}, {0.5f, 0.25f});
  adam.step(ps, {&g});
  TensorArchive a;
  adam.save(a, "opt");
  Adam back(AdamConfig{}, ps);
  back.load(a, "opt", ps);
  EXPECT_EQ(back.steps(), 1);
  auto p1 = ps, p2 = ps;
  adam.step(p1, {&g});
  back.step(p2, {&g});
  EXPECT_TRUE(bit_equal(p1.get("a"), p2.get("a")));
}

TEST(RealData, BoxDownsampleAndOneHot) {
  DatasetSpec spec;
  spec.n_scenes = 2;
  spec.k = 4;
  spec.seed = 3;
  const Dataset data = make_dataset(spec);
  const RealData r = prepare_real_data(data, 8);
  ASSERT_EQ(r.images.size(), 2u);
  EXPECT_EQ(r.images[0].shape(), (Shape{8, 8, 3}));
  EXPECT_EQ(r.masks[0].shape(), (Shape{8, 8, 4}));
  const auto& img = data.records[1].image;
  for (int y : {0, 3, 7}) {
    for (int x : {0, 5}) {
      double acc = 0;
      for (int dy = 0; dy < 4; ++dy)
        for (int dx = 0; dx < 4; ++dx) acc += img[((y * 4 + dy) * 32 + x * 4 + dx) * 3 + 1];
      EXPECT_NEAR(r.images[1][(y * 8 + x) * 3 + 1], acc / 16, 1e-6);
      double mass = 0;
      for (int c = 0; c < 4; ++c) mass += r.masks[1][(y * 8 + x) * 4 + c];
      EXPECT_NEAR(mass, 1.0, 1e-6);
    }
  }
  const RealData full = prepare_real_data(data, 32);
  for (int64_t i = 0; i < full.masks[0].size(); ++i) {
    const float v = full.masks[0][i];
    EXPECT_TRUE(v == 0.f || v == 1.f);
  }
  EXPECT_THROW(prepare_real_data(data, 64), std::invalid_argument);
}

TEST(Schedule, StageAt) {
  TrainConfig t;
  t.resolution = 32;
  t.batch = 8;
  EXPECT_EQ(stage_at(t, 100), std::make_pair(32, 8));
  t.schedule = {{0, 8, 4}, {50, 16, 2}};
  EXPECT_EQ(stage_at(t, 49), std::make_pair(8, 4));
  EXPECT_EQ(stage_at(t, 50), std::make_pair(16, 2));
  EXPECT_EQ(stage_at(t, 5000), std::make_pair(16, 2));
}

Bytes checkpoint_bytes(const TrainState& s) { return checkpoint_archive(s).serialize(); }

TEST(Training, StepsAreDeterministic) {
  const Config cfg = testing::tiny_config();
  const Dataset data = make_dataset(cfg.dataset);
  TrainState a = init_training(cfg), b = init_training(cfg);
  const RealData real = prepare_real_data(data, 8);
  for (int i = 0; i < 3; ++i) {
    const auto ra = train_step(a, real), rb = train_step(b, real);
    EXPECT_EQ(ra.l_g, rb.l_g);
    EXPECT_EQ(ra.l_dc, rb.l_dc);
    EXPECT_TRUE(std::isfinite(ra.l_g) && std::isfinite(ra.l_dc) && std::isfinite(ra.l_ds));
  }
  EXPECT_EQ(checkpoint_bytes(a), checkpoint_bytes(b));
  EXPECT_EQ(a.iteration, 3);
  EXPECT_EQ(a.opt_g.steps(), 3);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  testing::TempDir dir;
  Config cfg = testing::tiny_config();
  const Dataset data = make_dataset(cfg.dataset);
  TrainState whole = init_training(cfg);
  train(whole, data, nullptr);

  cfg.train.iterations = 5;
  TrainState first = init_training(cfg);
  train(first, data, nullptr);
  save_checkpoint(first, dir / "half.fnrf");
  TrainState resumed = load_checkpoint(dir / "half.fnrf");
  EXPECT_EQ(resumed.iteration, 5);
  resumed.config.train.iterations = 10;
  train(resumed, data, nullptr);
  EXPECT_EQ(checkpoint_bytes(whole), checkpoint_bytes(resumed));
}

TEST(Training, StageChangeRebuildsDiscriminators) {
  Config cfg = testing::tiny_config();
  cfg.train.iterations = 3;
  cfg.train.schedule = {{0, 8, 2}, {2, 16, 2}};
  const Dataset data = make_dataset(cfg.dataset);
  TrainState s = init_training(cfg);
  std::vector<int> seen;
  train(s, data, [&](const StepRecord& r) {
    seen.push_back(r.resolution);
    return true;
  });
  EXPECT_EQ(seen, (std::vector<int>{8, 8, 16}));
  EXPECT_EQ(s.d_resolution, 16);
  EXPECT_EQ(s.opt_dc.steps(), 1);
  EXPECT_EQ(s.opt_g.steps(), 3);
}

TEST(Training, NonFiniteLossReportsComponents) {
  const Config cfg = testing::tiny_config();
  TrainState s = init_training(cfg);
  s.generator.set("density.b", Tensor<float>({1}, {std::nanf("")}));
  const RealData real = prepare_real_data(make_dataset(cfg.dataset), 8);
  try {
    train_step(s, real);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_FALSE(e.components.empty());
  }
}

TEST(Training, NdjsonRecord) {
  StepRecord r;
  r.iter = 4;
  r.l_dc = 1.5;
  r.l_g = 0.25;
  const auto j = nlohmann::json::parse(to_ndjson(r));
  for (const char* k : {"iter", "L_Dc", "L_Ds", "L_G", "pose_loss", "wall_ms"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["iter"], 4);
  EXPECT_EQ(j["L_Dc"], 1.5);
  EXPECT_EQ(to_ndjson(r).find('\n'), std::string::npos);
}

TEST(Checkpoint, ModelLoadMatchesState) {
  testing::TempDir dir;
  const Config cfg = testing::tiny_config();
  TrainState s = init_training(cfg);
  save_checkpoint(s, dir / "c.fnrf");
  const Model m = load_model(dir / "c.fnrf");
  EXPECT_EQ(m.generator.hash(), s.generator.hash());
  EXPECT_EQ(m.d_color.hash(), s.d_color.hash());
  // Inference never jitters; everything else is carried over exactly.
  EXPECT_FALSE(m.config.sampling.stratified);
  Config expected = s.config;
  expected.sampling.stratified = false;
  EXPECT_EQ(to_text(m.config), to_text(expected));
}

TEST(Checkpoint, CorruptionIsDetected) {
  testing::TempDir dir;
  TrainState s = init_training(testing::tiny_config());
  save_checkpoint(s, dir / "c.fnrf");
  const Bytes good = read_file(dir / "c.fnrf");
  auto kind_of = [&](Bytes b) {
    write_file_atomic(dir / "bad.fnrf", b);
    try {
      load_checkpoint(dir / "bad.fnrf");
    } catch (const ArchiveError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "corruption went unnoticed";
    return ArchiveError::Kind::io;
  };
  Bytes flipped = good;
  flipped[flipped.size() / 2] ^= 0x40;
  EXPECT_EQ(kind_of(flipped), ArchiveError::Kind::checksum);
  EXPECT_EQ(kind_of(Bytes(good.begin(), good.begin() + static_cast<long>(good.size() / 3))), ArchiveError::Kind::truncated);
  Bytes magic = good;
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), ArchiveError::Kind::bad_magic);
  EXPECT_THROW(load_checkpoint(dir / "missing.fnrf"), ArchiveError);
}

TEST(Archive, RoundTripKeepsOrderAndTypes) {
  TensorArchive a;
  a.set_meta("kind", "test");
  a.put("z", Tensor<float>({2}, {1.f, 2.f}));
  a.put("a", Tensor<double>({1, 1}, {3.0}));
  const Bytes bytes = a.serialize();
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FNRF");
  const TensorArchive b = TensorArchive::deserialize(bytes);
  EXPECT_EQ(b.meta("kind"), "test");
  EXPECT_EQ(b.tensors()[0].first, "z");
  EXPECT_EQ(b.f64("a")[0], 3.0);
  EXPECT_THROW(b.f32("a"), ArchiveError);
  EXPECT_THROW(b.f32("nope"), ArchiveError);
  EXPECT_EQ(b.serialize(), bytes);
}

TEST(Config, TextRoundTripIsExact) {
  Config c = testing::tiny_config();
  c.train.schedule = {{0, 8, 4}, {100, 16, 2}};
  c.train.weights.lambda_p = 0.1 + 0.2;
  c.camera.pose.sigma_yaw = 1.0 / 3.0;
  const std::string text = to_text(c);
  const Config back = parse_config(text);
  EXPECT_EQ(to_text(back), text);
  EXPECT_EQ(back.train.weights.lambda_p, c.train.weights.lambda_p);
  EXPECT_EQ(back.camera.pose.sigma_yaw, c.camera.pose.sigma_yaw);
  EXPECT_EQ(back.train.schedule.size(), 2u);
  EXPECT_EQ(back.train.schedule[1].resolution, 16);
}

TEST(Config, UnknownKeyAndBadValueNameTheKey) {
  try {
    parse_config("[train]\nbatchsize = 4\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("batchsize"), std::string::npos);
  }
  try {
    parse_config("[train]\nbatch = four\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
  EXPECT_THROW(parse_config("[generator]\nk = 1\n"), ConfigError);
}

}  // namespace
}  // namespace semfield
