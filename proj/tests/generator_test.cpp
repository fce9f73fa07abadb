#include "semfield/diffmath/gradcheck.hpp"
#include "semfield/generator.hpp"

#include "support/fixtures.hpp"
#include "support/test_support.hpp"

#include <gtest/gtest.h>

namespace semfield {
namespace {

using testing::random_tensor;

struct Field {
  GeneratorConfig cfg = testing::tiny_generator();
  ParameterSet<double> params;
  Tensor<double> x, d;

  explicit Field(GridInjection inj = GridInjection::color_branch) {
    cfg.grid_injection = inj;
    Rng rng(2);
    params = init_generator(cfg, rng).cast<double>();
    std::mt19937_64 g(4);
    x = random_tensor({1, 5, 3}, g, -0.15, 0.15);
    d = Tensor<double>({1, 5, 3}, std::vector<double>(15, 0.0));
    auto dv = d.mutable_values();
    for (int i = 0; i < 5; ++i) dv[static_cast<size_t>(i * 3 + 2)] = -1.0;
  }

  FieldSample<double> query(const BoundParameters<double>& p, const Var<double>& zs, const Var<double>& zt) const {
    return query_field(p, cfg, Var<double>(x), Var<double>(d), map_latent(p, cfg, zs, LatentKind::shape),
                       map_latent(p, cfg, zt, LatentKind::texture));
  }
};

Tensor<double> code(int dim, uint64_t seed) {
  std::mt19937_64 g(seed);
  return random_tensor({1, dim}, g);
}

TEST(Generator, InitIsDeterministic) {
  const auto cfg = testing::tiny_generator();
  Rng a(9), b(9), c(10);
  EXPECT_EQ(init_generator(cfg, a).hash(), init_generator(cfg, b).hash());
  Rng a2(9);
  EXPECT_NE(init_generator(cfg, a2).hash(), init_generator(cfg, c).hash());
}

TEST(Generator, ShapesAndNonNegativeDensity) {
  Field f;
  const BoundParameters<double> p(f.params, nullptr);
  const auto s = f.query(p, Var<double>(code(8, 1)), Var<double>(code(8, 2)));
  EXPECT_EQ(s.sigma.shape(), (Shape{1, 5}));
  EXPECT_EQ(s.color_pre.shape(), (Shape{1, 5, 3}));
  EXPECT_EQ(s.sem_logits.shape(), (Shape{1, 5, 4}));
  EXPECT_GE(s.sigma.value().array().minCoeff(), 0.0);
}

TEST(Generator, TextureCodeNeverReachesGeometry) {
  Field f;
  const BoundParameters<double> p(f.params, nullptr);
  const auto zs = Var<double>(code(8, 1));
  const auto a = f.query(p, zs, Var<double>(code(8, 2)));
  const auto b = f.query(p, zs, Var<double>(code(8, 3)));
  EXPECT_TRUE(bit_equal(a.sigma.value(), b.sigma.value()));
  EXPECT_TRUE(bit_equal(a.sem_logits.value(), b.sem_logits.value()));
  EXPECT_FALSE(bit_equal(a.color_pre.value(), b.color_pre.value()));

  Tape<double> tape;
  const BoundParameters<double> tracked(f.params, &tape);
  const Var<double> zt = tape.leaf(code(8, 2));
  const auto s = f.query(tracked, zs, zt);
  const auto g = tape.backward(sum(s.sigma) + sum(s.sem_logits));
  EXPECT_TRUE(!g.contains(zt) || g.at(zt).array().abs().maxCoeff() == 0.0);
  for (size_t i = 0; i < f.params.size(); ++i) {
    if (!is_color_group(f.params[i].group)) continue;
    const auto& v = tracked.at(i);
    EXPECT_TRUE(!g.contains(v) || g.at(v).array().abs().maxCoeff() == 0.0) << f.params[i].name;
  }
}

TEST(Generator, TrunkInjectionLetsGridShapeGeometry) {
  Field f(GridInjection::trunk_input);
  Tape<double> tape;
  const BoundParameters<double> p(f.params, &tape);
  const auto s = f.query(p, Var<double>(code(8, 1)), Var<double>(code(8, 2)));
  const auto g = tape.backward(sum(s.sigma));
  double grid_grad = 0;
  for (size_t i = 0; i < f.params.size(); ++i) {
    if (f.params[i].group == ParamGroup::feature_grid && g.contains(p.at(i)))
      grid_grad += g.at(p.at(i)).array().abs().sum();
  }
  EXPECT_GT(grid_grad, 0.0);
}

TEST(Generator, GradientsMatchFiniteDifferences) {
  Field f;
  const BoundParameters<double> p(f.params, nullptr);
  const Tensor<double> zt = code(8, 2);
  const double err = gradient_check(
      [&](const Var<double>& zs) {
        const auto s = f.query(p, zs, Var<double>(zt));
        return testing::project(s.sigma, 1) + testing::project(s.color_pre, 2) + testing::project(s.sem_logits, 3);
      },
      code(8, 1));
  EXPECT_LT(err, 1e-5);

  const double err_t = gradient_check(
      [&](const Var<double>& z) {
        return testing::project(f.query(p, Var<double>(code(8, 1)), z).color_pre, 7);
      },
      zt);
  EXPECT_LT(err_t, 1e-5);
}

TEST(Generator, ParameterGradientsMatchFiniteDifferences) {
  Field f;
  const auto zs = code(8, 1), zt = code(8, 2);
  auto objective = [&](const BoundParameters<double>& p) {
    const auto s = f.query(p, Var<double>(zs), Var<double>(zt));
    return testing::project(s.sigma, 1) + testing::project(s.color_pre, 2) + testing::project(s.sem_logits, 3);
  };
  Tape<double> tape;
  const BoundParameters<double> bound(f.params, &tape);
  const auto grads = tape.backward(objective(bound));
  std::mt19937_64 pick(0);
  const double h = 1e-6;
  for (size_t i = 0; i < f.params.size(); ++i) {
    const Tensor<double> analytic = grads.or_zero(bound.at(i));
    const int64_t n = f.params[i].value.size();
    for (int probe = 0; probe < 3; ++probe) {
      const int64_t c = static_cast<int64_t>(pick() % static_cast<uint64_t>(n));
      auto bumped = [&](double delta) {
        ParameterSet<double> copy = f.params;
        Tensor<double> v = copy[i].value.cast<double>();
        v.mutable_values()[static_cast<size_t>(c)] += delta;
        copy[i].value = v;
        return objective(BoundParameters<double>(copy, nullptr)).value().item();
      };
      const double numeric = (bumped(h) - bumped(-h)) / (2 * h);
      EXPECT_NEAR(analytic[c], numeric, 1e-5 * std::max(1.0, std::abs(numeric))) << f.params[i].name << "[" << c << "]";
    }
  }
}

TEST(Generator, InterpolateLatentsEndpointsAndRange) {
  const auto a = code(8, 1).cast<float>(), b = code(8, 2).cast<float>();
  EXPECT_TRUE(bit_equal(interpolate_latents(a, b, 0.0), a));
  EXPECT_TRUE(bit_equal(interpolate_latents(a, b, 1.0), b));
  const auto mid = interpolate_latents(a, b, 0.5);
  for (int64_t i = 0; i < a.size(); ++i) EXPECT_FLOAT_EQ(mid[i], 0.5f * a[i] + 0.5f * b[i]);
  EXPECT_THROW(interpolate_latents(a, b, 1.5), std::invalid_argument);
}

TEST(Generator, SampledLatentsAreStandardNormal) {
  Rng rng(0);
  const auto z = sample_latents(rng, 200, 64);
  EXPECT_EQ(z.shape(), (Shape{200, 64}));
  const double m = z.array().cast<double>().mean();
  const double var = (z.array().cast<double>() - m).square().mean();
  EXPECT_NEAR(m, 0.0, 3.0 / std::sqrt(12800.0));
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Generator, ConfigValidation) {
  auto cfg = testing::tiny_generator();
  cfg.trunk_width = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace semfield
