#include "semfield/diffmath/gradcheck.hpp"

#include "support/primitive_catalog.hpp"
#include "support/test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace semfield {
namespace {

using testing::random_tensor;
using V = Var<double>;

TEST(Primitive, AnalyticValues) {
  EXPECT_EQ(sine(V(Tensor<double>::scalar(0.0))).value().item(), 0.0);
  EXPECT_NEAR(softplus(V(Tensor<double>::scalar(0.0))).value().item(), 0.693147, 1e-6);
  EXPECT_NEAR(exp(V(Tensor<double>::scalar(-2.0))).value().item(), 0.135335, 1e-6);
}

TEST(Primitive, ShapeMismatchNamesOpAndShapes) {
  const V a(Tensor<double>::zeros({2, 3}));
  const V b(Tensor<double>::zeros({4, 5}));
  try {
    (void)matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos);
  }
  EXPECT_THROW((void)add(a, b), ShapeError);
}

TEST(Primitive, SoftplusStableForLargeInputs) {
  const V x(Tensor<float>({3}, {-100.f, 0.f, 100.f}).cast<double>());
  const auto y = softplus(x).value();
  EXPECT_NEAR(y[0], 0.0, 1e-30);
  EXPECT_NEAR(y[2], 100.0, 1e-9);
  EXPECT_TRUE(softplus(Var<float>(Tensor<float>({1}, {200.f}))).value().all_finite());
}

TEST(Backward, SumOfSquares) {
  Tape<double> tape;
  const V x = tape.leaf(Tensor<double>({3}, {1, 2, 3}));
  const auto g = tape.backward(sum(square(x)));
  const auto& gx = g.at(x);
  EXPECT_DOUBLE_EQ(gx[0], 2);
  EXPECT_DOUBLE_EQ(gx[1], 4);
  EXPECT_DOUBLE_EQ(gx[2], 6);
}

TEST(Backward, SineAtZero) {
  Tape<double> tape;
  const V x = tape.leaf(Tensor<double>::scalar(0.0));
  EXPECT_DOUBLE_EQ(tape.backward(sine(x)).at(x).item(), 1.0);
}

TEST(Backward, LeakyReluNegativeBranch) {
  Tape<double> tape;
  const V x = tape.leaf(Tensor<double>::scalar(-1.0));
  EXPECT_DOUBLE_EQ(tape.backward(leaky_relu(x, 0.2)).at(x).item(), 0.2);
}

TEST(Backward, RejectsNonScalarRoot) {
  Tape<double> tape;
  const V x = tape.leaf(Tensor<double>::ones({3}));
  EXPECT_THROW((void)tape.backward(square(x)), TapeError);
}

TEST(Backward, SecondCallRejectedUntilReset) {
  Tape<double> tape;
  const V x = tape.leaf(Tensor<double>::ones({3}));
  const V y = sum(x);
  (void)tape.backward(y);
  EXPECT_THROW((void)tape.backward(y), TapeError);
  tape.reset();
  const V x2 = tape.leaf(Tensor<double>::ones({3}));
  EXPECT_NO_THROW((void)tape.backward(sum(x2)));
}

TEST(Backward, DeterministicForFixedSeed) {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tape<double> tape;
    const V w = tape.leaf(random_tensor({4, 4}, rng));
    const V x(random_tensor({3, 4}, rng));
    return tape.backward(sum(sine(matmul(x, w)))).at(w);
  };
  EXPECT_TRUE(bit_equal(run(), run()));
}

TEST(Backward, UnreachedLeafHasNoGradient) {
  Tape<double> tape;
  const V a = tape.leaf(Tensor<double>::ones({2}));
  const V b = tape.leaf(Tensor<double>::ones({2}));
  const auto g = tape.backward(sum(square(a)));
  EXPECT_TRUE(g.contains(a));
  EXPECT_FALSE(g.contains(b));
  EXPECT_THROW((void)g.at(b), TapeError);
}

TEST(Backward, DetachBlocksGradient) {
  Tape<double> tape;
  const V a = tape.leaf(Tensor<double>::ones({2}));
  const auto g = tape.backward(sum(mul(a, detach(a))));
  EXPECT_DOUBLE_EQ(g.at(a)[0], 1.0);
}

TEST(Backward, MixingTapesIsAnError) {
  Tape<double> t1, t2;
  const V a = t1.leaf(Tensor<double>::ones({2}));
  const V b = t2.leaf(Tensor<double>::ones({2}));
  EXPECT_THROW((void)add(a, b), TapeError);
}

TEST(GradientCheck, SineRandom) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({12}, rng, -3, 3);
  EXPECT_LE(gradient_check([](const V& v) { return sum(sine(v)); }, x), 1e-4);
}

TEST(GradientCheck, ConvRandom) {
  std::mt19937_64 rng(4);
  const auto x = random_tensor({1, 2, 5, 5}, rng);
  const auto k = random_tensor({2, 2, 3, 3}, rng);
  EXPECT_LE(gradient_check([](const std::vector<V>& v) { return sum(conv2d(v[0], v[1], {1, 1})); }, {x, k}), 1e-4);
}

TEST(GradientCheck, ConstantFunctionIsExact) {
  EXPECT_EQ(gradient_check([](const V&) { return V(Tensor<double>::scalar(3.0)); }, Tensor<double>::ones({4})), 0.0);
}

TEST(GradientCheck, NaNIsAnError) {
  EXPECT_THROW((void)gradient_check([](const V& v) { return sum(log(v)); }, Tensor<double>::full({2}, -1.0)),
               std::domain_error);
}

TEST(GradientCheck, EveryPrimitiveOverSeveralSeeds) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& probe : testing::primitive_probes(seed)) {
      EXPECT_LE(gradient_check(probe.fn, probe.inputs), 1e-4) << probe.name << " seed " << seed;
    }
  }
}

TEST(CumulativeProduct, HandlesZerosWithoutDivision) {
  const auto x = Tensor<double>({4}, {0.5, 0.0, 2.0, 3.0});
  for (bool exclusive : {false, true}) {
    EXPECT_LE(gradient_check([exclusive](const V& v) { return testing::project(cumprod(v, exclusive), 5); }, x), 1e-6);
  }
  const auto y = cumprod(V(x), true).value();
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
  EXPECT_DOUBLE_EQ(y[2], 0.0);
}

TEST(Conv2d, GemmMatchesDirectLoops) {
  std::mt19937_64 rng(9);
  for (Conv2dSpec spec : {Conv2dSpec{1, 1}, Conv2dSpec{2, 0}, Conv2dSpec{2, 1}}) {
    const auto x = random_tensor({2, 3, 7, 7}, rng);
    const auto w = random_tensor({4, 3, 3, 3}, rng);
    const auto a = kernels::conv2d_direct(x, w, spec);
    const auto b = kernels::conv2d_gemm(x, w, spec);
    ASSERT_EQ(a.shape(), b.shape());
    for (int64_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(GridSample, VertexAndConstantGrid) {
  std::mt19937_64 rng(2);
  const auto grid = random_tensor({3, 3, 3, 2}, rng);
  // (x, y, z) = (1, -1, 0) is the vertex at index z=1, y=0, x=2.
  const auto out = grid_sample_3d(V(grid), V(Tensor<double>({1, 3}, {1.0, -1.0, 0.0}))).value();
  EXPECT_NEAR(out[0], grid[((1 * 3 + 0) * 3 + 2) * 2 + 0], 1e-12);
  EXPECT_NEAR(out[1], grid[((1 * 3 + 0) * 3 + 2) * 2 + 1], 1e-12);

  const auto constant = Tensor<double>::full({4, 4, 4, 3}, 0.7);
  const auto pts = random_tensor({20, 3}, rng, -1.5, 1.5);
  for (GridInterp mode : {GridInterp::trilinear, GridInterp::tricubic}) {
    const auto y = grid_sample_3d(V(constant), V(pts), mode).value();
    for (int64_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 0.7, 1e-12);
  }
}

TEST(InputGradient, RequiresGradGraphMode) {
  Tape<double> tape;
  const V x = tape.leaf(Tensor<double>::ones({2}));
  EXPECT_THROW((void)tape.input_gradient(sum(x), x), TapeError);
}

TEST(InputGradient, SquaredNormPenalty) {
  Tape<double> tape(TapeMode::build_grad_graph);
  const auto xv = Tensor<double>({3}, {1, -2, 0.5});
  const V x = tape.leaf(xv);
  const V g = tape.input_gradient(sum(square(x)), x);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g.value()[i], 2 * xv[i]);
  const auto second = tape.backward(sum(square(g))).at(x);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(second[i], 8 * xv[i]);
}

TEST(InputGradient, LinearMapGivesConstantPenaltyGradient) {
  // out = sum(w ⊙ x): input gradient is w, independent of x, so the penalty
  // gradient reaching x is zero while w still gets 2w.
  for (double shift : {0.0, 3.0}) {
    Tape<double> tape(TapeMode::build_grad_graph);
    const V x = tape.leaf(Tensor<double>::full({3}, shift));
    const V w = tape.leaf(Tensor<double>({3}, {1, 2, 3}));
    const V g = tape.input_gradient(sum(mul(w, x)), x);
    const auto grads = tape.backward(sum(square(g)));
    EXPECT_FALSE(grads.contains(x) && grads.at(x).array().abs().maxCoeff() > 0);
    EXPECT_DOUBLE_EQ(grads.at(w)[2], 6.0);
  }
}

TEST(InputGradient, FirstOrderOnlyOpsAreRejected) {
  Tape<double> tape(TapeMode::build_grad_graph);
  const V x = tape.leaf(Tensor<double>::full({1, 3}, 0.5));
  EXPECT_THROW((void)tape.input_gradient(sum(cumprod(x, false)), x), TapeError);
}

/// Penalty ‖∇ₓ D(x)‖² for a two-layer conv net with leaky-relu.
double conv_penalty(const Tensor<double>& w1, const Tensor<double>& w2, const Tensor<double>& x) {
  Tape<double> tape(TapeMode::build_grad_graph);
  const V xi = tape.leaf(x);
  const V h = leaky_relu(conv2d(xi, V(w1), {1, 1}), 0.2);
  const V out = sum(avg_pool2d(conv2d(h, V(w2), {1, 1}), 2));
  return sum(square(tape.input_gradient(out, xi))).value().item();
}

TEST(InputGradient, ConvDiscriminatorDoubleBackpropMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  const auto x = random_tensor({2, 2, 4, 4}, rng);
  const auto w1 = random_tensor({3, 2, 3, 3}, rng);
  const auto w2 = random_tensor({1, 3, 3, 3}, rng);

  Tape<double> tape(TapeMode::build_grad_graph);
  const V xi = tape.leaf(x);
  const V a = tape.leaf(w1);
  const V b = tape.leaf(w2);
  const V out = sum(avg_pool2d(conv2d(leaky_relu(conv2d(xi, a, {1, 1}), 0.2), b, {1, 1}), 2));
  const V penalty = sum(square(tape.input_gradient(out, xi)));
  EXPECT_NEAR(penalty.value().item(), conv_penalty(w1, w2, x), 1e-12);
  const auto grads = tape.backward(penalty);

  const double h = 1e-6;
  double worst = 0;
  for (int which = 0; which < 2; ++which) {
    const Tensor<double>& base = which == 0 ? w1 : w2;
    const Tensor<double> analytic = grads.at(which == 0 ? a : b);
    for (int64_t i = 0; i < base.size(); ++i) {
      Tensor<double> up = base, down = base;
      up.mutable_values()[static_cast<size_t>(i)] += h;
      down.mutable_values()[static_cast<size_t>(i)] -= h;
      const double fd = which == 0 ? (conv_penalty(up, w2, x) - conv_penalty(down, w2, x)) / (2 * h)
                                   : (conv_penalty(w1, up, x) - conv_penalty(w1, down, x)) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic[i]) / std::max(1.0, std::abs(fd)));
    }
  }
  EXPECT_LE(worst, 1e-3);
}

}  // namespace
}  // namespace semfield
