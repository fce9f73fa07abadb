#include "primitive_catalog.hpp"

#include "test_support.hpp"

namespace semfield::testing {

std::vector<PrimitiveProbe> primitive_probes(uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto t = [&rng](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor<double>(std::move(s), rng, lo, hi); };
  using V = Var<double>;
  using Vs = std::vector<V>;
  std::vector<PrimitiveProbe> p;
  auto unary = [&](std::string name, V (*op)(const V&), Tensor<double> x) {
    p.push_back({std::move(name), [op, seed](const Vs& v) { return project(op(v[0]), seed); }, {std::move(x)}});
  };
  p.push_back({"matmul", [seed](const Vs& v) { return project(matmul(v[0], v[1]), seed); }, {t({3, 4}), t({4, 2})}});
  p.push_back({"matmul_nt", [seed](const Vs& v) { return project(matmul(v[0], v[1], false, true), seed); }, {t({3, 4}), t({2, 4})}});
  p.push_back({"matmul_tn", [seed](const Vs& v) { return project(matmul(v[0], v[1], true, false), seed); }, {t({4, 3}), t({4, 2})}});
  p.push_back({"matmul_tt", [seed](const Vs& v) { return project(matmul(v[0], v[1], true, true), seed); }, {t({4, 3}), t({2, 4})}});
  p.push_back({"add", [seed](const Vs& v) { return project(add(v[0], v[1]), seed); }, {t({2, 3}), t({2, 3})}});
  p.push_back({"mul", [seed](const Vs& v) { return project(mul(v[0], v[1]), seed); }, {t({2, 3}), t({2, 3})}});
  p.push_back({"div", [seed](const Vs& v) { return project(div(v[0], v[1]), seed); }, {t({2, 3}), t({2, 3}, 0.5, 2.0)}});
  p.push_back({"broadcast", [seed](const Vs& v) { return project(broadcast_to(v[0], {4, 2, 3}), seed); }, {t({2, 1})}});
  p.push_back({"broadcast_binary", [seed](const Vs& v) { return project(mul(v[0], v[1]), seed); }, {t({4, 1, 3}), t({2, 1})}});
  p.push_back({"reshape", [seed](const Vs& v) { return project(reshape(v[0], {3, 4}), seed); }, {t({2, 6})}});
  p.push_back({"permute", [seed](const Vs& v) { return project(permute(v[0], {2, 0, 1}), seed); }, {t({2, 3, 4})}});
  p.push_back({"concat", [seed](const Vs& v) { return project(concat(Vs{v[0], v[1]}, 1), seed); }, {t({2, 3}), t({2, 2})}});
  p.push_back({"slice", [seed](const Vs& v) { return project(slice(v[0], 1, 1, 2), seed); }, {t({3, 4})}});
  p.push_back({"sum", [seed](const Vs& v) { return mul(sum(v[0]), sum(v[0])); }, {t({2, 3})}});
  p.push_back({"sum_axis", [seed](const Vs& v) { return project(sum(v[0], 1), seed); }, {t({2, 3, 2})}});
  p.push_back({"mean", [](const Vs& v) { return square(mean(v[0])); }, {t({3, 3})}});
  unary("sine", &sine<double>, t({5}, -3.0, 3.0));
  unary("softplus", &softplus<double>, t({5}, -4.0, 4.0));
  unary("exponential", &exp<double>, t({5}, -2.0, 2.0));
  unary("logarithm", &log<double>, t({5}, 0.2, 3.0));
  unary("square", &square<double>, t({5}));
  unary("sigmoid", &sigmoid<double>, t({5}, -3.0, 3.0));
  unary("softmax", &softmax<double>, t({3, 4}, -2.0, 2.0));
  unary("log_softmax", &log_softmax<double>, t({3, 4}, -2.0, 2.0));
  p.push_back({"leaky_relu", [seed](const Vs& v) { return project(leaky_relu(v[0], 0.2), seed); }, {t({6}, 0.05, 1.0)}});
  p.push_back({"leaky_relu_negative", [seed](const Vs& v) { return project(leaky_relu(v[0], 0.2), seed); }, {t({6}, -1.0, -0.05)}});
  p.push_back({"conv2d", [seed](const Vs& v) { return project(conv2d(v[0], v[1], {1, 1}), seed); }, {t({2, 2, 5, 5}), t({3, 2, 3, 3})}});
  p.push_back({"conv2d_strided", [seed](const Vs& v) { return project(conv2d(v[0], v[1], {2, 0}), seed); }, {t({1, 2, 6, 6}), t({2, 2, 2, 2})}});
  p.push_back({"avg_pool2d", [seed](const Vs& v) { return project(avg_pool2d(v[0], 2), seed); }, {t({1, 2, 4, 4})}});
  p.push_back({"grid_sample_3d", [seed](const Vs& v) { return project(grid_sample_3d(v[0], v[1]), seed); }, {t({4, 4, 4, 3}), t({5, 3}, -0.9, 0.9)}});
  p.push_back({"grid_sample_3d_tricubic", [seed](const Vs& v) { return project(grid_sample_3d(v[0], v[1], GridInterp::tricubic), seed); }, {t({5, 5, 5, 2}), t({4, 3}, -0.9, 0.9)}});
  p.push_back({"cumulative_product", [seed](const Vs& v) { return project(cumprod(v[0], false), seed); }, {t({2, 5}, 0.2, 1.5)}});
  p.push_back({"cumulative_product_exclusive", [seed](const Vs& v) { return project(cumprod(v[0], true), seed); }, {t({2, 5}, 0.2, 1.5)}});
  p.push_back({"film_sine", [seed](const Vs& v) { return project(film_sine(v[0], v[1], v[2], v[3]), seed); }, {t({2, 3, 4}), t({4}), t({2, 4}, 0.5, 3.0), t({2, 4})}});
  return p;
}

}  // namespace semfield::testing
