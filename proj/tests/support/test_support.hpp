#pragma once

#include "semfield/diffmath/ops.hpp"

#include <random>

namespace semfield::testing {

template <typename S = double>
Tensor<S> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<S> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<S>(u(rng));
  return Tensor<S>(std::move(shape), std::move(v));
}

/// sum(y ⊙ r) for a fixed random r: a scalar whose gradient exercises every
/// output coordinate with a distinct weight.
template <typename S>
Var<S> project(const Var<S>& y, uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  return sum(mul(y, Var<S>(random_tensor<S>(y.shape(), rng))));
}

}  // namespace semfield::testing
