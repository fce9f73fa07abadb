#pragma once

#include "semfield/diffmath/ops.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace semfield {

using ScalarFn = std::function<Var<double>(const Var<double>&)>;
using MultiScalarFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

struct GradCheckOptions {
  double step = 1e-6;
  /// Probe at most this many coordinates per input (0 = all of them), chosen
  /// uniformly with `seed`.
  int64_t max_coords = 0;
  uint64_t seed = 0;
};

/// Max over coordinates of |autodiff - central difference| / max(1, |central difference|).
/// Throws std::domain_error if either estimate is NaN.
double gradient_check(const ScalarFn& f, const Tensor<double>& x, GradCheckOptions options = {});
double gradient_check(const MultiScalarFn& f, const std::vector<Tensor<double>>& xs,
                      GradCheckOptions options = {});

/// Central-difference gradient of f at x (all coordinates).
Tensor<double> numeric_gradient(const ScalarFn& f, const Tensor<double>& x, double step = 1e-6);

}  // namespace semfield
