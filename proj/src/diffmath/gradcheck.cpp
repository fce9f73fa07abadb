#include "semfield/diffmath/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace semfield {
namespace {

double evaluate(const MultiScalarFn& f, const std::vector<Tensor<double>>& xs) {
  std::vector<Var<double>> vars;
  vars.reserve(xs.size());
  for (const auto& x : xs) vars.emplace_back(x);
  const Var<double> y = f(vars);
  if (y.value().size() != 1) throw std::invalid_argument("gradient_check: function must return a scalar");
  return y.value().item();
}

std::vector<int64_t> probe_indices(int64_t n, const GradCheckOptions& options, std::mt19937_64& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (options.max_coords > 0 && options.max_coords < n) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<size_t>(options.max_coords));
  }
  return idx;
}

}  // namespace

double gradient_check(const MultiScalarFn& f, const std::vector<Tensor<double>>& xs, GradCheckOptions options) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& x : xs) leaves.push_back(tape.leaf(x));
  const Var<double> y = f(leaves);
  // A result that does not depend on any input has zero gradient everywhere.
  const Gradients<double> grads = y.tracked() ? tape.backward(y) : Gradients<double>{};

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  std::vector<Tensor<double>> probe = xs;
  for (size_t k = 0; k < xs.size(); ++k) {
    const Tensor<double> analytic = grads.or_zero(leaves[k]);
    for (int64_t i : probe_indices(xs[k].size(), options, rng)) {
      auto values = probe[k].mutable_values();
      const double original = values[static_cast<size_t>(i)];
      values[static_cast<size_t>(i)] = original + options.step;
      const double up = evaluate(f, probe);
      values = probe[k].mutable_values();
      values[static_cast<size_t>(i)] = original - options.step;
      const double down = evaluate(f, probe);
      values = probe[k].mutable_values();
      values[static_cast<size_t>(i)] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double auto_diff = analytic[i];
      if (std::isnan(numeric) || std::isnan(auto_diff)) {
        throw std::domain_error("gradient_check: NaN gradient estimate at coordinate " + std::to_string(i));
      }
      worst = std::max(worst, std::abs(auto_diff - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

double gradient_check(const ScalarFn& f, const Tensor<double>& x, GradCheckOptions options) {
  return gradient_check([&f](const std::vector<Var<double>>& v) { return f(v[0]); },
                        std::vector<Tensor<double>>{x}, options);
}

Tensor<double> numeric_gradient(const ScalarFn& f, const Tensor<double>& x, double step) {
  Tensor<double> probe = x;
  Tensor<double> out(x.shape());
  auto dst = out.mutable_values();
  for (int64_t i = 0; i < x.size(); ++i) {
    auto values = probe.mutable_values();
    const double original = values[static_cast<size_t>(i)];
    values[static_cast<size_t>(i)] = original + step;
    const double up = f(Var<double>(probe)).value().item();
    values = probe.mutable_values();
    values[static_cast<size_t>(i)] = original - step;
    const double down = f(Var<double>(probe)).value().item();
    values = probe.mutable_values();
    values[static_cast<size_t>(i)] = original;
    dst[static_cast<size_t>(i)] = (up - down) / (2.0 * step);
  }
  return out;
}

}  // namespace semfield
