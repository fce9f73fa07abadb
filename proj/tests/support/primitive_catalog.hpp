#pragma once

#include "semfield/diffmath/gradcheck.hpp"

#include <string>
#include <vector>

namespace semfield::testing {

/// One differentiable probe per primitive: a scalar function and the random
/// inputs it is checked at.
struct PrimitiveProbe {
  std::string name;
  MultiScalarFn fn;
  std::vector<Tensor<double>> inputs;
};

std::vector<PrimitiveProbe> primitive_probes(uint64_t seed);

}  // namespace semfield::testing
