#include "semfield/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace semfield {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  std::mt19937_64 engine;
  is >> engine;
  if (is.fail()) throw std::invalid_argument("malformed RNG state");
  engine_ = engine;
}

}  // namespace semfield
