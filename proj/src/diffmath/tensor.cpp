#include "semfield/diffmath/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace semfield {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("numel", "negative dimension in " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + shape_string(a) + " and " +
                            shape_string(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : std::invalid_argument(op + ": " + detail) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<Storage>(static_cast<size_t>(numel(shape_)), Scalar(0))) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values)
    : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Storage values)
    : shape_(std::move(shape)), data_(std::make_shared<Storage>(std::move(values))) {
  if (numel(shape_) != static_cast<int64_t>(data_->size())) {
    throw ShapeError("tensor", "shape " + shape_string(shape_) + " does not hold " +
                                   std::to_string(data_->size()) + " values");
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  std::fill(t.data_->begin(), t.data_->end(), value);
  return t;
}

template <typename Scalar>
int64_t Tensor<Scalar>::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("dim", "axis " + std::to_string(axis) + " out of range for " +
                                shape_string(shape_));
  }
  return shape_[static_cast<size_t>(a)];
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::mutable_values() {
  if (data_.use_count() > 1) data_ = std::make_shared<Storage>(*data_);
  return {data_->data(), data_->size()};
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (data_->size() != 1) throw ShapeError("item", "tensor " + shape_string(shape_) + " is not scalar");
  return (*data_)[0];
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  if (numel(shape) != size()) throw ShapeError("reshape", shape_, shape);
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

template <typename Scalar>
bool Tensor<Scalar>::all_finite() const {
  for (Scalar v : *data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> Tensor<Scalar>::matrix() const {
  if (rank() != 2) throw ShapeError("matrix", "expected rank 2, got " + shape_string(shape_));
  return {data_->data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
}

template <typename Scalar>
bool bit_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<size_t>(a.size())) == 0;
}

template <typename Scalar>
uint64_t content_hash(const Tensor<Scalar>& t) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (int64_t d : t.shape()) mix(&d, sizeof d);
  mix(t.data(), sizeof(Scalar) * static_cast<size_t>(t.size()));
  return h;
}

template class Tensor<float>;
template class Tensor<double>;
template bool bit_equal(const Tensor<float>&, const Tensor<float>&);
template bool bit_equal(const Tensor<double>&, const Tensor<double>&);
template uint64_t content_hash(const Tensor<float>&);
template uint64_t content_hash(const Tensor<double>&);

}  // namespace semfield
