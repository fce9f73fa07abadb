#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace semfield {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised by any tensor operation whose operands have incompatible shapes.
/// The message names the operation and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& detail);
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Dense row-major array with shared, logically immutable storage.
///
/// Buffers are aligned to Eigen's widest packet so vectorized reductions split
/// the same way on every run; plain malloc alignment makes them vary.
///
/// Copies share the buffer. `mutable_values()` detaches the buffer first if it
/// is shared, so a tensor handed to someone else never changes under them.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  using Storage = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<Scalar> values);
  Tensor(Shape shape, Storage values);
  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape), Storage(values)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value);
  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar value) { return full(Shape{}, value); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_->size()); }
  /// Dimension `axis`; negative values count from the back.
  int64_t dim(int axis) const;

  const Scalar* data() const { return data_->data(); }
  std::span<const Scalar> values() const { return {data_->data(), data_->size()}; }
  std::span<Scalar> mutable_values();
  Scalar operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
  Scalar item() const;

  /// Same storage viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  template <typename Other>
  Tensor<Other> cast() const {
    typename Tensor<Other>::Storage out(data_->begin(), data_->end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const;
  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

  Eigen::Map<const ArrayX<Scalar>> array() const {
    return {data_->data(), static_cast<Eigen::Index>(data_->size())};
  }
  /// Rank-2 view.
  Eigen::Map<const RowMatrix<Scalar>> matrix() const;

 private:
  Shape shape_;
  std::shared_ptr<Storage> data_;
};

template <typename Scalar>
bool bit_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// FNV-1a over shape and raw bytes; used for determinism checks.
template <typename Scalar>
uint64_t content_hash(const Tensor<Scalar>& t);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace semfield
