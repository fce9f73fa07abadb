#pragma once

#include "semfield/diffmath/tensor.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace semfield {

enum class TapeMode {
  first_order,       ///< gradients are plain tensors
  build_grad_graph,  ///< gradients are recorded nodes, so they can be differentiated again
};

/// Misuse of the autodiff engine (double backward, wrong mode, mixed tapes).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename Scalar>
class Tape;

/// Handle to a value. Untracked vars are constants; tracked vars refer to a
/// node on a tape and participate in differentiation.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<Scalar> constant) : value_(std::move(constant)) {}

  const Tensor<Scalar>& value() const { return value_; }
  const Shape& shape() const { return value_.shape(); }
  int rank() const { return value_.rank(); }
  int64_t dim(int axis) const { return value_.dim(axis); }
  bool tracked() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape<Scalar>* tape() const { return tape_; }

 private:
  friend class Tape<Scalar>;
  Var(Tape<Scalar>* tape, int id, Tensor<Scalar> value)
      : tape_(tape), id_(id), value_(std::move(value)) {}

  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
  Tensor<Scalar> value_;
};

/// Vector-Jacobian product of one node. `needs[i]` says whether input i wants
/// a gradient; entries for inputs that do not may be left default-constructed.
template <typename Scalar>
using BackwardFn =
    std::function<std::vector<Var<Scalar>>(const Var<Scalar>& grad, const std::vector<bool>& needs)>;

template <typename Scalar>
struct Node {
  const char* op = "leaf";
  Tensor<Scalar> value;
  std::vector<int> parents;  // -1 marks a constant input
  BackwardFn<Scalar> backward;
  bool twice_differentiable = true;
};

template <typename Scalar>
class Gradients {
 public:
  bool contains(const Var<Scalar>& v) const { return v.tracked() && by_id_.count(v.id()) != 0; }
  /// Throws if `v` received no gradient.
  const Tensor<Scalar>& at(const Var<Scalar>& v) const;
  Tensor<Scalar> or_zero(const Var<Scalar>& v) const;
  size_t size() const { return by_id_.size(); }

 private:
  friend class Tape<Scalar>;
  std::unordered_map<int, Tensor<Scalar>> by_id_;
};

/// Caller-scoped record of operations in creation (= topological) order.
template <typename Scalar>
class Tape {
 public:
  explicit Tape(TapeMode mode = TapeMode::first_order) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  TapeMode mode() const { return mode_; }
  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }
  const Node<Scalar>& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }

  /// Registers a differentiable input.
  Var<Scalar> leaf(Tensor<Scalar> value);

  /// Appends an operation node if recording and any input is tracked on this
  /// tape; otherwise returns `value` as a constant.
  Var<Scalar> record(const char* op, Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs,
                     BackwardFn<Scalar> backward, bool twice_differentiable = true);

  /// Reverse accumulation from a scalar root to every reachable leaf. A tape
  /// accepts one backward call until `reset()`.
  Gradients<Scalar> backward(const Var<Scalar>& root);

  /// d(out)/d(input) as a recorded node, so a loss built on it can be
  /// differentiated again. Requires `TapeMode::build_grad_graph`.
  Var<Scalar> input_gradient(const Var<Scalar>& out, const Var<Scalar>& input);

  void reset();

  /// Disables recording for its lifetime (used for constants and first-order
  /// gradient evaluation).
  class Pause {
   public:
    explicit Pause(Tape& t) : tape_(t), previous_(t.recording_) { t.recording_ = false; }
    ~Pause() { tape_.recording_ = previous_; }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    Tape& tape_;
    bool previous_;
  };

 private:
  std::vector<std::optional<Var<Scalar>>> reverse(const Var<Scalar>& root, bool create_graph,
                                                  int only_target);

  TapeMode mode_;
  bool recording_ = true;
  bool consumed_ = false;
  std::vector<Node<Scalar>> nodes_;
};

/// Tape of the first tracked var in `inputs`, or nullptr when all are constant.
template <typename Scalar>
Tape<Scalar>* common_tape(const std::vector<Var<Scalar>>& inputs);

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace semfield
