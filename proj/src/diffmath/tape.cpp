#include "semfield/diffmath/tape.hpp"

#include "semfield/diffmath/ops.hpp"

#include <optional>

namespace semfield {

template <typename Scalar>
const Tensor<Scalar>& Gradients<Scalar>::at(const Var<Scalar>& v) const {
  auto it = v.tracked() ? by_id_.find(v.id()) : by_id_.end();
  if (it == by_id_.end()) throw TapeError("no gradient recorded for this variable");
  return it->second;
}

template <typename Scalar>
Tensor<Scalar> Gradients<Scalar>::or_zero(const Var<Scalar>& v) const {
  return contains(v) ? by_id_.at(v.id()) : Tensor<Scalar>::zeros(v.shape());
}

template <typename Scalar>
Tape<Scalar>* common_tape(const std::vector<Var<Scalar>>& inputs) {
  Tape<Scalar>* tape = nullptr;
  for (const auto& v : inputs) {
    if (!v.tracked()) continue;
    if (tape == nullptr) {
      tape = v.tape();
    } else if (tape != v.tape()) {
      throw TapeError("operation mixes variables from different tapes");
    }
  }
  return tape;
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::leaf(Tensor<Scalar> value) {
  Node<Scalar> n;
  n.value = value;
  nodes_.push_back(std::move(n));
  return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1), std::move(value));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(const char* op, Tensor<Scalar> value,
                                 const std::vector<Var<Scalar>>& inputs, BackwardFn<Scalar> backward,
                                 bool twice_differentiable) {
  if (!recording_) return Var<Scalar>(std::move(value));
  Node<Scalar> n;
  n.op = op;
  n.value = value;
  n.parents.reserve(inputs.size());
  bool any = false;
  for (const auto& in : inputs) {
    if (in.tracked() && in.tape() != this) throw TapeError(std::string(op) + ": variable from another tape");
    n.parents.push_back(in.tracked() ? in.id() : -1);
    any = any || in.tracked();
  }
  if (!any) return Var<Scalar>(std::move(value));
  n.backward = std::move(backward);
  n.twice_differentiable = twice_differentiable;
  nodes_.push_back(std::move(n));
  return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1), std::move(value));
}

template <typename Scalar>
std::vector<std::optional<Var<Scalar>>> Tape<Scalar>::reverse(const Var<Scalar>& root, bool create_graph,
                                               int only_target) {
  if (!root.tracked() || root.tape() != this) throw TapeError("root is not recorded on this tape");
  if (root.value().size() != 1) {
    throw TapeError("backward requires a scalar root, got shape " + shape_string(root.shape()));
  }
  const int r = root.id();
  std::vector<bool> wanted(static_cast<size_t>(r) + 1, only_target < 0);
  if (only_target >= 0) {
    for (int id = 0; id <= r; ++id) {
      bool w = id == only_target;
      for (int p : nodes_[static_cast<size_t>(id)].parents) w = w || (p >= 0 && wanted[static_cast<size_t>(p)]);
      wanted[static_cast<size_t>(id)] = w;
    }
  }

  std::vector<Var<Scalar>> grads(static_cast<size_t>(r) + 1);
  std::vector<bool> has(static_cast<size_t>(r) + 1, false);
  grads[static_cast<size_t>(r)] = Var<Scalar>(Tensor<Scalar>::ones(root.shape()));
  has[static_cast<size_t>(r)] = true;

  const bool saved = recording_;
  recording_ = create_graph;
  try {
    for (int id = r; id >= 0; --id) {
      const auto uid = static_cast<size_t>(id);
      if (!has[uid] || !wanted[uid]) continue;
      // Copies: the node vector may grow while gradients are recorded.
      const std::vector<int> parents = nodes_[uid].parents;
      const BackwardFn<Scalar> fn = nodes_[uid].backward;
      if (!fn) continue;
      if (create_graph && !nodes_[uid].twice_differentiable) {
        throw TapeError(std::string(nodes_[uid].op) + " does not support second-order differentiation");
      }
      std::vector<bool> needs(parents.size());
      bool any = false;
      for (size_t i = 0; i < parents.size(); ++i) {
        needs[i] = parents[i] >= 0 && wanted[static_cast<size_t>(parents[i])];
        any = any || needs[i];
      }
      if (!any) continue;
      std::vector<Var<Scalar>> in_grads = fn(grads[uid], needs);
      if (id != only_target) {
        grads[uid] = Var<Scalar>();
        if (nodes_[uid].backward) has[uid] = false;
      }
      for (size_t i = 0; i < parents.size(); ++i) {
        if (!needs[i]) continue;
        const auto p = static_cast<size_t>(parents[i]);
        const Var<Scalar>& g = in_grads.at(i);
        if (g.shape() != nodes_[p].value.shape()) {
          throw TapeError(std::string(nodes_[uid].op) + ": gradient shape " + shape_string(g.shape()) +
                          " does not match input " + shape_string(nodes_[p].value.shape()));
        }
        if (has[p]) {
          grads[p] = add(grads[p], g);
        } else {
          grads[p] = g;
          has[p] = true;
        }
      }
    }
  } catch (...) {
    recording_ = saved;
    throw;
  }
  recording_ = saved;
  std::vector<std::optional<Var<Scalar>>> out(grads.size());
  for (size_t i = 0; i < has.size(); ++i)
    if (has[i]) out[i] = std::move(grads[i]);
  return out;
}

template <typename Scalar>
Gradients<Scalar> Tape<Scalar>::backward(const Var<Scalar>& root) {
  if (consumed_) throw TapeError("backward already ran on this tape; call reset() first");
  std::vector<std::optional<Var<Scalar>>> grads = reverse(root, false, -1);
  consumed_ = true;
  Gradients<Scalar> out;
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i] && !nodes_[i].backward) out.by_id_.emplace(static_cast<int>(i), grads[i]->value());
  }
  return out;
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::input_gradient(const Var<Scalar>& out, const Var<Scalar>& input) {
  if (mode_ != TapeMode::build_grad_graph) {
    throw TapeError("input_gradient requires a tape in build_grad_graph mode");
  }
  if (!input.tracked() || input.tape() != this) throw TapeError("input is not recorded on this tape");
  if (input.id() > out.id()) return Var<Scalar>(Tensor<Scalar>::zeros(input.shape()));
  std::vector<std::optional<Var<Scalar>>> grads = reverse(out, true, input.id());
  const auto& g = grads[static_cast<size_t>(input.id())];
  return g ? *g : Var<Scalar>(Tensor<Scalar>::zeros(input.shape()));
}

template <typename Scalar>
void Tape<Scalar>::reset() {
  nodes_.clear();
  consumed_ = false;
  recording_ = true;
}

template class Tape<float>;
template class Tape<double>;
template class Gradients<float>;
template class Gradients<double>;
template Tape<float>* common_tape(const std::vector<Var<float>>&);
template Tape<double>* common_tape(const std::vector<Var<double>>&);

}  // namespace semfield
