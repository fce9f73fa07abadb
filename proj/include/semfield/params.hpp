#pragma once

#include "semfield/diffmath/tape.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace semfield {

/// Which part of the model a tensor belongs to. Optimizers and the
/// stop-gradient rule select parameters by group.
enum class ParamGroup : uint8_t {
  shape_mapping,
  texture_mapping,
  trunk,
  density_head,
  semantic_head,
  color_branch,
  feature_grid,
  discriminator,
};

std::string_view group_name(ParamGroup group);

/// Groups that only ever influence color: texture mapping, color branch and
/// the positional feature grid.
inline bool is_color_group(ParamGroup g) {
  return g == ParamGroup::texture_mapping || g == ParamGroup::color_branch || g == ParamGroup::feature_grid;
}

template <typename S>
struct Parameter {
  std::string name;
  ParamGroup group;
  Tensor<S> value;
};

/// Ordered, named collection of tensors.
template <typename S>
class ParameterSet {
 public:
  void add(std::string name, ParamGroup group, Tensor<S> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_.emplace(name, items_.size());
    items_.push_back({std::move(name), group, std::move(value)});
  }

  size_t size() const { return items_.size(); }
  const Parameter<S>& operator[](size_t i) const { return items_[i]; }
  Parameter<S>& operator[](size_t i) { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }
  size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + std::string(name));
    return it->second;
  }
  const Tensor<S>& get(std::string_view name) const { return items_[index_of(name)].value; }
  void set(std::string_view name, Tensor<S> value) {
    auto& slot = items_[index_of(name)].value;
    if (slot.shape() != value.shape()) throw ShapeError("set " + std::string(name), slot.shape(), value.shape());
    slot = std::move(value);
  }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

  uint64_t hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : items_) h = (h ^ content_hash(p.value)) * 0x100000001b3ull;
    return h;
  }

  template <typename T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& p : items_) out.add(p.name, p.group, p.value.template cast<T>());
    return out;
  }

 private:
  std::vector<Parameter<S>> items_;
  std::unordered_map<std::string, size_t> index_;
};

/// A parameter set registered on a tape for one forward pass. With no tape
/// (or for groups excluded by `trainable`) the values enter as constants.
template <typename S>
class BoundParameters {
 public:
  BoundParameters(const ParameterSet<S>& params, Tape<S>* tape) : params_(&params) {
    vars_.reserve(params.size());
    for (const auto& p : params) vars_.push_back(tape ? tape->leaf(p.value) : Var<S>(p.value));
  }

  template <typename Pred>
  BoundParameters(const ParameterSet<S>& params, Tape<S>* tape, Pred trainable) : params_(&params) {
    vars_.reserve(params.size());
    for (const auto& p : params) vars_.push_back(tape && trainable(p) ? tape->leaf(p.value) : Var<S>(p.value));
  }

  const Var<S>& operator()(std::string_view name) const { return vars_[params_->index_of(name)]; }
  const Var<S>& at(size_t i) const { return vars_[i]; }
  size_t size() const { return vars_.size(); }
  const ParameterSet<S>& params() const { return *params_; }

 private:
  const ParameterSet<S>* params_;
  std::vector<Var<S>> vars_;
};

}  // namespace semfield
