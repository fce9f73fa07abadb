#include "semfield/training.hpp"

#include <cmath>

namespace semfield {

Adam::Adam(AdamConfig cfg, const ParameterSet<float>& params) : cfg_(cfg) {
  for (const auto& p : params) {
    names_.push_back(p.name);
    m_.push_back(Tensor<float>::zeros(p.value.shape()));
    v_.push_back(Tensor<float>::zeros(p.value.shape()));
  }
}

void Adam::step(ParameterSet<float>& params, const std::vector<const Tensor<float>*>& grads) {
  if (grads.size() != params.size() || params.size() != names_.size()) {
    throw std::invalid_argument("Adam::step: gradient list does not match the parameter set");
  }
  ++steps_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor<float>* g = grads[i];
    if (!g) continue;
    auto& p = params[i];
    if (g->shape() != p.value.shape()) throw ShapeError("Adam::step " + p.name, p.value.shape(), g->shape());
    auto pv = p.value.mutable_values();
    auto mv = m_[i].mutable_values();
    auto vv = v_[i].mutable_values();
    const float* gv = g->data();
    for (size_t j = 0; j < pv.size(); ++j) {
      const double gj = gv[j];
      const double m = b1 * mv[j] + (1 - b1) * gj;
      const double v = b2 * vv[j] + (1 - b2) * gj * gj;
      mv[j] = static_cast<float>(m);
      vv[j] = static_cast<float>(v);
      pv[j] = static_cast<float>(pv[j] - cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps));
    }
  }
}

void Adam::save(TensorArchive& a, const std::string& prefix) const {
  a.set_meta(prefix + ".steps", std::to_string(steps_));
  for (size_t i = 0; i < names_.size(); ++i) {
    a.put(prefix + "/m/" + names_[i], m_[i]);
    a.put(prefix + "/v/" + names_[i], v_[i]);
  }
}

void Adam::load(const TensorArchive& a, const std::string& prefix, const ParameterSet<float>& params) {
  *this = Adam(cfg_, params);
  steps_ = std::stoll(a.meta(prefix + ".steps"));
  for (size_t i = 0; i < names_.size(); ++i) {
    const auto& m = a.f32(prefix + "/m/" + names_[i]);
    const auto& v = a.f32(prefix + "/v/" + names_[i]);
    if (m.shape() != m_[i].shape() || v.shape() != v_[i].shape()) {
      throw ArchiveError(ArchiveError::Kind::malformed, "optimizer moment shape mismatch for " + names_[i]);
    }
    m_[i] = m;
    v_[i] = v;
  }
}

std::vector<const Tensor<float>*> gradient_list(const Gradients<float>& g, const BoundParameters<float>& bound) {
  std::vector<const Tensor<float>*> out(bound.size(), nullptr);
  for (size_t i = 0; i < bound.size(); ++i) {
    if (g.contains(bound.at(i))) out[i] = &g.at(bound.at(i));
  }
  return out;
}

}  // namespace semfield
