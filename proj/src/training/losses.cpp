#include "semfield/training.hpp"

#include <cmath>
#include <optional>

namespace semfield {

double gan_f(double t) {
  // −softplus(−t) = min(t, 0) − log1p(exp(−|t|))
  return std::min(t, 0.0) - std::log1p(std::exp(-std::abs(t)));
}

template <typename S>
Tensor<S> pose_tensor(const std::vector<CameraPose>& poses) {
  Tensor<S> t({static_cast<int64_t>(poses.size()), 2});
  auto v = t.mutable_values();
  for (size_t i = 0; i < poses.size(); ++i) {
    v[2 * i] = static_cast<S>(poses[i].pitch);
    v[2 * i + 1] = static_cast<S>(poses[i].yaw);
  }
  return t;
}

template <typename S>
Var<S> pose_distance(const Var<S>& predicted, const Tensor<S>& target, bool squared) {
  if (predicted.shape() != target.shape()) throw ShapeError("pose_distance", predicted.shape(), target.shape());
  Var<S> sq = sum(square(sub(predicted, Var<S>(target))), 1);
  if (squared) return mean(sq);
  return mean(exp(scale(log(add_scalar(sq, S(1e-12))), S(0.5))));
}

namespace {

template <typename S>
double scalar(const Var<S>& v) {
  return static_cast<double>(v.value().item());
}

template <typename S>
void require_same(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

template <typename S>
void accumulate(std::optional<Var<S>>& total, const Var<S>& term) {
  total = total ? add(*total, term) : term;
}

/// Mean over the batch of ‖∂ sum(score) / ∂ input‖².
template <typename S>
Var<S> r1_penalty(Tape<S>& tape, const Var<S>& score, const Var<S>& input) {
  const Var<S> g = tape.input_gradient(sum(score), input);
  return scale(sum(square(g)), S(1) / static_cast<S>(input.dim(0)));
}

}  // namespace

template <typename S>
DiscriminatorLoss<S> loss_dc(const BoundParameters<S>& d, const DiscriminatorConfig& cfg, Tape<S>& tape,
                             const Tensor<S>& real_images, const Tensor<S>& fake_images,
                             const Tensor<S>& fake_poses, const LossWeights& w) {
  require_same("loss_dc", real_images, fake_images);
  const Var<S> real = w.lambda_c > 0 ? tape.leaf(real_images) : Var<S>(real_images);
  const ColorVerdict<S> vr = d_color(d, cfg, real);
  const ColorVerdict<S> vf = d_color(d, cfg, Var<S>(fake_images));

  DiscriminatorLoss<S> out;
  const Var<S> l_real = mean(softplus(neg(vr.score)));
  const Var<S> l_fake = mean(softplus(vf.score));
  out.real = scalar(l_real);
  out.fake = scalar(l_fake);
  out.total = add(l_real, l_fake);
  if (w.lambda_c > 0) {
    const Var<S> r1 = r1_penalty(tape, vr.score, real);
    out.r1 = scalar(r1);
    out.total = add(out.total, scale(r1, static_cast<S>(w.lambda_c)));
  }
  if (w.lambda_p > 0) {
    const Var<S> pose = pose_distance(vf.pose, fake_poses, w.squared_pose);
    out.pose = scalar(pose);
    out.total = add(out.total, scale(pose, static_cast<S>(w.lambda_p)));
  }
  return out;
}

template <typename S>
DiscriminatorLoss<S> loss_ds(const BoundParameters<S>& d, const DiscriminatorConfig& cfg, Tape<S>& tape,
                             const Tensor<S>& real_masks, const Tensor<S>& real_images, const Tensor<S>& fake_sem,
                             const Tensor<S>& fake_images, const LossWeights& w) {
  require_same("loss_ds", real_masks, fake_sem);
  require_same("loss_ds", real_images, fake_images);
  const Tensor<S> real_pair = semantic_pair(Var<S>(real_masks), Var<S>(real_images)).value();
  const Var<S> real = w.lambda_s > 0 ? tape.leaf(real_pair) : Var<S>(real_pair);
  const Var<S> sr = discriminate(d, cfg, "ds.", real);
  const Var<S> sf = d_semantic(d, cfg, Var<S>(fake_sem), Var<S>(fake_images));

  DiscriminatorLoss<S> out;
  const Var<S> l_real = mean(softplus(neg(sr)));
  const Var<S> l_fake = mean(softplus(sf));
  out.real = scalar(l_real);
  out.fake = scalar(l_fake);
  out.total = add(l_real, l_fake);
  if (w.lambda_s > 0) {
    const Var<S> r1 = r1_penalty(tape, sr, real);
    out.r1 = scalar(r1);
    out.total = add(out.total, scale(r1, static_cast<S>(w.lambda_s)));
  }
  return out;
}

template <typename S>
GeneratorLoss<S> loss_g(const BoundParameters<S>& dc, const DiscriminatorConfig& cfg_c, const BoundParameters<S>& ds,
                        const DiscriminatorConfig& cfg_s, const RenderOutput<S>& fake,
                        const std::vector<CameraPose>& poses, const LossWeights& w, GeneratorTerms terms) {
  const bool pose_on = terms.pose && w.lambda_p > 0;
  GeneratorLoss<S> out;
  std::optional<Var<S>> total;
  if (terms.color || pose_on) {
    const ColorVerdict<S> v = d_color(dc, cfg_c, fake.c.rgb);
    if (terms.color) {
      const Var<S> l = mean(softplus(neg(v.score)));
      out.color = scalar(l);
      accumulate(total, l);
    }
    if (pose_on) {
      const Var<S> l = pose_distance(v.pose, pose_tensor<S>(poses), w.squared_pose);
      out.pose = scalar(l);
      accumulate(total, scale(l, static_cast<S>(w.lambda_p)));
    }
  }
  if (terms.semantic) {
    const Var<S> s = d_semantic(ds, cfg_s, fake.c.sem_probs, fake.c.rgb_color_detached);
    const Var<S> l = mean(softplus(neg(s)));
    out.semantic = scalar(l);
    accumulate(total, l);
  }
  out.total = total ? *total : Var<S>(Tensor<S>::zeros({}));
  return out;
}

#define SEMFIELD_INSTANTIATE(S)                                                                                       \
  template Tensor<S> pose_tensor(const std::vector<CameraPose>&);                                                     \
  template Var<S> pose_distance(const Var<S>&, const Tensor<S>&, bool);                                               \
  template DiscriminatorLoss<S> loss_dc(const BoundParameters<S>&, const DiscriminatorConfig&, Tape<S>&,             \
                                        const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const LossWeights&);    \
  template DiscriminatorLoss<S> loss_ds(const BoundParameters<S>&, const DiscriminatorConfig&, Tape<S>&,             \
                                        const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,       \
                                        const LossWeights&);                                                          \
  template GeneratorLoss<S> loss_g(const BoundParameters<S>&, const DiscriminatorConfig&, const BoundParameters<S>&, \
                                   const DiscriminatorConfig&, const RenderOutput<S>&,                                \
                                   const std::vector<CameraPose>&, const LossWeights&, GeneratorTerms);

SEMFIELD_INSTANTIATE(float)
SEMFIELD_INSTANTIATE(double)

}  // namespace semfield
