#include "semfield/renderer.hpp"

#include <stdexcept>

namespace semfield {

void SamplingConfig::validate() const {
  if (samples < 2) throw std::invalid_argument("need at least 2 samples per ray");
  if (!(near < far) || !(near > 0)) throw std::invalid_argument("need 0 < near < far");
}

template <typename S>
Composite<S> integrate(const Var<S>& sigma, const Var<S>& color_pre, const Var<S>& sem_logits, const Tensor<S>& t,
                       S far) {
  if (t.shape() != sigma.shape()) throw ShapeError("integrate", sigma.shape(), t.shape());
  const int64_t n = t.dim(-1);
  const int64_t rays = t.size() / n;
  Tensor<S> delta(t.shape());
  auto dv = delta.mutable_values();
  for (int64_t r = 0; r < rays; ++r) {
    const S* row = t.data() + r * n;
    for (int64_t i = 0; i < n; ++i) {
      const S next = i + 1 < n ? row[i + 1] : far;
      if (!(next > row[i])) throw std::invalid_argument("integrate: sample depths must be strictly increasing");
      dv[static_cast<size_t>(r * n + i)] = next - row[i];
    }
  }
  Shape col = sigma.shape();
  col.push_back(1);

  Composite<S> out;
  // 1 − α_i = exp(−σ_i δ_i), so transmittance is the exclusive product of it.
  const Var<S> survive = exp(neg(sigma * Var<S>(delta)));
  const Var<S> w = cumprod(survive, true) * add_scalar(neg(survive), S(1));
  out.weights = w;
  const Var<S> wc = reshape(w, col);
  const Var<S> colors = sigmoid(color_pre);
  out.rgb = sum(wc * colors, -2);
  out.rgb_color_detached = sum(wc * detach(colors), -2);
  out.sem_probs = softmax(sum(wc * sem_logits, -2));
  out.depth = sum(w * Var<S>(t), -1);
  out.opacity = sum(w, -1);
  return out;
}

template <typename S>
RayBatch<S> rays_for_poses(const std::vector<CameraPose>& poses, int resolution) {
  const auto b = static_cast<int64_t>(poses.size());
  const int64_t r = static_cast<int64_t>(resolution) * resolution;
  RayBatch<S> out{Tensor<S>({b, r, 3}), Tensor<S>({b, r, 3})};
  auto o = out.origins.mutable_values();
  auto d = out.directions.mutable_values();
  for (int64_t i = 0; i < b; ++i) {
    const RayGrid g = pose_to_rays(poses[static_cast<size_t>(i)], resolution);
    for (int64_t j = 0; j < r; ++j) {
      for (int a = 0; a < 3; ++a) {
        const auto idx = static_cast<size_t>((i * r + j) * 3 + a);
        o[idx] = static_cast<S>(g.origin[a]);
        d[idx] = static_cast<S>(g.directions(j, a));
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> sample_depths(const SamplingConfig& sampling, int64_t batch, int64_t rays, Rng* rng) {
  sampling.validate();
  if (sampling.stratified && rng == nullptr) throw std::invalid_argument("stratified sampling needs an rng");
  const int64_t n = sampling.samples;
  Tensor<S> t({batch, rays, n});
  auto v = t.mutable_values();
  const double bin = (sampling.far - sampling.near) / static_cast<double>(n);
  for (int64_t r = 0; r < batch * rays; ++r) {
    for (int64_t i = 0; i < n; ++i) {
      // Jitter stays inside [0, 0.999) of a bin so depths remain strictly increasing.
      const double u = sampling.stratified ? 0.999 * rng->uniform() : 0.0;
      v[static_cast<size_t>(r * n + i)] = static_cast<S>(sampling.near + (static_cast<double>(i) + u) * bin);
    }
  }
  return t;
}

template <typename S>
Composite<S> render_rays(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Modulation<S>& mods_s,
                         const Modulation<S>& mods_t, const RayBatch<S>& rays, const SamplingConfig& sampling,
                         Rng* rng) {
  const int64_t b = rays.origins.dim(0);
  const int64_t r = rays.origins.dim(1);
  const int64_t n = sampling.samples;
  const Tensor<S> t = sample_depths<S>(sampling, b, r, rng);
  Tensor<S> x({b, r * n, 3});
  Tensor<S> d({b, r * n, 3});
  auto xv = x.mutable_values();
  auto dv = d.mutable_values();
  for (int64_t ray = 0; ray < b * r; ++ray) {
    const S* o = rays.origins.data() + ray * 3;
    const S* dir = rays.directions.data() + ray * 3;
    for (int64_t i = 0; i < n; ++i) {
      const S depth = t[ray * n + i];
      for (int a = 0; a < 3; ++a) {
        const auto idx = static_cast<size_t>((ray * n + i) * 3 + a);
        xv[idx] = o[a] + depth * dir[a];
        dv[idx] = dir[a];
      }
    }
  }
  const FieldSample<S> f = query_field(p, cfg, Var<S>(x), Var<S>(d), mods_s, mods_t);
  return integrate(reshape(f.sigma, {b, r, n}), reshape(f.color_pre, {b, r, n, 3}),
                   reshape(f.sem_logits, {b, r, n, static_cast<int64_t>(cfg.k)}), t, static_cast<S>(sampling.far));
}

template <typename S>
RenderOutput<S> render(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Var<S>& z_s, const Var<S>& z_t,
                       const std::vector<CameraPose>& poses, const SamplingConfig& sampling, int resolution, Rng* rng) {
  if (z_s.rank() != 2 || z_s.dim(0) != static_cast<int64_t>(poses.size()) || z_t.rank() != 2 ||
      z_t.dim(0) != z_s.dim(0)) {
    throw ShapeError("render", "latent batch must match the number of poses");
  }
  const Modulation<S> ms = map_latent(p, cfg, z_s, LatentKind::shape);
  const Modulation<S> mt = map_latent(p, cfg, z_t, LatentKind::texture);
  const RayBatch<S> rays = rays_for_poses<S>(poses, resolution);
  Composite<S> c = render_rays(p, cfg, ms, mt, rays, sampling, rng);
  const int64_t b = z_s.dim(0), h = resolution;
  RenderOutput<S> out;
  out.resolution = resolution;
  out.c.weights = reshape(c.weights, {b, h, h, static_cast<int64_t>(sampling.samples)});
  out.c.rgb = reshape(c.rgb, {b, h, h, 3});
  out.c.rgb_color_detached = reshape(c.rgb_color_detached, {b, h, h, 3});
  out.c.sem_probs = reshape(c.sem_probs, {b, h, h, static_cast<int64_t>(cfg.k)});
  out.c.depth = reshape(c.depth, {b, h, h});
  out.c.opacity = reshape(c.opacity, {b, h, h});
  return out;
}

template <typename S>
Tensor<S> batch_item(const Tensor<S>& t, int64_t b) {
  Shape inner(t.shape().begin() + 1, t.shape().end());
  const int64_t n = numel(inner);
  std::vector<S> values(t.data() + b * n, t.data() + (b + 1) * n);
  return Tensor<S>(inner, std::move(values));
}

Render render_view(const ParameterSet<float>& params, const GeneratorConfig& cfg, const Tensor<float>& z_s,
                   const Tensor<float>& z_t, const CameraPose& pose, const SamplingConfig& sampling, int resolution,
                   uint64_t seed) {
  const BoundParameters<float> p(params, nullptr);
  Rng rng(seed);
  const auto out = render(p, cfg, Var<float>(z_s.reshaped({1, z_s.size()})), Var<float>(z_t.reshaped({1, z_t.size()})),
                          {pose}, sampling, resolution, &rng);
  Render r;
  r.rgb = batch_item(out.c.rgb.value(), 0);
  r.sem_probs = batch_item(out.c.sem_probs.value(), 0);
  r.depth = batch_item(out.c.depth.value(), 0);
  r.opacity = batch_item(out.c.opacity.value(), 0);
  r.labels = semantic_argmax(r.sem_probs);
  return r;
}

LabelMap semantic_argmax(const Tensor<float>& sem_probs) {
  const int rank = sem_probs.rank();
  if (rank != 3 && !(rank == 4 && sem_probs.dim(0) == 1)) {
    throw ShapeError("semantic_argmax", "expected [H, W, k], got " + shape_string(sem_probs.shape()));
  }
  const auto h = static_cast<int>(sem_probs.dim(-3));
  const auto w = static_cast<int>(sem_probs.dim(-2));
  const int64_t k = sem_probs.dim(-1);
  LabelMap out(h, w);
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    const float* row = sem_probs.data() + i * k;
    int64_t best = 0;
    for (int64_t c = 1; c < k; ++c)
      if (row[c] > row[best]) best = c;
    out.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
  }
  return out;
}

#define SEMFIELD_INSTANTIATE_RENDERER(S)                                                                            \
  template Composite<S> integrate(const Var<S>&, const Var<S>&, const Var<S>&, const Tensor<S>&, S);              \
  template RayBatch<S> rays_for_poses(const std::vector<CameraPose>&, int);                                       \
  template Tensor<S> sample_depths(const SamplingConfig&, int64_t, int64_t, Rng*);                                \
  template Composite<S> render_rays(const BoundParameters<S>&, const GeneratorConfig&, const Modulation<S>&,      \
                                    const Modulation<S>&, const RayBatch<S>&, const SamplingConfig&, Rng*);       \
  template RenderOutput<S> render(const BoundParameters<S>&, const GeneratorConfig&, const Var<S>&, const Var<S>&, \
                                  const std::vector<CameraPose>&, const SamplingConfig&, int, Rng*);              \
  template Tensor<S> batch_item(const Tensor<S>&, int64_t);

SEMFIELD_INSTANTIATE_RENDERER(float)
SEMFIELD_INSTANTIATE_RENDERER(double)

}  // namespace semfield
