#pragma once

#include "semfield/camera.hpp"
#include "semfield/generator.hpp"
#include "semfield/image_io.hpp"

#include <vector>

namespace semfield {

struct SamplingConfig {
  int samples = 24;
  bool stratified = true;
  double near = 0.8;
  double far = 1.2;

  void validate() const;
};

/// Composited per-ray quantities. Every output is built from `weights`.
template <typename S>
struct Composite {
  Var<S> weights;     // [..., N]
  Var<S> rgb;         // [..., 3]
  Var<S> sem_probs;   // [..., k]
  Var<S> depth;       // [...]
  Var<S> opacity;     // [...], sum of weights
  /// rgb composited from detached per-sample colors: gradients through it
  /// reach density and geometry but never the color branch.
  Var<S> rgb_color_detached;
};

/// Discretized volume rendering along the last axis of `sigma` [..., N],
/// with `color_pre` [..., N, 3], `sem_logits` [..., N, k] and depths `t`
/// [..., N] strictly increasing per ray. The last interval ends at `far`.
template <typename S>
Composite<S> integrate(const Var<S>& sigma, const Var<S>& color_pre, const Var<S>& sem_logits, const Tensor<S>& t,
                       S far);

/// Rays for a batch: origins and unit directions, both [B, R, 3].
template <typename S>
struct RayBatch {
  Tensor<S> origins;
  Tensor<S> directions;
};

template <typename S>
RayBatch<S> rays_for_poses(const std::vector<CameraPose>& poses, int resolution);

/// Depths [B, R, N]: left edges of N equal bins over [near, far], jittered
/// within each bin when stratified (needs rng).
template <typename S>
Tensor<S> sample_depths(const SamplingConfig& sampling, int64_t batch, int64_t rays, Rng* rng);

/// Queries the field along every ray and composites. Outputs are [B, R, ...].
template <typename S>
Composite<S> render_rays(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Modulation<S>& mods_s,
                         const Modulation<S>& mods_t, const RayBatch<S>& rays, const SamplingConfig& sampling, Rng* rng);

/// Full images. Shapes: rgb [B, H, W, 3], sem_probs [B, H, W, k],
/// depth [B, H, W], weights [B, H, W, N].
template <typename S>
struct RenderOutput {
  int resolution = 0;
  Composite<S> c;
};

/// z_s [B, ds], z_t [B, dt], one pose per batch entry.
template <typename S>
RenderOutput<S> render(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Var<S>& z_s, const Var<S>& z_t,
                       const std::vector<CameraPose>& poses, const SamplingConfig& sampling, int resolution, Rng* rng);

/// Convenience for inference: constant parameters, one latent pair, one pose.
struct Render {
  Tensor<float> rgb;        // [H, W, 3]
  Tensor<float> sem_probs;  // [H, W, k]
  Tensor<float> depth;      // [H, W]
  Tensor<float> opacity;    // [H, W]
  LabelMap labels;
};

Render render_view(const ParameterSet<float>& params, const GeneratorConfig& cfg, const Tensor<float>& z_s,
                   const Tensor<float>& z_t, const CameraPose& pose, const SamplingConfig& sampling, int resolution,
                   uint64_t seed = 0);

/// Per-pixel argmax over the last axis of [H, W, k] (or [B, H, W, k] with
/// B = 1); ties go to the lowest class index.
LabelMap semantic_argmax(const Tensor<float>& sem_probs);

/// Slice b of a batched [B, ...] tensor.
template <typename S>
Tensor<S> batch_item(const Tensor<S>& t, int64_t b);

}  // namespace semfield
