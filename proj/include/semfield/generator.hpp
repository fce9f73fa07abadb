#pragma once

#include "semfield/diffmath/ops.hpp"
#include "semfield/params.hpp"
#include "semfield/rng.hpp"

#include <vector>

namespace semfield {

/// Where the positional feature grid enters the network.
enum class GridInjection {
  color_branch,  ///< default: concatenated to the color-branch input only
  trunk_input,   ///< concatenated to the trunk input, so geometry sees it too
  none,
};

struct GeneratorConfig {
  int k = 4;
  int shape_dim = 64;
  int texture_dim = 64;
  int mapping_hidden = 128;
  int trunk_layers = 8;
  int trunk_width = 128;
  int color_width = 128;
  int grid_size = 32;
  int grid_features = 16;
  GridInterp grid_interp = GridInterp::trilinear;
  GridInjection grid_injection = GridInjection::color_branch;
  double omega0 = 25.0;
  /// World coordinates are divided by this before entering the network.
  double half_extent = 0.2;
  /// sigma = density_scale · softplus(raw)
  double density_scale = 15.0;
  double density_bias_init = -2.0;

  /// Throws std::invalid_argument on non-positive sizes.
  void validate() const;
  int trunk_input_dim() const;
  int color_input_dim() const;
};

enum class LatentKind { shape, texture };

/// One (γ, β) pair per FiLM layer; each entry is [B, width].
template <typename S>
struct Modulation {
  std::vector<Var<S>> gamma;
  std::vector<Var<S>> beta;
};

/// Per-point outputs for a [B, P] batch of query points.
template <typename S>
struct FieldSample {
  Var<S> sigma;       // [B, P], non-negative
  Var<S> color_pre;   // [B, P, 3], before the sigmoid
  Var<S> sem_logits;  // [B, P, k]
};

/// Fresh parameters with SIREN-style initialization.
ParameterSet<float> init_generator(const GeneratorConfig& cfg, Rng& rng);

/// z is [B, dim]. Shape codes modulate the trunk; texture codes modulate
/// the color branch.
template <typename S>
Modulation<S> map_latent(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Var<S>& z, LatentKind which);

/// sin(γ ⊙ (x Wᵀ + b) + β) for x [B, P, in].
template <typename S>
Var<S> film_siren_layer(const Var<S>& x, const Var<S>& w, const Var<S>& b, const Var<S>& gamma, const Var<S>& beta);

/// e_coord for world points x [B, P, 3]; returns [B, P, F].
template <typename S>
Var<S> sample_feature_grid(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Var<S>& x);

/// x: world points [B, P, 3]; d: unit view directions [B, P, 3].
template <typename S>
FieldSample<S> query_field(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Var<S>& x, const Var<S>& d,
                           const Modulation<S>& mods_s, const Modulation<S>& mods_t);

/// (1 − t)·a + t·b; t must lie in [0, 1].
template <typename S>
Tensor<S> interpolate_latents(const Tensor<S>& a, const Tensor<S>& b, double t);

/// Standard-normal codes [B, dim].
Tensor<float> sample_latents(Rng& rng, int batch, int dim);

}  // namespace semfield
