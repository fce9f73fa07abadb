#pragma once

#include "semfield/diffmath/ops.hpp"
#include "semfield/image_io.hpp"
#include "semfield/params.hpp"
#include "semfield/rng.hpp"

#include <string>
#include <vector>

namespace semfield {

/// Convolutional discriminator: CoordConv input, blocks of
/// conv3x3 → leaky-relu(0.2) → avg-pool 2, then one linear layer.
/// Block count is log2(resolution) − 1 (4 at 32²); residual skips are added
/// once there are 5 or more blocks.
struct DiscriminatorConfig {
  int resolution = 32;
  int in_channels = 3;
  int outputs = 1;
  std::vector<int> widths{32, 64, 128, 128};

  int blocks() const;
  int width(int block) const;
  bool residual() const { return blocks() >= 5; }
  void validate() const;
};

DiscriminatorConfig color_discriminator_config(int resolution);
DiscriminatorConfig semantic_discriminator_config(int resolution, int k);

/// Parameter names are prefixed (e.g. "dc." or "ds.").
ParameterSet<float> init_discriminator(const DiscriminatorConfig& cfg, const std::string& prefix, Rng& rng);

/// x is NCHW with values in [0, 1] (images) or on the simplex (semantics).
/// Returns [B, outputs].
template <typename S>
Var<S> discriminate(const BoundParameters<S>& p, const DiscriminatorConfig& cfg, const std::string& prefix,
                    const Var<S>& x);

template <typename S>
struct ColorVerdict {
  Var<S> score;  // [B]
  Var<S> pose;   // [B, 2] as (pitch, yaw)
};

/// image: [B, H, W, 3].
template <typename S>
ColorVerdict<S> d_color(const BoundParameters<S>& p, const DiscriminatorConfig& cfg, const Var<S>& image);

/// sem: [B, H, W, k], image: [B, H, W, 3]. Returns [B].
template <typename S>
Var<S> d_semantic(const BoundParameters<S>& p, const DiscriminatorConfig& cfg, const Var<S>& sem, const Var<S>& image);

/// Channel-first pair input for D_s: concat(sem, image) as [B, k + 3, H, W].
template <typename S>
Var<S> semantic_pair(const Var<S>& sem, const Var<S>& image);

/// One-hot [H, W, k]; throws std::out_of_range for labels ≥ k.
Tensor<float> encode_real_mask(const LabelMap& mask, int k);

}  // namespace semfield
