#include "semfield/adversary.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace semfield {
namespace {

Tensor<float> kaiming(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / ((1.0 + 0.2 * 0.2) * static_cast<double>(fan_in)));
  Tensor<float> t(std::move(shape));
  for (auto& v : t.mutable_values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

std::string name(const std::string& prefix, int block, const char* what) {
  return prefix + "b" + std::to_string(block) + "." + what;
}

/// [1, 2, H, W] channels holding x and y pixel-center coordinates in [−1, 1].
template <typename S>
Tensor<S> coord_channels(int64_t h, int64_t w) {
  Tensor<S> t({1, 2, h, w});
  auto v = t.mutable_values();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      v[static_cast<size_t>(y * w + x)] = static_cast<S>(2.0 * (x + 0.5) / w - 1.0);
      v[static_cast<size_t>(h * w + y * w + x)] = static_cast<S>(2.0 * (y + 0.5) / h - 1.0);
    }
  }
  return t;
}

int final_spatial(const DiscriminatorConfig& cfg) { return cfg.resolution >> cfg.blocks(); }

}  // namespace

int DiscriminatorConfig::blocks() const { return std::bit_width(static_cast<unsigned>(resolution)) - 2; }

int DiscriminatorConfig::width(int block) const {
  return block < static_cast<int>(widths.size()) ? widths[static_cast<size_t>(block)] : widths.back();
}

void DiscriminatorConfig::validate() const {
  if (resolution < 4 || !std::has_single_bit(static_cast<unsigned>(resolution))) {
    throw std::invalid_argument("discriminator resolution must be a power of two >= 4");
  }
  if (in_channels < 1 || outputs < 1 || widths.empty()) throw std::invalid_argument("invalid discriminator shape");
}

DiscriminatorConfig color_discriminator_config(int resolution) {
  DiscriminatorConfig c;
  c.resolution = resolution;
  c.in_channels = 3;
  c.outputs = 3;
  return c;
}

DiscriminatorConfig semantic_discriminator_config(int resolution, int k) {
  DiscriminatorConfig c;
  c.resolution = resolution;
  c.in_channels = 3 + k;
  c.outputs = 1;
  return c;
}

ParameterSet<float> init_discriminator(const DiscriminatorConfig& cfg, const std::string& prefix, Rng& rng) {
  cfg.validate();
  ParameterSet<float> ps;
  int in = cfg.in_channels + 2;
  for (int b = 0; b < cfg.blocks(); ++b) {
    const int out = cfg.width(b);
    ps.add(name(prefix, b, "w"), ParamGroup::discriminator, kaiming({out, in, 3, 3}, in * 9, rng));
    ps.add(name(prefix, b, "b"), ParamGroup::discriminator, Tensor<float>::zeros({out}));
    if (cfg.residual()) ps.add(name(prefix, b, "skip"), ParamGroup::discriminator, kaiming({out, in, 1, 1}, in, rng));
    in = out;
  }
  const int s = final_spatial(cfg);
  const int flat = in * s * s;
  ps.add(prefix + "out.w", ParamGroup::discriminator, kaiming({cfg.outputs, flat}, flat, rng));
  ps.add(prefix + "out.b", ParamGroup::discriminator, Tensor<float>::zeros({cfg.outputs}));
  return ps;
}

template <typename S>
Var<S> discriminate(const BoundParameters<S>& p, const DiscriminatorConfig& cfg, const std::string& prefix,
                    const Var<S>& x) {
  if (x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) != cfg.resolution || x.dim(3) != cfg.resolution) {
    throw ShapeError("discriminator", "expected [B, " + std::to_string(cfg.in_channels) + ", " +
                                          std::to_string(cfg.resolution) + ", " + std::to_string(cfg.resolution) +
                                          "], got " + shape_string(x.shape()));
  }
  const int64_t b = x.dim(0), r = cfg.resolution;
  // Inputs live in [0, 1]; center them before the first layer.
  Var<S> h = add_scalar(scale(x, S(2)), S(-1));
  const Var<S> coords(coord_channels<S>(r, r));
  h = concat<S>({h, broadcast_to(coords, {b, 2, r, r})}, 1);
  for (int i = 0; i < cfg.blocks(); ++i) {
    const Var<S>& bias = p(name(prefix, i, "b"));
    Var<S> y = conv2d(h, p(name(prefix, i, "w")), Conv2dSpec{1, 1});
    y = leaky_relu(add(y, reshape(bias, {1, bias.dim(0), 1, 1})), S(0.2));
    y = avg_pool2d(y, 2);
    if (cfg.residual()) y = add(y, conv2d(avg_pool2d(h, 2), p(name(prefix, i, "skip")), Conv2dSpec{1, 0}));
    h = y;
  }
  const Var<S>& ob = p(prefix + "out.b");
  return linear(reshape(h, {b, h.value().size() / b}), p(prefix + "out.w"), &ob);
}

template <typename S>
ColorVerdict<S> d_color(const BoundParameters<S>& p, const DiscriminatorConfig& cfg, const Var<S>& image) {
  if (image.rank() != 4 || image.dim(3) != 3) throw ShapeError("d_color", "expected [B, H, W, 3], got " + shape_string(image.shape()));
  const Var<S> out = discriminate(p, cfg, "dc.", permute(image, {0, 3, 1, 2}));
  const int64_t b = image.dim(0);
  return {reshape(slice(out, 1, 0, 1), {b}), slice(out, 1, 1, 2)};
}

template <typename S>
Var<S> semantic_pair(const Var<S>& sem, const Var<S>& image) {
  if (sem.rank() != 4 || image.rank() != 4 || image.dim(3) != 3 || sem.dim(0) != image.dim(0) ||
      sem.dim(1) != image.dim(1) || sem.dim(2) != image.dim(2)) {
    throw ShapeError("d_semantic", sem.shape(), image.shape());
  }
  return permute(concat<S>({sem, image}, 3), {0, 3, 1, 2});
}

template <typename S>
Var<S> d_semantic(const BoundParameters<S>& p, const DiscriminatorConfig& cfg, const Var<S>& sem, const Var<S>& image) {
  if (sem.rank() == 4 && sem.dim(3) + 3 != cfg.in_channels) {
    throw ShapeError("d_semantic", "expected " + std::to_string(cfg.in_channels - 3) + " semantic channels, got " +
                                       std::to_string(sem.dim(3)));
  }
  const Var<S> out = discriminate(p, cfg, "ds.", semantic_pair(sem, image));
  return reshape(out, {image.dim(0)});
}

Tensor<float> encode_real_mask(const LabelMap& mask, int k) {
  Tensor<float> out({mask.height, mask.width, k});
  auto v = out.mutable_values();
  for (size_t i = 0; i < mask.labels.size(); ++i) {
    const int label = mask.labels[i];
    if (label >= k) {
      throw std::out_of_range("mask label " + std::to_string(label) + " is not below k = " + std::to_string(k));
    }
    v[i * static_cast<size_t>(k) + static_cast<size_t>(label)] = 1.0f;
  }
  return out;
}

#define SEMFIELD_INSTANTIATE_ADVERSARY(S)                                                                           \
  template Var<S> discriminate(const BoundParameters<S>&, const DiscriminatorConfig&, const std::string&,          \
                               const Var<S>&);                                                                     \
  template ColorVerdict<S> d_color(const BoundParameters<S>&, const DiscriminatorConfig&, const Var<S>&);          \
  template Var<S> semantic_pair(const Var<S>&, const Var<S>&);                                                     \
  template Var<S> d_semantic(const BoundParameters<S>&, const DiscriminatorConfig&, const Var<S>&, const Var<S>&);

SEMFIELD_INSTANTIATE_ADVERSARY(float)
SEMFIELD_INSTANTIATE_ADVERSARY(double)

}  // namespace semfield
