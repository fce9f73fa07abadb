#include "semfield/generator.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace semfield {
namespace {

Tensor<float> uniform_tensor(Shape shape, Rng& rng, double bound) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.mutable_values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

std::string layer(const char* prefix, int i, const char* what) {
  return std::string(prefix) + ".l" + std::to_string(i) + "." + what;
}

const char* mapping_prefix(LatentKind which) { return which == LatentKind::shape ? "map_s" : "map_t"; }

int mapping_input(const GeneratorConfig& cfg, LatentKind which) {
  return which == LatentKind::shape ? cfg.shape_dim : cfg.texture_dim;
}

/// Widths of the FiLM layers a mapping network drives.
std::vector<int> modulated_widths(const GeneratorConfig& cfg, LatentKind which) {
  if (which == LatentKind::shape) return std::vector<int>(static_cast<size_t>(cfg.trunk_layers), cfg.trunk_width);
  return {cfg.color_width, cfg.color_width};
}

void add_mapping(ParameterSet<float>& ps, const GeneratorConfig& cfg, LatentKind which, Rng& rng) {
  const auto group = which == LatentKind::shape ? ParamGroup::shape_mapping : ParamGroup::texture_mapping;
  const char* prefix = mapping_prefix(which);
  const auto widths = modulated_widths(cfg, which);
  int total = 0;
  for (int w : widths) total += w;
  const int dims[4] = {mapping_input(cfg, which), cfg.mapping_hidden, cfg.mapping_hidden, 2 * total};
  for (int i = 0; i < 3; ++i) {
    const double gain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
    double bound = gain * std::sqrt(3.0 / dims[i]);
    if (i == 2) bound *= 0.25;
    ps.add(layer(prefix, i, "w"), group, uniform_tensor({dims[i + 1], dims[i]}, rng, bound));
    Tensor<float> bias({dims[i + 1]});
    if (i == 2) {
      // Frequencies first, then phases; ω₀ lives in the frequency bias.
      auto b = bias.mutable_values();
      for (int j = 0; j < total; ++j) b[static_cast<size_t>(j)] = static_cast<float>(cfg.omega0);
    }
    ps.add(layer(prefix, i, "b"), group, std::move(bias));
  }
}

void add_film(ParameterSet<float>& ps, const std::string& prefix, int i, ParamGroup group, int in, int out, bool first,
              double omega0, Rng& rng) {
  const double bound = first ? 1.0 / in : std::sqrt(6.0 / in) / omega0;
  ps.add(layer(prefix.c_str(), i, "w"), group, uniform_tensor({out, in}, rng, bound));
  ps.add(layer(prefix.c_str(), i, "b"), group, uniform_tensor({out}, rng, bound));
}

template <typename S>
Var<S> normalized_points(const GeneratorConfig& cfg, const Var<S>& x) {
  return scale(x, static_cast<S>(1.0 / cfg.half_extent));
}

}  // namespace

void GeneratorConfig::validate() const {
  if (k < 2) throw std::invalid_argument("generator k must be >= 2");
  if (shape_dim < 1 || texture_dim < 1 || mapping_hidden < 1) throw std::invalid_argument("latent and mapping sizes must be positive");
  if (trunk_layers < 1 || trunk_width < 1 || color_width < 1) throw std::invalid_argument("trunk and color sizes must be positive");
  if (grid_size < 2 || grid_features < 1) throw std::invalid_argument("feature grid needs size >= 2 and features >= 1");
  if (!(half_extent > 0) || !(density_scale > 0)) throw std::invalid_argument("half_extent and density_scale must be positive");
}

int GeneratorConfig::trunk_input_dim() const {
  return 3 + (grid_injection == GridInjection::trunk_input ? grid_features : 0);
}

int GeneratorConfig::color_input_dim() const {
  return trunk_width + 3 + (grid_injection == GridInjection::color_branch ? grid_features : 0);
}

ParameterSet<float> init_generator(const GeneratorConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterSet<float> ps;
  add_mapping(ps, cfg, LatentKind::shape, rng);
  add_mapping(ps, cfg, LatentKind::texture, rng);
  for (int i = 0; i < cfg.trunk_layers; ++i) {
    add_film(ps, "trunk", i, ParamGroup::trunk, i == 0 ? cfg.trunk_input_dim() : cfg.trunk_width, cfg.trunk_width, i == 0,
             cfg.omega0, rng);
  }
  const double head = std::sqrt(1.0 / cfg.trunk_width);
  ps.add("density.w", ParamGroup::density_head, uniform_tensor({1, cfg.trunk_width}, rng, head));
  ps.add("density.b", ParamGroup::density_head, Tensor<float>::full({1}, static_cast<float>(cfg.density_bias_init)));
  ps.add("semantic.w", ParamGroup::semantic_head, uniform_tensor({cfg.k, cfg.trunk_width}, rng, head));
  ps.add("semantic.b", ParamGroup::semantic_head, Tensor<float>::zeros({cfg.k}));
  add_film(ps, "color", 0, ParamGroup::color_branch, cfg.color_input_dim(), cfg.color_width, false, cfg.omega0, rng);
  add_film(ps, "color", 1, ParamGroup::color_branch, cfg.color_width, cfg.color_width, false, cfg.omega0, rng);
  const double out = std::sqrt(1.0 / cfg.color_width);
  ps.add("color.out.w", ParamGroup::color_branch, uniform_tensor({3, cfg.color_width}, rng, out));
  ps.add("color.out.b", ParamGroup::color_branch, Tensor<float>::zeros({3}));
  if (cfg.grid_injection != GridInjection::none) {
    ps.add("grid", ParamGroup::feature_grid,
           uniform_tensor({cfg.grid_size, cfg.grid_size, cfg.grid_size, cfg.grid_features}, rng, 0.1));
  }
  return ps;
}

template <typename S>
Modulation<S> map_latent(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Var<S>& z, LatentKind which) {
  const int dim = mapping_input(cfg, which);
  if (z.rank() != 2 || z.dim(1) != dim) {
    throw ShapeError("map_latent", "expected [B, " + std::to_string(dim) + "], got " + shape_string(z.shape()));
  }
  const char* prefix = mapping_prefix(which);
  Var<S> h = z;
  for (int i = 0; i < 3; ++i) {
    const Var<S>& b = p(layer(prefix, i, "b"));
    h = linear(h, p(layer(prefix, i, "w")), &b);
    if (i < 2) h = leaky_relu(h, static_cast<S>(0.2));
  }
  Modulation<S> m;
  const auto widths = modulated_widths(cfg, which);
  int total = 0;
  for (int w : widths) total += w;
  int offset = 0;
  for (int w : widths) {
    m.gamma.push_back(slice(h, 1, offset, w));
    m.beta.push_back(slice(h, 1, total + offset, w));
    offset += w;
  }
  return m;
}

template <typename S>
Var<S> film_siren_layer(const Var<S>& x, const Var<S>& w, const Var<S>& b, const Var<S>& gamma, const Var<S>& beta) {
  return film_sine(linear(x, w, static_cast<const Var<S>*>(nullptr)), b, gamma, beta);
}

template <typename S>
Var<S> sample_feature_grid(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Var<S>& x) {
  if (x.rank() != 3 || x.dim(2) != 3) throw ShapeError("sample_feature_grid", "expected [B, P, 3], got " + shape_string(x.shape()));
  const int64_t b = x.dim(0), n = x.dim(1);
  Var<S> flat = reshape(normalized_points(cfg, x), {b * n, 3});
  return reshape(grid_sample_3d(p("grid"), flat, cfg.grid_interp), {b, n, cfg.grid_features});
}

template <typename S>
FieldSample<S> query_field(const BoundParameters<S>& p, const GeneratorConfig& cfg, const Var<S>& x, const Var<S>& d,
                           const Modulation<S>& mods_s, const Modulation<S>& mods_t) {
  if (x.rank() != 3 || x.dim(2) != 3) throw ShapeError("query_field", "expected points [B, P, 3], got " + shape_string(x.shape()));
  if (d.shape() != x.shape()) throw ShapeError("query_field", x.shape(), d.shape());
  if (!x.value().all_finite() || !d.value().all_finite()) throw std::domain_error("query_field: non-finite input");
  if (static_cast<int>(mods_s.gamma.size()) != cfg.trunk_layers || mods_t.gamma.size() != 2) {
    throw std::invalid_argument("query_field: modulation does not match the architecture");
  }

  Var<S> e;
  if (cfg.grid_injection != GridInjection::none) e = sample_feature_grid(p, cfg, x);

  Var<S> h = normalized_points(cfg, x);
  if (cfg.grid_injection == GridInjection::trunk_input) h = concat<S>({h, e}, 2);
  for (int i = 0; i < cfg.trunk_layers; ++i) {
    h = film_siren_layer(h, p(layer("trunk", i, "w")), p(layer("trunk", i, "b")), mods_s.gamma[static_cast<size_t>(i)],
                         mods_s.beta[static_cast<size_t>(i)]);
  }

  FieldSample<S> out;
  const Var<S>& db = p("density.b");
  Var<S> raw = linear(h, p("density.w"), &db);
  out.sigma = scale(softplus(reshape(raw, {x.dim(0), x.dim(1)})), static_cast<S>(cfg.density_scale));
  const Var<S>& sb = p("semantic.b");
  out.sem_logits = linear(h, p("semantic.w"), &sb);

  std::vector<Var<S>> parts{h, d};
  if (cfg.grid_injection == GridInjection::color_branch) parts.push_back(e);
  Var<S> c = concat(parts, 2);
  for (int i = 0; i < 2; ++i) {
    c = film_siren_layer(c, p(layer("color", i, "w")), p(layer("color", i, "b")), mods_t.gamma[static_cast<size_t>(i)],
                         mods_t.beta[static_cast<size_t>(i)]);
  }
  const Var<S>& cb = p("color.out.b");
  out.color_pre = linear(c, p("color.out.w"), &cb);
  return out;
}

template <typename S>
Tensor<S> interpolate_latents(const Tensor<S>& a, const Tensor<S>& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolation weight must lie in [0, 1]");
  if (a.shape() != b.shape()) throw ShapeError("interpolate_latents", a.shape(), b.shape());
  Tensor<S> out(a.shape());
  auto o = out.mutable_values();
  const S w = static_cast<S>(t);
  for (int64_t i = 0; i < a.size(); ++i) o[static_cast<size_t>(i)] = (S(1) - w) * a[i] + w * b[i];
  return out;
}

Tensor<float> sample_latents(Rng& rng, int batch, int dim) {
  Tensor<float> z({batch, dim});
  for (auto& v : z.mutable_values()) v = static_cast<float>(rng.normal());
  return z;
}

#define SEMFIELD_INSTANTIATE_GENERATOR(S)                                                                          \
  template Modulation<S> map_latent(const BoundParameters<S>&, const GeneratorConfig&, const Var<S>&, LatentKind); \
  template Var<S> film_siren_layer(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&);    \
  template Var<S> sample_feature_grid(const BoundParameters<S>&, const GeneratorConfig&, const Var<S>&);          \
  template FieldSample<S> query_field(const BoundParameters<S>&, const GeneratorConfig&, const Var<S>&,            \
                                      const Var<S>&, const Modulation<S>&, const Modulation<S>&);                  \
  template Tensor<S> interpolate_latents(const Tensor<S>&, const Tensor<S>&, double);

SEMFIELD_INSTANTIATE_GENERATOR(float)
SEMFIELD_INSTANTIATE_GENERATOR(double)

}  // namespace semfield
