#include "semfield/inversion.hpp"

#include "semfield/metrics.hpp"
#include "semfield/training.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace semfield {
namespace {

constexpr float kLogEps = 1e-8f;

struct Plan {
  bool fit_shape = true;
  bool fit_texture = false;
  double w_sem = 1.0;
  double w_rgb = 0.0;
};

/// Target distribution [H·W, k] and Σ q log q / H·W, so that the semantic
/// loss is a KL divergence and vanishes when the render matches.
struct SemanticTarget {
  Tensor<float> q;
  double entropy_term = 0;
  LabelMap labels;
  /// Set for local edits: [H·W, 1] indicator of kept pixels and their soft map.
  std::optional<Tensor<float>> kept;
  std::optional<Tensor<float>> kept_probs;
};

SemanticTarget semantic_target(const InversionTask& task, int k) {
  SemanticTarget t;
  const int64_t n = static_cast<int64_t>(task.mask.height) * task.mask.width;
  if (task.soft_mask) {
    t.q = task.soft_mask->reshaped({n, k});
    t.labels = semantic_argmax(*task.soft_mask);
  } else {
    t.q = encode_real_mask(task.mask, k).reshaped({n, k});
    t.labels = task.mask;
  }
  if (task.preserve) {
    const LabelMap before = semantic_argmax(*task.preserve);
    Tensor<float> kept({n, 1});
    auto kv = kept.mutable_values();
    auto qv = t.q.mutable_values();
    for (int64_t i = 0; i < n; ++i) {
      if (before.labels[static_cast<size_t>(i)] != t.labels.labels[static_cast<size_t>(i)]) continue;
      kv[static_cast<size_t>(i)] = 1.0f;
      for (int c = 0; c < k; ++c) qv[static_cast<size_t>(i * k + c)] = 0.0f;
    }
    t.kept = kept;
    t.kept_probs = task.preserve->reshaped({n, k});
  }
  double acc = 0;
  for (int64_t i = 0; i < t.q.size(); ++i) {
    const float v = t.q[i];
    if (v > 0) acc += static_cast<double>(v) * std::log(static_cast<double>(v + kLogEps));
  }
  t.entropy_term = acc / static_cast<double>(n);
  return t;
}

struct Evaluation {
  Var<float> loss;
  TraceRecord record;
};

class Objective {
 public:
  Objective(const ParameterSet<float>& params, const GeneratorConfig& cfg, const SamplingConfig& sampling,
            const InversionTask& task, const Plan& plan)
      : params_(params), cfg_(cfg), task_(task), plan_(plan), target_(semantic_target(task, cfg.k)) {
    sampling_ = sampling;
    sampling_.stratified = false;
  }

  Evaluation operator()(const Var<float>& z_s, const Var<float>& z_t, const CameraPose& pose, int iter) const {
    const BoundParameters<float> g(params_, nullptr);
    const int res = task_.resolution();
    const auto out = render(g, cfg_, reshape(z_s, {1, z_s.dim(0)}), reshape(z_t, {1, z_t.dim(0)}), {pose}, sampling_,
                            res, nullptr);
    const int64_t npix = static_cast<int64_t>(res) * res;
    std::optional<Var<float>> total;
    auto add_term = [&total](const Var<float>& v) { total = total ? add(*total, v) : v; };
    if (plan_.w_sem > 0) {
      const Var<float> p = reshape(out.c.sem_probs, {npix, static_cast<int64_t>(cfg_.k)});
      const Var<float> ce = scale(sum(mul(Var<float>(target_.q), log(add_scalar(p, kLogEps)))), -1.0f / static_cast<float>(npix));
      add_term(scale(add_scalar(ce, static_cast<float>(target_.entropy_term)), static_cast<float>(plan_.w_sem)));
      if (target_.kept) {
        const Var<float> drift = sum(mul(Var<float>(*target_.kept), square(sub(p, Var<float>(*target_.kept_probs)))));
        add_term(scale(drift, static_cast<float>(plan_.w_sem) / static_cast<float>(npix)));
      }
    }
    if (plan_.w_rgb > 0) {
      const Var<float> target(task_.image->reshaped({1, res, res, 3}));
      add_term(scale(mean(square(sub(out.c.rgb, target))), static_cast<float>(plan_.w_rgb)));
    }
    if (task_.anchor_z_s && task_.mu > 0) {
      add_term(scale(sum(square(sub(z_s, Var<float>(*task_.anchor_z_s)))), static_cast<float>(task_.mu)));
    }
    Evaluation e;
    e.loss = *total;
    e.record.iter = iter;
    e.record.loss = e.loss.value().item();
    e.record.miou = miou(semantic_argmax(out.c.sem_probs.value()), target_.labels, cfg_.k);
    if (task_.image) e.record.psnr = psnr(batch_item(out.c.rgb.value(), 0), *task_.image);
    return e;
  }

 private:
  const ParameterSet<float>& params_;
  const GeneratorConfig& cfg_;
  SamplingConfig sampling_;
  const InversionTask& task_;
  Plan plan_;
  SemanticTarget target_;
};

/// Adam on a small dense vector, for the pose.
struct VectorAdam {
  double lr, b2 = 0.999, b1 = 0.9;
  double m[2] = {0, 0}, v[2] = {0, 0};
  int t = 0;
  void step(double* x, const double* g) {
    ++t;
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
};

InversionResult run(const ParameterSet<float>& params, const GeneratorConfig& cfg, const SamplingConfig& sampling,
                    const InversionTask& task, const Plan& plan, const InversionControl& control) {
  task.validate(cfg.k);
  if (plan.w_rgb > 0 && !task.image) throw std::invalid_argument("inversion: rgb objective needs a target image");
  if (plan.w_sem <= 0 && plan.w_rgb <= 0) throw std::invalid_argument("inversion: every objective weight is zero");
  Rng rng(task.seed);
  Tensor<float> z_s = task.init_z_s ? *task.init_z_s : sample_latents(rng, 1, cfg.shape_dim).reshaped({cfg.shape_dim});
  Tensor<float> z_t = task.init_z_t ? *task.init_z_t : sample_latents(rng, 1, cfg.texture_dim).reshaped({cfg.texture_dim});
  if (z_s.shape() != Shape{cfg.shape_dim}) throw ShapeError("inversion z_s", z_s.shape(), Shape{cfg.shape_dim});
  if (z_t.shape() != Shape{cfg.texture_dim}) throw ShapeError("inversion z_t", z_t.shape(), Shape{cfg.texture_dim});

  ParameterSet<float> latents;
  latents.add("z_s", ParamGroup::shape_mapping, z_s);
  latents.add("z_t", ParamGroup::texture_mapping, z_t);
  Adam adam({task.lr, 0.9, 0.999, 1e-8}, latents);
  const Objective objective(params, cfg, sampling, task, plan);
  auto trainable = [&plan](const Parameter<float>& p) {
    return p.name == "z_s" ? plan.fit_shape : plan.fit_texture;
  };

  InversionResult result;
  result.pose = task.pose;
  VectorAdam pose_adam{task.lr};
  for (int it = 0; it < task.steps; ++it) {
    if (control.cancelled && control.cancelled()) {
      result.cancelled = true;
      break;
    }
    Tape<float> tape;
    const BoundParameters<float> z(latents, &tape, trainable);
    const Evaluation e = objective(z("z_s"), z("z_t"), result.pose, it);
    result.trace.push_back(e.record);
    if (control.progress) control.progress(e.record);
    if (!std::isfinite(e.record.loss)) throw InversionError("inversion loss is not finite", result.trace);
    if (e.loss.tracked()) {
      const Gradients<float> g = tape.backward(e.loss);
      adam.step(latents, gradient_list(g, z));
    }
    if (task.optimize_pose) {
      const double h = 1e-3;
      double x[2] = {result.pose.pitch, result.pose.yaw}, grad[2];
      const BoundParameters<float> zc(latents, nullptr);
      for (int a = 0; a < 2; ++a) {
        CameraPose lo = result.pose, hi = result.pose;
        (a == 0 ? lo.pitch : lo.yaw) -= h;
        (a == 0 ? hi.pitch : hi.yaw) += h;
        grad[a] = (objective(zc("z_s"), zc("z_t"), hi, it).record.loss - objective(zc("z_s"), zc("z_t"), lo, it).record.loss) / (2 * h);
      }
      pose_adam.step(x, grad);
      result.pose.pitch = x[0];
      result.pose.yaw = x[1];
    }
  }
  const BoundParameters<float> zc(latents, nullptr);
  result.final = objective(zc("z_s"), zc("z_t"), result.pose, static_cast<int>(result.trace.size())).record;
  result.z_s = latents.get("z_s");
  result.z_t = latents.get("z_t");
  return result;
}

Tensor<float> lerp_exact(const Tensor<float>& a, const Tensor<float>& b, int i, int n) {
  if (a.shape() != b.shape()) throw ShapeError("morph_grid", a.shape(), b.shape());
  // Weights from integers keep the grid symmetric under swapping endpoints.
  const float wa = static_cast<float>(n - 1 - i) / static_cast<float>(n - 1);
  const float wb = static_cast<float>(i) / static_cast<float>(n - 1);
  Tensor<float> out(a.shape());
  auto v = out.mutable_values();
  for (int64_t j = 0; j < a.size(); ++j) v[static_cast<size_t>(j)] = wa * a[j] + wb * b[j];
  return out;
}

}  // namespace

void InversionTask::validate(int k) const {
  if (mask.height <= 0 || mask.width != mask.height) throw std::invalid_argument("inversion target must be a square mask");
  for (uint8_t l : mask.labels)
    if (l >= k) throw std::out_of_range("target mask label " + std::to_string(l) + " exceeds k");
  if (preserve && preserve->shape() != Shape{mask.height, mask.width, k}) {
    throw ShapeError("inversion preserve map", preserve->shape(), Shape{mask.height, mask.width, k});
  }
  if (soft_mask && soft_mask->shape() != Shape{mask.height, mask.width, k}) {
    throw ShapeError("inversion soft mask", soft_mask->shape(), Shape{mask.height, mask.width, k});
  }
  if (image && image->shape() != Shape{mask.height, mask.width, 3}) {
    throw ShapeError("inversion image", image->shape(), Shape{mask.height, mask.width, 3});
  }
  if (steps < 0) throw std::invalid_argument("inversion steps must be >= 0");
  if (!(lr > 0)) throw std::invalid_argument("inversion lr must be positive");
  if (w_sem < 0 || w_rgb < 0 || mu < 0) throw std::invalid_argument("inversion weights must be >= 0");
}

std::string to_ndjson(const TraceRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["loss"] = r.loss;
  j["miou"] = r.miou;
  if (r.psnr) j["psnr"] = std::isinf(*r.psnr) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(*r.psnr);
  return j.dump();
}

InversionResult invert_semantic(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                                const SamplingConfig& sampling, const InversionTask& task,
                                const InversionControl& control) {
  return run(params, cfg, sampling, task, Plan{true, false, 1.0, 0.0}, control);
}

InversionResult invert_full(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                            const SamplingConfig& sampling, const InversionTask& task,
                            const InversionControl& control) {
  return run(params, cfg, sampling, task, Plan{true, task.w_rgb > 0, task.w_sem, task.w_rgb}, control);
}

InversionResult local_edit(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                           const SamplingConfig& sampling, const Tensor<float>& z_s, const Tensor<float>& z_t,
                           const LabelMap& edited, const CameraPose& pose, int steps, double lr, double mu,
                           const InversionControl& control) {
  InversionTask task;
  task.mask = edited;
  task.pose = pose;
  task.init_z_s = z_s;
  task.init_z_t = z_t;
  task.anchor_z_s = z_s;
  task.mu = mu;
  SamplingConfig fixed = sampling;
  fixed.stratified = false;
  task.preserve = render_view(params, cfg, z_s, z_t, pose, fixed, edited.height).sem_probs;
  task.steps = steps;
  task.lr = lr;
  return run(params, cfg, sampling, task, Plan{true, false, 1.0, 0.0}, control);
}

std::vector<Render> style_transfer(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                                   const SamplingConfig& sampling, const Tensor<float>& z_s_source,
                                   const Tensor<float>& z_t_target, const std::vector<CameraPose>& poses,
                                   int resolution) {
  std::vector<Render> out;
  for (const auto& pose : poses) out.push_back(render_view(params, cfg, z_s_source, z_t_target, pose, sampling, resolution));
  return out;
}

std::vector<Render> morph_grid(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                               const SamplingConfig& sampling, const LatentPair& a, const LatentPair& b, int n,
                               const CameraPose& pose, int resolution) {
  if (n < 2) throw std::invalid_argument("morph_grid needs n >= 2");
  std::vector<Render> out;
  for (int i = 0; i < n; ++i) {
    const Tensor<float> z_s = lerp_exact(a.z_s, b.z_s, i, n);
    for (int j = 0; j < n; ++j) {
      out.push_back(render_view(params, cfg, z_s, lerp_exact(a.z_t, b.z_t, j, n), pose, sampling, resolution));
    }
  }
  return out;
}

TensorArchive latents_archive(const LatentPair& z) {
  TensorArchive a;
  a.set_meta("kind", "latents");
  a.put("z_s", z.z_s);
  a.put("z_t", z.z_t);
  return a;
}

LatentPair latents_from_archive(const TensorArchive& a) { return {a.f32("z_s"), a.f32("z_t")}; }

}  // namespace semfield
