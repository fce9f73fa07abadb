#include "semfield/metrics.hpp"
#include "semfield/training.hpp"

#include <cmath>

namespace semfield {
namespace {

/// Evenly spread views around the frontal pose, alternating pitch sign.
std::vector<CameraPose> sanity_views(const CameraConfig& cam, int views) {
  std::vector<CameraPose> out;
  const double yaw_span = std::min(cam.pose.max_yaw, 2 * cam.pose.sigma_yaw);
  const double pitch = std::min(cam.pose.max_pitch, cam.pose.sigma_pitch);
  for (int i = 0; i < views; ++i) {
    const double u = views == 1 ? 0.5 : static_cast<double>(i) / (views - 1);
    out.push_back({(i % 2 ? 1.0 : -1.0) * pitch * (views == 1 ? 0 : 1), yaw_span * (2 * u - 1), cam.radius, cam.fov_deg});
  }
  return out;
}

}  // namespace

SanityResult reconstruct_sanity(ParameterSet<float>& params, const GeneratorConfig& gen, const SamplingConfig& sampling,
                                const CameraConfig& camera, const PrimitiveScene& scene, const SanityOptions& opt) {
  if (opt.views < 1 || opt.rays_per_step < 1 || opt.steps < 0) throw std::invalid_argument("reconstruct_sanity: bad options");
  Rng rng(opt.seed);
  const Tensor<float> z_s = sample_latents(rng, 1, gen.shape_dim);
  const Tensor<float> z_t = sample_latents(rng, 1, gen.texture_dim);
  const auto poses = sanity_views(camera, opt.views);
  const int k = gen.k;

  std::vector<GroundTruth> truth;
  const int64_t per_view = static_cast<int64_t>(opt.resolution) * opt.resolution;
  const int64_t total_rays = per_view * opt.views;
  std::vector<float> origins, dirs, rgb, onehot;
  origins.reserve(static_cast<size_t>(total_rays * 3));
  dirs.reserve(static_cast<size_t>(total_rays * 3));
  rgb.reserve(static_cast<size_t>(total_rays * 3));
  onehot.assign(static_cast<size_t>(total_rays * k), 0.0f);
  for (size_t v = 0; v < poses.size(); ++v) {
    truth.push_back(raytrace_gt(scene, poses[v], opt.resolution, sampling.far));
    const RayGrid grid = pose_to_rays(poses[v], opt.resolution);
    for (int64_t j = 0; j < per_view; ++j) {
      for (int a = 0; a < 3; ++a) {
        origins.push_back(static_cast<float>(grid.origin[a]));
        dirs.push_back(static_cast<float>(grid.directions(j, a)));
        rgb.push_back(truth.back().image.data()[j * 3 + a]);
      }
      const int label = truth.back().mask.labels[static_cast<size_t>(j)];
      if (label >= k) throw std::out_of_range("scene class exceeds generator k");
      onehot[static_cast<size_t>((static_cast<int64_t>(v) * per_view + j) * k + label)] = 1.0f;
    }
  }

  auto evaluate = [&](double& psnr_out, double& miou_out) {
    SamplingConfig fixed = sampling;
    fixed.stratified = false;
    double ps = 0, mi = 0;
    for (size_t v = 0; v < poses.size(); ++v) {
      const Render r = render_view(params, gen, z_s, z_t, poses[v], fixed, opt.resolution);
      const double p = psnr(r.rgb, truth[v].image);
      ps += std::isinf(p) ? 99.0 : p;
      mi += miou(r.labels, truth[v].mask, k);
    }
    psnr_out = ps / static_cast<double>(poses.size());
    miou_out = mi / static_cast<double>(poses.size());
  };

  SanityResult result;
  double unused = 0;
  evaluate(result.initial_psnr, unused);

  Adam adam({opt.lr, 0.9, 0.999, 1e-8}, params);
  const int64_t n = opt.rays_per_step;
  double running = 0;
  for (int step = 0; step < opt.steps; ++step) {
    Tensor<float> o({1, n, 3}), d({1, n, 3}), tc({1, n, 3}), ts({1, n, static_cast<int64_t>(k)});
    auto ov = o.mutable_values(), dv = d.mutable_values(), cv = tc.mutable_values(), sv = ts.mutable_values();
    for (int64_t i = 0; i < n; ++i) {
      const auto src = static_cast<size_t>(rng.below(total_rays));
      for (int a = 0; a < 3; ++a) {
        ov[static_cast<size_t>(i * 3 + a)] = origins[src * 3 + static_cast<size_t>(a)];
        dv[static_cast<size_t>(i * 3 + a)] = dirs[src * 3 + static_cast<size_t>(a)];
        cv[static_cast<size_t>(i * 3 + a)] = rgb[src * 3 + static_cast<size_t>(a)];
      }
      for (int c = 0; c < k; ++c) sv[static_cast<size_t>(i * k + c)] = onehot[src * static_cast<size_t>(k) + static_cast<size_t>(c)];
    }
    Tape<float> tape;
    const BoundParameters<float> p(params, &tape);
    const Modulation<float> ms = map_latent(p, gen, Var<float>(z_s), LatentKind::shape);
    const Modulation<float> mt = map_latent(p, gen, Var<float>(z_t), LatentKind::texture);
    const Composite<float> c = render_rays(p, gen, ms, mt, RayBatch<float>{o, d}, sampling, &rng);
    Var<float> loss = mean(square(sub(c.rgb, Var<float>(tc))));
    if (opt.w_sem > 0) loss = add(loss, scale(mean(square(sub(c.sem_probs, Var<float>(ts)))), static_cast<float>(opt.w_sem)));
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw TrainingError("reconstruction loss is not finite", {{"loss", value}, {"step", step}});
    if (step == 0) {
      result.initial_loss = value;
      running = value;
    } else {
      running = 0.95 * running + 0.05 * value;
    }
    if (running > 10 * result.initial_loss) {
      throw TrainingError("reconstruction diverged", {{"initial_loss", result.initial_loss}, {"running_loss", running}, {"step", step}});
    }
    result.final_loss = running;
    const Gradients<float> g = tape.backward(loss);
    adam.step(params, gradient_list(g, p));
    if (opt.report && opt.report_every > 0 && (step + 1) % opt.report_every == 0) opt.report(step + 1, running);
  }

  evaluate(result.final_psnr, result.final_miou);
  return result;
}

}  // namespace semfield
