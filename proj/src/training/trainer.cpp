#include "semfield/training.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>

namespace semfield {
namespace {

AdamConfig adam(const TrainConfig& t, double lr) { return {lr, t.beta1, t.beta2, 1e-8}; }

/// Stacks per-record tensors [R, R, C] into [B, R, R, C].
Tensor<float> stack(const std::vector<Tensor<float>>& items, const std::vector<int64_t>& idx) {
  const Shape& s = items.front().shape();
  Shape out_shape{static_cast<int64_t>(idx.size())};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor<float> out(out_shape);
  auto v = out.mutable_values();
  const size_t n = static_cast<size_t>(items.front().size());
  for (size_t b = 0; b < idx.size(); ++b) {
    std::memcpy(v.data() + b * n, items[static_cast<size_t>(idx[b])].data(), n * sizeof(float));
  }
  return out;
}

/// Box filter [R, R, C] → [R/f, R/f, C].
Tensor<float> box_downsample(const Tensor<float>& t, int f) {
  if (f == 1) return t;
  const int64_t r = t.dim(0), c = t.dim(2), o = r / f;
  Tensor<float> out({o, o, c});
  auto v = out.mutable_values();
  const float* in = t.data();
  const float inv = 1.0f / static_cast<float>(f * f);
  for (int64_t y = 0; y < o; ++y)
    for (int64_t x = 0; x < o; ++x)
      for (int64_t ch = 0; ch < c; ++ch) {
        float acc = 0;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) acc += in[((y * f + dy) * r + (x * f + dx)) * c + ch];
        v[static_cast<size_t>((y * o + x) * c + ch)] = acc * inv;
      }
  return out;
}

void require_finite(double value, const char* what, int64_t iter, const std::vector<std::pair<std::string, double>>& parts) {
  if (!std::isfinite(value)) {
    throw TrainingError(std::string("non-finite ") + what + " at iteration " + std::to_string(iter), parts);
  }
}

struct Fake {
  std::vector<CameraPose> poses;
  RenderOutput<float> out;
};

Fake sample_fake(const TrainState& s, const BoundParameters<float>& g, int batch, int resolution, Rng& rng) {
  const Config& c = s.config;
  Fake f;
  const Tensor<float> z_s = sample_latents(rng, batch, c.generator.shape_dim);
  const Tensor<float> z_t = sample_latents(rng, batch, c.generator.texture_dim);
  for (int i = 0; i < batch; ++i) f.poses.push_back(sample_pose(c.camera.pose, rng, c.camera.radius, c.camera.fov_deg));
  f.out = render(g, c.generator, Var<float>(z_s), Var<float>(z_t), f.poses, c.sampling, resolution, &rng);
  return f;
}

void reset_discriminators(TrainState& s, int resolution) {
  s.d_resolution = resolution;
  s.d_color = init_discriminator(s.color_config(), "dc.", s.rng);
  s.d_semantic = init_discriminator(s.semantic_config(), "ds.", s.rng);
  s.opt_dc = Adam(adam(s.config.train, s.config.train.lr_dc), s.d_color);
  s.opt_ds = Adam(adam(s.config.train, s.config.train.lr_ds), s.d_semantic);
}

void put_params(TensorArchive& a, const std::string& prefix, const ParameterSet<float>& p) {
  for (const auto& e : p) a.put(prefix + e.name, e.value);
}

void get_params(const TensorArchive& a, const std::string& prefix, ParameterSet<float>& p) {
  for (auto& e : p) {
    const Tensor<float>& t = a.f32(prefix + e.name);
    if (t.shape() != e.value.shape()) {
      throw ArchiveError(ArchiveError::Kind::malformed, "shape mismatch for " + prefix + e.name);
    }
    e.value = t;
  }
}

int64_t meta_int(const TensorArchive& a, const std::string& key) {
  try {
    return std::stoll(a.meta(key));
  } catch (const std::logic_error&) {
    throw ArchiveError(ArchiveError::Kind::malformed, "metadata '" + key + "' is not an integer");
  }
}

Config config_from(const TensorArchive& a) {
  if (!a.has_meta("kind") || a.meta("kind") != "checkpoint") {
    throw ArchiveError(ArchiveError::Kind::malformed, "archive is not a checkpoint");
  }
  try {
    return parse_config(a.meta("config"));
  } catch (const ConfigError& e) {
    throw ArchiveError(ArchiveError::Kind::malformed, std::string("checkpoint config: ") + e.what());
  }
}

}  // namespace

RealData prepare_real_data(const Dataset& data, int resolution) {
  if (data.records.empty()) throw std::invalid_argument("dataset is empty");
  if (resolution > data.resolution || data.resolution % resolution != 0) {
    throw std::invalid_argument("training resolution " + std::to_string(resolution) +
                                " cannot be derived from dataset resolution " + std::to_string(data.resolution));
  }
  const int f = data.resolution / resolution;
  RealData out;
  out.resolution = resolution;
  out.k = data.k;
  for (const auto& r : data.records) {
    out.images.push_back(box_downsample(r.image, f));
    out.masks.push_back(box_downsample(encode_real_mask(r.mask, data.k), f));
  }
  return out;
}

std::pair<int, int> stage_at(const TrainConfig& cfg, int64_t iteration) {
  std::pair<int, int> stage{cfg.resolution, cfg.batch};
  int64_t best = -1;
  for (const auto& s : cfg.schedule) {
    if (s.iteration <= iteration && s.iteration >= best) {
      best = s.iteration;
      stage = {s.resolution, s.batch};
    }
  }
  return stage;
}

TrainState init_training(const Config& config) {
  config.validate();
  TrainState s;
  s.config = config;
  s.rng = Rng(config.train.seed);
  s.generator = init_generator(config.generator, s.rng);
  s.opt_g = Adam(adam(config.train, config.train.lr_g), s.generator);
  reset_discriminators(s, stage_at(config.train, 0).first);
  return s;
}

std::string to_ndjson(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["L_Dc"] = r.l_dc;
  j["L_Ds"] = r.l_ds;
  j["L_G"] = r.l_g;
  j["pose_loss"] = r.pose_loss;
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

StepRecord train_step(TrainState& s, const RealData& real) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& tc = s.config.train;
  const LossWeights& w = tc.weights;
  const auto [resolution, batch] = stage_at(tc, s.iteration);
  if (real.resolution != resolution) throw std::invalid_argument("real data resolution does not match the stage");
  if (s.d_resolution != resolution) reset_discriminators(s, resolution);

  StepRecord rec;
  rec.iter = s.iteration;
  rec.resolution = resolution;
  rec.batch = batch;
  auto& parts = rec.components;
  const BoundParameters<float> g_const(s.generator, nullptr);
  const auto n_real = static_cast<int64_t>(real.images.size());

  auto real_indices = [&] {
    std::vector<int64_t> idx(static_cast<size_t>(batch));
    for (auto& i : idx) i = s.rng.below(n_real);
    return idx;
  };

  if (tc.image_branch) {
    const auto idx = real_indices();
    const Tensor<float> real_images = stack(real.images, idx);
    const Fake fake = sample_fake(s, g_const, batch, resolution, s.rng);
    Tape<float> tape(w.lambda_c > 0 ? TapeMode::build_grad_graph : TapeMode::first_order);
    const BoundParameters<float> d(s.d_color, &tape);
    const auto l = loss_dc(d, s.color_config(), tape, real_images, fake.out.c.rgb.value(),
                           pose_tensor<float>(fake.poses), w);
    rec.l_dc = l.total.value().item();
    parts.insert(parts.end(), {{"dc_real", l.real}, {"dc_fake", l.fake}, {"dc_r1", l.r1}, {"dc_pose", l.pose}});
    require_finite(rec.l_dc, "L_Dc", s.iteration, parts);
    const Gradients<float> grads = tape.backward(l.total);
    s.opt_dc.step(s.d_color, gradient_list(grads, d));
  }

  if (tc.semantic_branch) {
    const auto idx = real_indices();
    const Tensor<float> real_images = stack(real.images, idx);
    const Tensor<float> real_masks = stack(real.masks, idx);
    const Fake fake = sample_fake(s, g_const, batch, resolution, s.rng);
    Tape<float> tape(w.lambda_s > 0 ? TapeMode::build_grad_graph : TapeMode::first_order);
    const BoundParameters<float> d(s.d_semantic, &tape);
    const auto l = loss_ds(d, s.semantic_config(), tape, real_masks, real_images, fake.out.c.sem_probs.value(),
                           fake.out.c.rgb.value(), w);
    rec.l_ds = l.total.value().item();
    parts.insert(parts.end(), {{"ds_real", l.real}, {"ds_fake", l.fake}, {"ds_r1", l.r1}});
    require_finite(rec.l_ds, "L_Ds", s.iteration, parts);
    const Gradients<float> grads = tape.backward(l.total);
    s.opt_ds.step(s.d_semantic, gradient_list(grads, d));
  }

  {
    Tape<float> tape;
    const BoundParameters<float> g(s.generator, &tape);
    const BoundParameters<float> dc(s.d_color, nullptr);
    const BoundParameters<float> ds(s.d_semantic, nullptr);
    const Fake fake = sample_fake(s, g, batch, resolution, s.rng);
    const GeneratorTerms terms{tc.image_branch, tc.semantic_branch, tc.image_branch};
    const auto l = loss_g(dc, s.color_config(), ds, s.semantic_config(), fake.out, fake.poses, w, terms);
    rec.l_g = l.total.value().item();
    rec.pose_loss = l.pose;
    parts.insert(parts.end(), {{"g_color", l.color}, {"g_semantic", l.semantic}, {"g_pose", l.pose}});
    require_finite(rec.l_g, "L_G", s.iteration, parts);
    if (l.total.tracked()) {
      const Gradients<float> grads = tape.backward(l.total);
      s.opt_g.step(s.generator, gradient_list(grads, g));
    }
  }

  ++s.iteration;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

void train(TrainState& state, const Dataset& data, const std::function<bool(const StepRecord&)>& on_step) {
  std::optional<RealData> real;
  while (state.iteration < state.config.train.iterations) {
    const int res = stage_at(state.config.train, state.iteration).first;
    if (!real || real->resolution != res) real = prepare_real_data(data, res);
    const StepRecord rec = train_step(state, *real);
    if (on_step && !on_step(rec)) break;
  }
}

TensorArchive checkpoint_archive(const TrainState& s) {
  TensorArchive a;
  a.set_meta("kind", "checkpoint");
  a.set_meta("config", to_text(s.config));
  a.set_meta("iteration", std::to_string(s.iteration));
  a.set_meta("d_resolution", std::to_string(s.d_resolution));
  a.set_meta("rng", s.rng.state());
  put_params(a, "g/", s.generator);
  put_params(a, "dc/", s.d_color);
  put_params(a, "ds/", s.d_semantic);
  s.opt_g.save(a, "opt_g");
  s.opt_dc.save(a, "opt_dc");
  s.opt_ds.save(a, "opt_ds");
  return a;
}

TrainState state_from_archive(const TensorArchive& a) {
  TrainState s;
  s.config = config_from(a);
  s.iteration = meta_int(a, "iteration");
  s.d_resolution = static_cast<int>(meta_int(a, "d_resolution"));
  Rng scratch(0);
  s.generator = init_generator(s.config.generator, scratch);
  s.d_color = init_discriminator(s.color_config(), "dc.", scratch);
  s.d_semantic = init_discriminator(s.semantic_config(), "ds.", scratch);
  get_params(a, "g/", s.generator);
  get_params(a, "dc/", s.d_color);
  get_params(a, "ds/", s.d_semantic);
  const TrainConfig& tc = s.config.train;
  s.opt_g = Adam(adam(tc, tc.lr_g), s.generator);
  s.opt_dc = Adam(adam(tc, tc.lr_dc), s.d_color);
  s.opt_ds = Adam(adam(tc, tc.lr_ds), s.d_semantic);
  s.opt_g.load(a, "opt_g", s.generator);
  s.opt_dc.load(a, "opt_dc", s.d_color);
  s.opt_ds.load(a, "opt_ds", s.d_semantic);
  try {
    s.rng.restore(a.meta("rng"));
  } catch (const std::invalid_argument& e) {
    throw ArchiveError(ArchiveError::Kind::malformed, std::string("rng state: ") + e.what());
  }
  return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) { checkpoint_archive(state).save(path); }

TrainState load_checkpoint(const std::filesystem::path& path) { return state_from_archive(TensorArchive::load(path)); }

Model load_model(const std::filesystem::path& path) {
  const TensorArchive a = TensorArchive::load(path);
  Model m;
  m.config = config_from(a);
  // Inference renders are deterministic bin edges; jitter is a training device.
  m.config.sampling.stratified = false;
  m.d_resolution = static_cast<int>(meta_int(a, "d_resolution"));
  Rng scratch(0);
  m.generator = init_generator(m.config.generator, scratch);
  m.d_color = init_discriminator(color_discriminator_config(m.d_resolution), "dc.", scratch);
  get_params(a, "g/", m.generator);
  get_params(a, "dc/", m.d_color);
  return m;
}

}  // namespace semfield

namespace semfield {

PoseHeadError pose_head_error(const ParameterSet<float>& generator, const ParameterSet<float>& discriminator,
                              const Config& config, int resolution, int samples, uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("pose_head_error needs samples >= 1");
  Rng rng(seed);
  const BoundParameters<float> g(generator, nullptr);
  const BoundParameters<float> d(discriminator, nullptr);
  const DiscriminatorConfig dcfg = color_discriminator_config(resolution);
  PoseHeadError err;
  for (int done = 0; done < samples;) {
    const int b = std::min(8, samples - done);
    const Tensor<float> z_s = sample_latents(rng, b, config.generator.shape_dim);
    const Tensor<float> z_t = sample_latents(rng, b, config.generator.texture_dim);
    std::vector<CameraPose> poses;
    for (int i = 0; i < b; ++i) poses.push_back(sample_pose(config.camera.pose, rng, config.camera.radius, config.camera.fov_deg));
    const auto out = render(g, config.generator, Var<float>(z_s), Var<float>(z_t), poses, config.sampling, resolution, &rng);
    const Tensor<float> pred = d_color(d, dcfg, out.c.rgb).pose.value();
    for (int i = 0; i < b; ++i) {
      err.pitch += std::abs(pred[2 * i] - poses[static_cast<size_t>(i)].pitch);
      err.yaw += std::abs(pred[2 * i + 1] - poses[static_cast<size_t>(i)].yaw);
    }
    done += b;
  }
  err.pitch /= samples;
  err.yaw /= samples;
  return err;
}

}  // namespace semfield
