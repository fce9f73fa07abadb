#include "semfield/config.hpp"
#include "semfield/image_io.hpp"
#include "semfield/inversion.hpp"
#include "semfield/metrics.hpp"
#include "semfield/runtime.hpp"
#include "semfield/scenegen.hpp"
#include "semfield/service.hpp"
#include "semfield/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace semfield;

namespace {

struct PoseArgs {
  double pitch = 0;
  double yaw = 0;
  void add(CLI::App* app) {
    app->add_option("--pitch", pitch, "camera pitch in radians");
    app->add_option("--yaw", yaw, "camera yaw in radians");
  }
  CameraPose pose(const Config& c) const { return {pitch, yaw, c.camera.radius, c.camera.fov_deg}; }
};

/// Loads a checkpoint; a --config file, when given, supplies the inversion,
/// sampling and service settings (never the architecture).
Model open_model(const std::string& ckpt, const std::string& config_path) {
  Model m = load_model(ckpt);
  if (!config_path.empty()) {
    const Config c = load_config(config_path);
    m.config.inversion = c.inversion;
    m.config.service = c.service;
    m.config.sampling = c.sampling;
    m.config.sampling.stratified = false;
  }
  return m;
}

void write_render(const Render& r, const fs::path& dir, const std::string& stem, const SamplingConfig& s) {
  fs::create_directories(dir);
  write_file_atomic(dir / (stem + "image.png"), encode_rgb_png(r.rgb));
  write_file_atomic(dir / (stem + "mask.png"), encode_label_png(r.labels));
  write_file_atomic(dir / (stem + "mask_preview.png"), encode_label_preview_png(r.labels));
  write_file_atomic(dir / (stem + "depth.png"), encode_depth_png(r.depth, static_cast<float>(s.near), static_cast<float>(s.far)));
}

std::string trace_text(const std::vector<TraceRecord>& trace) {
  std::string out;
  for (const auto& r : trace) out += to_ndjson(r) + "\n";
  return out;
}

int run_dataset_gen(const std::string& config, const std::string& out) {
  const Config c = load_config(config);
  const fs::path manifest = generate_dataset(c.dataset, out);
  std::printf("%s\n", manifest.string().c_str());
  return 0;
}

int run_train(const std::string& config, const std::string& out, const std::string& resume, int iterations) {
  Config c = load_config(config);
  if (iterations >= 0) c.train.iterations = iterations;
  TrainState state = resume.empty() ? init_training(c) : load_checkpoint(resume);
  state.config.train.iterations = c.train.iterations;
  const Dataset data = c.manifest.empty() ? make_dataset(c.dataset) : load_dataset(c.manifest);
  if (data.k != state.config.generator.k) throw std::runtime_error("dataset classes do not match generator k");
  fs::create_directories(out);
  std::ofstream log(fs::path(out) / "train.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  const fs::path ckpt = fs::path(out) / "checkpoint.fnrf";
  const int log_every = std::max(1, c.train.log_every);
  train(state, data, [&](const StepRecord& r) {
    if (r.iter % log_every == 0) {
      log << to_ndjson(r) << "\n";
      log.flush();
    }
    if (c.train.checkpoint_every > 0 && state.iteration % c.train.checkpoint_every == 0) save_checkpoint(state, ckpt);
    return true;
  });
  save_checkpoint(state, ckpt);
  std::printf("%s\n", ckpt.string().c_str());
  return 0;
}

LatentPair latents_or_sample(const std::string& path, uint64_t seed, const GeneratorConfig& g) {
  if (!path.empty()) return latents_from_archive(TensorArchive::load(path));
  Rng rng(seed);
  return {sample_latents(rng, 1, g.shape_dim).reshaped({g.shape_dim}), sample_latents(rng, 1, g.texture_dim).reshaped({g.texture_dim})};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Semantic radiance field generator: data, training, rendering, inversion and service"};
  app.require_subcommand(1);

  std::string config, out, ckpt, latents, target, image, mask, trace, a_path, b_path, resume;
  int iterations = -1, steps = -1, n = 3, resolution = 0, samples = 16, port = -1;
  uint64_t seed = 0;
  double lr = -1, mu = -1;
  std::string host, artifacts;
  PoseArgs pose;

  auto* dataset = app.add_subcommand("dataset", "procedural dataset tools");
  dataset->require_subcommand(1);
  auto* gen = dataset->add_subcommand("gen", "generate images, masks and a manifest");
  gen->add_option("--config", config, "config file")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "adversarial training");
  train_cmd->add_option("--config", config, "config file")->required();
  train_cmd->add_option("--out", out, "output directory")->required();
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  train_cmd->add_option("--iterations", iterations, "override train.iterations");

  auto* render_cmd = app.add_subcommand("render", "render one view");
  render_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  render_cmd->add_option("--config", config, "config file");
  render_cmd->add_option("--out", out, "output directory")->required();
  render_cmd->add_option("--latents", latents, "latent archive (random codes otherwise)");
  render_cmd->add_option("--seed", seed, "seed for random codes");
  render_cmd->add_option("--resolution", resolution, "output resolution");
  pose.add(render_cmd);

  auto* invert_cmd = app.add_subcommand("invert", "invert a semantic mask (and optionally an image)");
  invert_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  invert_cmd->add_option("--config", config, "config file");
  invert_cmd->add_option("--target", target, "label PNG")->required();
  invert_cmd->add_option("--image", image, "RGB PNG for full inversion");
  invert_cmd->add_option("--steps", steps, "optimizer steps");
  invert_cmd->add_option("--lr", lr, "learning rate");
  invert_cmd->add_option("--seed", seed, "seed for the initial codes");
  invert_cmd->add_option("--trace", trace, "NDJSON trace path");
  invert_cmd->add_option("--out", out, "output directory")->required();
  pose.add(invert_cmd);

  auto* edit_cmd = app.add_subcommand("edit", "re-fit the shape code to an edited mask");
  edit_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  edit_cmd->add_option("--config", config, "config file");
  edit_cmd->add_option("--latents", latents, "latent archive to edit")->required();
  edit_cmd->add_option("--mask", mask, "edited label PNG")->required();
  edit_cmd->add_option("--steps", steps, "optimizer steps");
  edit_cmd->add_option("--lr", lr, "learning rate");
  edit_cmd->add_option("--mu", mu, "proximity weight");
  edit_cmd->add_option("--trace", trace, "NDJSON trace path");
  edit_cmd->add_option("--out", out, "output directory")->required();
  pose.add(edit_cmd);

  auto* morph_cmd = app.add_subcommand("morph", "shape × texture interpolation grid");
  morph_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  morph_cmd->add_option("--config", config, "config file");
  morph_cmd->add_option("--a", a_path, "first latent archive")->required();
  morph_cmd->add_option("--b", b_path, "second latent archive")->required();
  morph_cmd->add_option("--n", n, "grid size")->check(CLI::Range(2, 16));
  morph_cmd->add_option("--resolution", resolution, "output resolution");
  morph_cmd->add_option("--out", out, "output directory")->required();
  pose.add(morph_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "metrics report for a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval_cmd->add_option("--config", config, "config file");
  eval_cmd->add_option("--samples", samples, "number of sampled codes")->check(CLI::Range(1, 1000));
  eval_cmd->add_option("--seed", seed, "sampling seed");
  eval_cmd->add_option("--out", out, "output directory")->required();

  auto* serve_cmd = app.add_subcommand("serve", "HTTP service");
  serve_cmd->add_option("--config", config, "config file")->required();
  serve_cmd->add_option("--ckpt", ckpt, "checkpoint (defaults to service.checkpoint)");
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("--port", port, "port");
  serve_cmd->add_option("--artifacts", artifacts, "artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_dataset_gen(config, out);
    if (train_cmd->parsed()) return run_train(config, out, resume, iterations);

    if (serve_cmd->parsed()) {
      const Config c = load_config(config);
      ServiceConfig sc = c.service;
      if (!ckpt.empty()) sc.checkpoint = ckpt;
      if (!host.empty()) sc.host = host;
      if (port >= 0) sc.port = port;
      if (!artifacts.empty()) sc.artifact_dir = artifacts;
      if (sc.checkpoint.empty()) throw std::runtime_error("no checkpoint given (--ckpt or service.checkpoint)");
      Model m = open_model(sc.checkpoint, config);
      Service service(sc, std::move(m));
      std::printf("listening on %s:%d\n", sc.host.c_str(), sc.port);
      std::fflush(stdout);
      return service.listen() ? 0 : 2;
    }

    const Model m = open_model(ckpt, config);
    const auto& g = m.config.generator;
    const auto& s = m.config.sampling;
    const CameraPose view = pose.pose(m.config);
    const int res = resolution > 0 ? resolution : m.d_resolution;

    if (render_cmd->parsed()) {
      const LatentPair z = latents_or_sample(latents, seed, g);
      write_render(render_view(m.generator, g, z.z_s, z.z_t, view, s, res), out, "", s);
      latents_archive(z).save(fs::path(out) / "latents.fnrf");
      return 0;
    }

    if (invert_cmd->parsed()) {
      InversionTask task;
      task.mask = decode_label_png(read_file(target));
      if (!image.empty()) task.image = decode_rgb_png(read_file(image));
      task.pose = view;
      task.steps = steps >= 0 ? steps : m.config.inversion.steps;
      task.lr = lr > 0 ? lr : m.config.inversion.lr;
      task.w_rgb = m.config.inversion.w_rgb;
      task.w_sem = m.config.inversion.w_sem;
      task.optimize_pose = m.config.inversion.optimize_pose;
      task.seed = seed;
      const InversionResult r = task.image ? invert_full(m.generator, g, s, task) : invert_semantic(m.generator, g, s, task);
      fs::create_directories(out);
      write_file_atomic(trace.empty() ? fs::path(out) / "trace.jsonl" : fs::path(trace), trace_text(r.trace));
      latents_archive({r.z_s, r.z_t}).save(fs::path(out) / "latents.fnrf");
      write_render(render_view(m.generator, g, r.z_s, r.z_t, r.pose, s, task.resolution()), out, "", s);
      std::printf("final mIoU %.4f\n", r.final.miou);
      return 0;
    }

    if (edit_cmd->parsed()) {
      const LatentPair z = latents_from_archive(TensorArchive::load(latents));
      const LabelMap edited = decode_label_png(read_file(mask));
      const InversionResult r = local_edit(m.generator, g, s, z.z_s, z.z_t, edited, view,
                                           steps >= 0 ? steps : m.config.inversion.steps,
                                           lr > 0 ? lr : m.config.inversion.lr, mu >= 0 ? mu : m.config.inversion.mu);
      fs::create_directories(out);
      write_file_atomic(trace.empty() ? fs::path(out) / "trace.jsonl" : fs::path(trace), trace_text(r.trace));
      latents_archive({r.z_s, r.z_t}).save(fs::path(out) / "latents.fnrf");
      write_render(render_view(m.generator, g, r.z_s, r.z_t, view, s, edited.height), out, "", s);
      return 0;
    }

    if (morph_cmd->parsed()) {
      const LatentPair a = latents_from_archive(TensorArchive::load(a_path));
      const LatentPair b = latents_from_archive(TensorArchive::load(b_path));
      const auto grid = morph_grid(m.generator, g, s, a, b, n, view, res);
      for (size_t c = 0; c < grid.size(); ++c) {
        write_render(grid[c], out, "cell" + std::to_string(c / n) + "_" + std::to_string(c % n) + "_", s);
      }
      return 0;
    }

    if (eval_cmd->parsed()) {
      nlohmann::ordered_json report;
      const PoseHeadError pe = pose_head_error(m.generator, m.d_color, m.config, m.d_resolution, samples, seed);
      report["pose_mae_pitch"] = pe.pitch;
      report["pose_mae_yaw"] = pe.yaw;
      Rng rng(seed);
      double err = 0;
      int counted = 0;
      for (int i = 0; i < samples; ++i) {
        const LatentPair z{sample_latents(rng, 1, g.shape_dim).reshaped({g.shape_dim}),
                           sample_latents(rng, 1, g.texture_dim).reshaped({g.texture_dim})};
        const CameraPose a{0, 0, m.config.camera.radius, m.config.camera.fov_deg};
        CameraPose b = a;
        b.yaw = 0.2;
        try {
          err += reprojection_consistency(m.generator, g, z.z_s, z.z_t, a, b, s, m.d_resolution).mean_error;
          ++counted;
        } catch (const std::runtime_error&) {
          // Empty renders have nothing to reproject.
        }
      }
      report["reprojection_error"] = counted ? nlohmann::ordered_json(err / counted) : nlohmann::ordered_json(nullptr);
      report["reprojection_samples"] = counted;
      fs::create_directories(out);
      write_file_atomic(fs::path(out) / "metrics.json", report.dump(2) + "\n");
      std::printf("%s\n", report.dump().c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
