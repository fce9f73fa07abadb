#pragma once

#include "semfield/camera.hpp"
#include "semfield/generator.hpp"
#include "semfield/renderer.hpp"
#include "semfield/scenegen.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace semfield {

/// Invalid or unreadable configuration. The message names the key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double lambda_c = 10.0;
  double lambda_s = 10.0;
  double lambda_p = 10.0;
  /// Squared L2 pose distance when true, plain L2 otherwise.
  bool squared_pose = true;
};

/// From `iteration` on, train at `resolution` with `batch`.
struct ScheduleStage {
  int iteration = 0;
  int resolution = 32;
  int batch = 8;
};

struct TrainConfig {
  int resolution = 32;
  int batch = 8;
  int iterations = 2000;
  uint64_t seed = 0;
  LossWeights weights;
  double lr_g = 6e-5;
  double lr_dc = 2e-4;
  double lr_ds = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  /// Ablations: without image rendering D_c is not trained and L_G has no
  /// color term; without semantic rendering the same holds for D_s.
  bool image_branch = true;
  bool semantic_branch = true;
  std::vector<ScheduleStage> schedule;
  int log_every = 1;
  int checkpoint_every = 0;
};

struct InversionConfig {
  int steps = 200;
  double lr = 1e-2;
  double w_rgb = 1.0;
  double w_sem = 0.5;
  double mu = 0.1;
  bool optimize_pose = false;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string checkpoint;
  std::string artifact_dir = "artifacts";
  int max_concurrent_jobs = 1;
  int queue_limit = 8;
  int retention = 64;

  void validate() const;
};

struct CameraConfig {
  double radius = 1.0;
  double fov_deg = 12.0;
  PoseDistribution pose;
};

/// Everything the tools read from one key-value file. The text format is
/// INI-style: `[section]` headers and `key = value` lines, `#` or `;`
/// comments. Unknown keys are rejected.
struct Config {
  GeneratorConfig generator;
  SamplingConfig sampling;
  CameraConfig camera;
  TrainConfig train;
  InversionConfig inversion;
  DatasetSpec dataset;
  ServiceConfig service;
  std::string manifest;

  void validate() const;
};

Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);
/// Canonical text; parse_config(to_text(c)) reproduces c exactly.
std::string to_text(const Config& c);

}  // namespace semfield
