#pragma once

#include "semfield/camera.hpp"
#include "semfield/image_io.hpp"
#include "semfield/rng.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace semfield {

enum class PrimitiveKind { sphere, box };

/// Sphere of radius `size`, or axis-aligned cube of half-extent `size`.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double size = 0.05;
  Eigen::Vector3d albedo = Eigen::Vector3d::Constant(0.8);
  int class_id = 1;
};

struct PrimitiveScene {
  std::vector<Primitive> primitives;
};

/// Uniform ranges the sampler draws from.
struct SceneRanges {
  int k = 4;
  double max_center_radius = 0.045;
  double min_size = 0.025;
  double max_size = 0.05;
  double min_albedo = 0.2;
  double max_albedo = 1.0;
};

PrimitiveScene sample_scene(Rng& rng, const SceneRanges& ranges = {});

/// Ray hit against a single primitive: smallest t > 0 and outward normal.
std::optional<double> intersect(const Primitive& p, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                Eigen::Vector3d* normal = nullptr);

struct GroundTruth {
  Tensor<float> image;  // [H, W, 3]
  LabelMap mask;
  Tensor<float> depth;  // [H, W], far plane where nothing is hit
};

/// Fixed directional light and ambient term shared by every scene.
inline const Eigen::Vector3d kLightDirection = Eigen::Vector3d(0.4, 0.6, 0.7).normalized();
inline constexpr double kAmbient = 0.3;

GroundTruth raytrace_gt(const PrimitiveScene& scene, const CameraPose& pose, int resolution, double far = 1.2);

struct DatasetSpec {
  int n_scenes = 100;
  int resolution = 32;
  int k = 4;
  PoseDistribution pose;
  double radius = 1.0;
  double fov_deg = 12.0;
  uint64_t seed = 0;

  /// Throws std::invalid_argument on k < 2 or a resolution outside {32, 64, 128}.
  void validate() const;
};

struct DatasetRecord {
  Tensor<float> image;
  LabelMap mask;
  CameraPose pose;
};

struct Dataset {
  int k = 0;
  int resolution = 0;
  std::vector<DatasetRecord> records;
};

/// One monocular view per scene, each with its own pose draw.
Dataset make_dataset(const DatasetSpec& spec);

/// Writes image_NNNNN.png, mask_NNNNN.png and manifest.json under `out_dir`
/// and returns the manifest path.
std::filesystem::path generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

Dataset load_dataset(const std::filesystem::path& manifest);

}  // namespace semfield
