#pragma once

#include "semfield/diffmath/tensor.hpp"
#include "semfield/rng.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace semfield {

/// Camera on a sphere around the origin, looking at the origin with world up
/// (0, 1, 0). Position is r·(cos θ sin φ, sin θ, cos θ cos φ).
struct CameraPose {
  double pitch = 0.0;
  double yaw = 0.0;
  double radius = 1.0;
  double fov_deg = 12.0;
};

/// Gaussian pose prior, clamped to a box.
struct PoseDistribution {
  double sigma_pitch = 0.15;
  double sigma_yaw = 0.3;
  double max_pitch = 0.5;
  double max_yaw = 1.0;
};

CameraPose sample_pose(const PoseDistribution& dist, Rng& rng, double radius = 1.0, double fov_deg = 12.0);

Eigen::Vector3d camera_position(const CameraPose& pose);

struct CameraFrame {
  Eigen::Vector3d origin;
  Eigen::Vector3d forward;
  Eigen::Vector3d right;
  Eigen::Vector3d up;
  double tan_half_fov = 0.0;
};

/// Throws std::invalid_argument when the view axis is parallel to world up.
CameraFrame camera_frame(const CameraPose& pose);

/// Pinhole rays through pixel centers, row 0 at the top.
struct RayGrid {
  int height = 0;
  int width = 0;
  Eigen::Vector3d origin;
  RowMatrix<double> directions;  // [H*W, 3], unit length

  int count() const { return height * width; }
};

RayGrid pose_to_rays(const CameraPose& pose, int resolution);

/// Continuous pixel coordinates of a world point; the center of pixel (r, c)
/// maps to (c, r). Returns false for points behind the camera.
bool project_point(const CameraFrame& frame, int resolution, const Eigen::Vector3d& point, double& col, double& row);

}  // namespace semfield
