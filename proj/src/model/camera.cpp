#include "semfield/camera.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace semfield {

CameraPose sample_pose(const PoseDistribution& dist, Rng& rng, double radius, double fov_deg) {
  CameraPose pose;
  pose.radius = radius;
  pose.fov_deg = fov_deg;
  const double p = rng.normal(0.0, dist.sigma_pitch);
  const double y = rng.normal(0.0, dist.sigma_yaw);
  pose.pitch = std::clamp(p, -dist.max_pitch, dist.max_pitch);
  pose.yaw = std::clamp(y, -dist.max_yaw, dist.max_yaw);
  return pose;
}

Eigen::Vector3d camera_position(const CameraPose& pose) {
  const double c = std::cos(pose.pitch);
  return pose.radius * Eigen::Vector3d(c * std::sin(pose.yaw), std::sin(pose.pitch), c * std::cos(pose.yaw));
}

CameraFrame camera_frame(const CameraPose& pose) {
  if (std::abs(std::cos(pose.pitch)) < 1e-9) {
    throw std::invalid_argument("camera pitch at ±π/2 makes the up vector degenerate");
  }
  if (!(pose.radius > 0.0) || !(pose.fov_deg > 0.0 && pose.fov_deg < 180.0)) {
    throw std::invalid_argument("camera radius must be positive and fov in (0, 180)");
  }
  CameraFrame f;
  f.origin = camera_position(pose);
  f.forward = (-f.origin).normalized();
  f.right = f.forward.cross(Eigen::Vector3d::UnitY()).normalized();
  f.up = f.right.cross(f.forward);
  f.tan_half_fov = std::tan(pose.fov_deg * std::numbers::pi / 360.0);
  return f;
}

RayGrid pose_to_rays(const CameraPose& pose, int resolution) {
  if (resolution < 1) throw std::invalid_argument("resolution must be at least 1");
  const CameraFrame f = camera_frame(pose);
  RayGrid g;
  g.height = g.width = resolution;
  g.origin = f.origin;
  g.directions.resize(static_cast<Eigen::Index>(resolution) * resolution, 3);
  for (int r = 0; r < resolution; ++r) {
    const double v = 1.0 - 2.0 * (r + 0.5) / resolution;
    for (int c = 0; c < resolution; ++c) {
      const double u = 2.0 * (c + 0.5) / resolution - 1.0;
      const Eigen::Vector3d d = (f.forward + f.tan_half_fov * (u * f.right + v * f.up)).normalized();
      g.directions.row(static_cast<Eigen::Index>(r) * resolution + c) = d.transpose();
    }
  }
  return g;
}

bool project_point(const CameraFrame& frame, int resolution, const Eigen::Vector3d& point, double& col, double& row) {
  const Eigen::Vector3d rel = point - frame.origin;
  const double z = rel.dot(frame.forward);
  if (z <= 0.0) return false;
  const double u = rel.dot(frame.right) / (z * frame.tan_half_fov);
  const double v = rel.dot(frame.up) / (z * frame.tan_half_fov);
  col = (u + 1.0) * 0.5 * resolution - 0.5;
  row = (1.0 - v) * 0.5 * resolution - 0.5;
  return true;
}

}  // namespace semfield
