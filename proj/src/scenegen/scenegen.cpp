#include "semfield/scenegen.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace semfield {

PrimitiveScene sample_scene(Rng& rng, const SceneRanges& ranges) {
  if (ranges.k < 2) throw std::invalid_argument("scene needs k >= 2");
  PrimitiveScene scene;
  const int max_count = std::min(3, ranges.k - 1);
  const int count = 1 + static_cast<int>(rng.below(max_count));
  std::vector<int> classes(static_cast<size_t>(ranges.k - 1));
  std::iota(classes.begin(), classes.end(), 1);
  for (int i = 0; i < count; ++i) {
    // Partial Fisher-Yates keeps class ids distinct.
    const auto j = static_cast<size_t>(i + rng.below(static_cast<int64_t>(classes.size()) - i));
    std::swap(classes[static_cast<size_t>(i)], classes[j]);

    Primitive p;
    p.kind = rng.below(2) == 0 ? PrimitiveKind::sphere : PrimitiveKind::box;
    Eigen::Vector3d c;
    do {
      c = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    } while (c.squaredNorm() > 1.0);
    p.center = c * ranges.max_center_radius;
    p.size = rng.uniform(ranges.min_size, ranges.max_size);
    for (int a = 0; a < 3; ++a) p.albedo[a] = rng.uniform(ranges.min_albedo, ranges.max_albedo);
    p.class_id = classes[static_cast<size_t>(i)];
    scene.primitives.push_back(p);
  }
  return scene;
}

std::optional<double> intersect(const Primitive& p, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                Eigen::Vector3d* normal) {
  const Eigen::Vector3d oc = origin - p.center;
  if (p.kind == PrimitiveKind::sphere) {
    const double b = oc.dot(dir);
    const double c = oc.squaredNorm() - p.size * p.size;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double s = std::sqrt(disc);
    double t = -b - s;
    if (t <= 0.0) t = -b + s;
    if (t <= 0.0) return std::nullopt;
    if (normal) *normal = (oc + t * dir).normalized();
    return t;
  }
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-300) {
      if (std::abs(oc[a]) > p.size) return std::nullopt;
      continue;
    }
    double lo = (-p.size - oc[a]) / dir[a];
    double hi = (p.size - oc[a]) / dir[a];
    if (lo > hi) std::swap(lo, hi);
    if (lo > t0) {
      t0 = lo;
      axis = a;
    }
    t1 = std::min(t1, hi);
  }
  if (t0 > t1 || t1 <= 0.0) return std::nullopt;
  if (t0 <= 0.0) return std::nullopt;  // camera inside the box is not a supported case
  if (normal) {
    normal->setZero();
    (*normal)[axis] = dir[axis] > 0 ? -1.0 : 1.0;
  }
  return t0;
}

GroundTruth raytrace_gt(const PrimitiveScene& scene, const CameraPose& pose, int resolution, double far) {
  const RayGrid rays = pose_to_rays(pose, resolution);
  GroundTruth gt;
  gt.image = Tensor<float>({resolution, resolution, 3});
  gt.mask = LabelMap(resolution, resolution);
  gt.depth = Tensor<float>::full({resolution, resolution}, static_cast<float>(far));
  auto img = gt.image.mutable_values();
  auto depth = gt.depth.mutable_values();
  for (int i = 0; i < rays.count(); ++i) {
    const Eigen::Vector3d dir = rays.directions.row(i).transpose();
    double best = std::numeric_limits<double>::infinity();
    const Primitive* hit = nullptr;
    Eigen::Vector3d n_best;
    for (const auto& p : scene.primitives) {
      Eigen::Vector3d n;
      if (auto t = intersect(p, rays.origin, dir, &n); t && *t < best) {
        best = *t;
        hit = &p;
        n_best = n;
      }
    }
    if (!hit) continue;
    const double shade = kAmbient + (1.0 - kAmbient) * std::max(0.0, n_best.dot(kLightDirection));
    for (int a = 0; a < 3; ++a) img[static_cast<size_t>(i) * 3 + a] = static_cast<float>(hit->albedo[a] * shade);
    gt.mask.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(hit->class_id);
    depth[static_cast<size_t>(i)] = static_cast<float>(best);
  }
  return gt;
}

void DatasetSpec::validate() const {
  if (k < 2 || k > 255) throw std::invalid_argument("k must be in [2, 255]");
  if (resolution != 32 && resolution != 64 && resolution != 128) {
    throw std::invalid_argument("resolution must be 32, 64 or 128");
  }
  if (n_scenes < 0) throw std::invalid_argument("n_scenes must be non-negative");
  if (!(pose.sigma_pitch >= 0) || !(pose.sigma_yaw >= 0)) throw std::invalid_argument("pose sigmas must be >= 0");
}

Dataset make_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.k = spec.k;
  ds.resolution = spec.resolution;
  ds.records.reserve(static_cast<size_t>(spec.n_scenes));
  Rng master(spec.seed);
  SceneRanges ranges;
  ranges.k = spec.k;
  for (int i = 0; i < spec.n_scenes; ++i) {
    Rng rng = master.split();
    const PrimitiveScene scene = sample_scene(rng, ranges);
    const CameraPose pose = sample_pose(spec.pose, rng, spec.radius, spec.fov_deg);
    GroundTruth gt = raytrace_gt(scene, pose, spec.resolution);
    ds.records.push_back({std::move(gt.image), std::move(gt.mask), pose});
  }
  return ds;
}

std::filesystem::path generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  const Dataset ds = make_dataset(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  nlohmann::json records = nlohmann::json::array();
  for (size_t i = 0; i < ds.records.size(); ++i) {
    char image_name[32];
    char mask_name[32];
    std::snprintf(image_name, sizeof image_name, "image_%05zu.png", i);
    std::snprintf(mask_name, sizeof mask_name, "mask_%05zu.png", i);
    const auto& r = ds.records[i];
    write_file_atomic(out_dir / image_name, encode_rgb_png(r.image));
    write_file_atomic(out_dir / mask_name, encode_label_png(r.mask));
    records.push_back({{"image", image_name}, {"mask", mask_name}, {"pose", {r.pose.pitch, r.pose.yaw}}});
  }
  nlohmann::json manifest = {
      {"k", spec.k},
      {"resolution", spec.resolution},
      {"radius", spec.radius},
      {"fov_deg", spec.fov_deg},
      {"seed", spec.seed},
      {"records", records},
  };
  const auto path = out_dir / "manifest.json";
  write_file_atomic(path, manifest.dump(1));
  return path;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const Bytes raw = read_file(manifest_path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto dir = manifest_path.parent_path();
  Dataset ds;
  try {
    ds.k = manifest.at("k").get<int>();
    ds.resolution = manifest.at("resolution").get<int>();
    const double radius = manifest.value("radius", 1.0);
    const double fov = manifest.value("fov_deg", 12.0);
    for (const auto& r : manifest.at("records")) {
      DatasetRecord rec;
      rec.image = decode_rgb_png(read_file(dir / r.at("image").get<std::string>()));
      rec.mask = decode_label_png(read_file(dir / r.at("mask").get<std::string>()));
      rec.pose = CameraPose{r.at("pose").at(0).get<double>(), r.at("pose").at(1).get<double>(), radius, fov};
      if (rec.mask.height != ds.resolution || rec.image.dim(0) != ds.resolution) {
        throw IoError("record resolution does not match manifest in " + manifest_path.string());
      }
      ds.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace semfield
