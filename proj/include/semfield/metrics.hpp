#pragma once

#include "semfield/camera.hpp"
#include "semfield/generator.hpp"
#include "semfield/image_io.hpp"
#include "semfield/renderer.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace semfield {

/// k×k counts, row = ground truth, column = prediction.
struct ConfusionTable {
  int k = 0;
  std::vector<int64_t> counts;

  int64_t at(int truth, int pred) const { return counts[static_cast<size_t>(truth) * k + pred]; }
  int64_t total() const;
};

ConfusionTable confusion(const LabelMap& pred, const LabelMap& gt, int k);

/// Mean IoU over classes present in at least one of the two maps.
double miou(const LabelMap& pred, const LabelMap& gt, int k);

/// Returned by psnr for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10·log10(1 / MSE) for images in [0, 1].
double psnr(const Tensor<float>& a, const Tensor<float>& b);

/// A rendered view as needed for reprojection.
struct ViewSample {
  CameraPose pose;
  Tensor<float> rgb;      // [H, W, 3]
  Tensor<float> depth;    // [H, W], composited Σ w·t
  Tensor<float> opacity;  // [H, W], Σ w
};

struct ReprojectionResult {
  double mean_error = 0.0;
  int64_t valid_pixels = 0;
};

/// Warps view a into view b: each pixel of a with opacity ≥ 0.5 is lifted to
/// 3D at its normalized depth (Σ w·t / Σ w), projected into b, and compared
/// with b's bilinearly sampled color where b's opacity is also ≥ 0.5.
/// Returns the mean absolute color difference; throws std::runtime_error when
/// no pixel qualifies.
ReprojectionResult reproject(const ViewSample& a, const ViewSample& b);

ReprojectionResult reprojection_consistency(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                                            const Tensor<float>& z_s, const Tensor<float>& z_t,
                                            const CameraPose& pose_a, const CameraPose& pose_b,
                                            const SamplingConfig& sampling, int resolution);

}  // namespace semfield
