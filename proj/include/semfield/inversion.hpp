#pragma once

#include "semfield/archive.hpp"
#include "semfield/generator.hpp"
#include "semfield/renderer.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace semfield {

/// What to fit and how. The semantic target is either a hard label map or a
/// soft [H, W, k] distribution; the semantic objective is KL(target ‖
/// rendered), which for a label map is the per-pixel cross-entropy.
struct InversionTask {
  LabelMap mask;
  std::optional<Tensor<float>> soft_mask;  // [H, W, k], overrides `mask` in the loss
  std::optional<Tensor<float>> image;      // [H, W, 3]
  CameraPose pose;
  /// Pose is refined by central differences on (pitch, yaw) when set.
  bool optimize_pose = false;
  std::optional<Tensor<float>> init_z_s;
  std::optional<Tensor<float>> init_z_t;
  int steps = 200;
  double lr = 1e-2;
  double w_sem = 0.5;
  double w_rgb = 1.0;
  /// μ·‖z_s − anchor‖², active when `anchor_z_s` is set.
  double mu = 0.0;
  std::optional<Tensor<float>> anchor_z_s;
  /// [H, W, k] soft map of the unedited render. Where `mask` agrees with its
  /// argmax the pixel is held to it by squared error instead of fitted by
  /// cross-entropy, so an unchanged mask is an exact fixed point.
  std::optional<Tensor<float>> preserve;
  /// Seeds random initial codes.
  uint64_t seed = 0;

  int resolution() const { return mask.height; }
  void validate(int k) const;
};

struct TraceRecord {
  int iter = 0;
  double loss = 0;
  double miou = 0;
  std::optional<double> psnr;
};

/// Serializes one record as a JSON object line.
std::string to_ndjson(const TraceRecord& r);

struct InversionResult {
  Tensor<float> z_s;  // [ds]
  Tensor<float> z_t;  // [dt]
  CameraPose pose;
  /// Record i describes the latents after i updates, before update i + 1.
  std::vector<TraceRecord> trace;
  /// Evaluated after the final update.
  TraceRecord final;
  bool cancelled = false;
};

/// Hooks for long-running jobs. `cancelled` is polled once per iteration.
struct InversionControl {
  std::function<bool()> cancelled;
  std::function<void(const TraceRecord&)> progress;
};

class InversionError : public std::runtime_error {
 public:
  InversionError(const std::string& what, std::vector<TraceRecord> trace)
      : std::runtime_error(what), trace(std::move(trace)) {}
  std::vector<TraceRecord> trace;
};

/// Fits z_s to the semantic target with z_t held at a fixed random code
/// (or `init_z_t`). The rgb term is ignored.
InversionResult invert_semantic(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                                const SamplingConfig& sampling, const InversionTask& task,
                                const InversionControl& control = {});

/// Joint fit of (z_s, z_t) to an image and its semantic map.
InversionResult invert_full(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                            const SamplingConfig& sampling, const InversionTask& task,
                            const InversionControl& control = {});

/// Re-fits z_s to an edited mask starting from z_s, with z_t frozen and a
/// proximity pull of strength μ toward the starting z_s.
InversionResult local_edit(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                           const SamplingConfig& sampling, const Tensor<float>& z_s, const Tensor<float>& z_t,
                           const LabelMap& edited, const CameraPose& pose, int steps, double lr, double mu,
                           const InversionControl& control = {});

/// Renders of (z_s_source, z_t_target) at each pose.
std::vector<Render> style_transfer(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                                   const SamplingConfig& sampling, const Tensor<float>& z_s_source,
                                   const Tensor<float>& z_t_target, const std::vector<CameraPose>& poses,
                                   int resolution);

struct LatentPair {
  Tensor<float> z_s;
  Tensor<float> z_t;
};

/// cell(i, j) renders (lerp(z_s¹, z_s², i/(n−1)), lerp(z_t¹, z_t², j/(n−1))).
/// Row-major, n·n entries.
std::vector<Render> morph_grid(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                               const SamplingConfig& sampling, const LatentPair& a, const LatentPair& b, int n,
                               const CameraPose& pose, int resolution);

/// Latents in the tensor-archive format (tensors "z_s", "z_t").
TensorArchive latents_archive(const LatentPair& z);
LatentPair latents_from_archive(const TensorArchive& a);

}  // namespace semfield
