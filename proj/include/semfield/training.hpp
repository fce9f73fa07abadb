#pragma once

#include "semfield/adversary.hpp"
#include "semfield/archive.hpp"
#include "semfield/config.hpp"
#include "semfield/generator.hpp"
#include "semfield/renderer.hpp"
#include "semfield/scenegen.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace semfield {

/// f(t) = −log(1 + exp(−t)), evaluated without overflow.
double gan_f(double t);

/// Raised when a loss goes non-finite. `components` holds the named terms
/// of the step that failed.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::vector<std::pair<std::string, double>> components)
      : std::runtime_error(what), components(std::move(components)) {}
  std::vector<std::pair<std::string, double>> components;
};

template <typename S>
struct DiscriminatorLoss {
  Var<S> total;
  double real = 0;  // mean softplus(−D(real))
  double fake = 0;  // mean softplus(D(fake))
  double r1 = 0;    // mean squared input-gradient norm on reals, unweighted
  double pose = 0;  // pose regression on fakes, unweighted (D_c only)
};

/// Mean pose distance between prediction [B, 2] and target [B, 2].
template <typename S>
Var<S> pose_distance(const Var<S>& predicted, const Tensor<S>& target, bool squared);

/// Poses as a [B, 2] (pitch, yaw) tensor.
template <typename S>
Tensor<S> pose_tensor(const std::vector<CameraPose>& poses);

/// `tape` must be in build_grad_graph mode when lambda_c > 0 so the R1 term
/// can be differentiated. Fakes enter as constants. `fake_poses` supervises
/// the pose head and is ignored when lambda_p = 0.
template <typename S>
DiscriminatorLoss<S> loss_dc(const BoundParameters<S>& d, const DiscriminatorConfig& cfg, Tape<S>& tape,
                             const Tensor<S>& real_images, const Tensor<S>& fake_images,
                             const Tensor<S>& fake_poses, const LossWeights& w);

/// Pairs are (semantic map [B, H, W, k], image [B, H, W, 3]); the R1
/// gradient is taken with respect to both halves of the pair.
template <typename S>
DiscriminatorLoss<S> loss_ds(const BoundParameters<S>& d, const DiscriminatorConfig& cfg, Tape<S>& tape,
                             const Tensor<S>& real_masks, const Tensor<S>& real_images, const Tensor<S>& fake_sem,
                             const Tensor<S>& fake_images, const LossWeights& w);

/// Which parts of the generator objective are active.
struct GeneratorTerms {
  bool color = true;
  bool semantic = true;
  bool pose = true;
};

template <typename S>
struct GeneratorLoss {
  Var<S> total;
  double color = 0;     // mean softplus(−D_c(fake))
  double semantic = 0;  // mean softplus(−D_s(sem, fake)) with color detached
  double pose = 0;      // unweighted pose distance
};

/// `fake` must come from a render whose graph reaches the generator
/// parameters. The semantic term sees `rgb_color_detached`, so no gradient
/// from it reaches color-only parameters.
template <typename S>
GeneratorLoss<S> loss_g(const BoundParameters<S>& dc, const DiscriminatorConfig& cfg_c, const BoundParameters<S>& ds,
                        const DiscriminatorConfig& cfg_s, const RenderOutput<S>& fake,
                        const std::vector<CameraPose>& poses, const LossWeights& w, GeneratorTerms terms = {});

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters that received no gradient are
/// skipped entirely: neither value nor moments change.
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, const ParameterSet<float>& params);

  /// grads[i] belongs to params[i]; nullptr skips it.
  void step(ParameterSet<float>& params, const std::vector<const Tensor<float>*>& grads);

  const AdamConfig& config() const { return cfg_; }
  int64_t steps() const { return steps_; }

  void save(TensorArchive& a, const std::string& prefix) const;
  void load(const TensorArchive& a, const std::string& prefix, const ParameterSet<float>& params);

 private:
  AdamConfig cfg_;
  int64_t steps_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor<float>> m_, v_;
};

/// Gradients of every bound parameter in `bound` (nullptr where none).
std::vector<const Tensor<float>*> gradient_list(const Gradients<float>& g, const BoundParameters<float>& bound);

/// Real training data at one resolution: images [n, R, R, 3], one-hot masks
/// [n, R, R, k]. Coarser resolutions are box-filtered from the dataset.
struct RealData {
  int resolution = 0;
  int k = 0;
  std::vector<Tensor<float>> images;
  std::vector<Tensor<float>> masks;
};

RealData prepare_real_data(const Dataset& data, int resolution);

struct TrainState {
  Config config;
  ParameterSet<float> generator;
  ParameterSet<float> d_color;
  ParameterSet<float> d_semantic;
  Adam opt_g, opt_dc, opt_ds;
  /// Resolution the discriminators are currently built for.
  int d_resolution = 0;
  int64_t iteration = 0;
  Rng rng;

  DiscriminatorConfig color_config() const { return color_discriminator_config(d_resolution); }
  DiscriminatorConfig semantic_config() const { return semantic_discriminator_config(d_resolution, config.generator.k); }
};

TrainState init_training(const Config& config);

struct StepRecord {
  int64_t iter = 0;
  double l_dc = 0;
  double l_ds = 0;
  double l_g = 0;
  double pose_loss = 0;
  double wall_ms = 0;
  int resolution = 0;
  int batch = 0;
  /// Component breakdown.
  std::vector<std::pair<std::string, double>> components;
};

/// One-line NDJSON: {iter, L_Dc, L_Ds, L_G, pose_loss, wall_ms}.
std::string to_ndjson(const StepRecord& r);

/// (resolution, batch) in force at `iteration`.
std::pair<int, int> stage_at(const TrainConfig& cfg, int64_t iteration);

/// One D_c update, one D_s update and one G update, each on fresh latents
/// and poses. `real` must match the stage resolution.
StepRecord train_step(TrainState& state, const RealData& real);

/// Drives train_step to `config.train.iterations`, preparing real data per
/// stage. `on_step` may return false to stop early.
void train(TrainState& state, const Dataset& data, const std::function<bool(const StepRecord&)>& on_step);

TensorArchive checkpoint_archive(const TrainState& state);
TrainState state_from_archive(const TensorArchive& a);
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Generator-only view of a checkpoint, as used by inference tools. Its
/// sampling is never stratified.
struct Model {
  Config config;
  ParameterSet<float> generator;
  ParameterSet<float> d_color;
  int d_resolution = 0;
};
Model load_model(const std::filesystem::path& path);

struct SanityOptions {
  int steps = 5000;
  int resolution = 32;
  int views = 8;
  int rays_per_step = 1024;
  double lr = 1e-3;
  double w_sem = 1.0;
  uint64_t seed = 0;
  /// Called every `report_every` steps with (step, loss).
  int report_every = 0;
  std::function<void(int, double)> report;
};

struct SanityResult {
  double initial_psnr = 0;
  double final_psnr = 0;
  double final_miou = 0;
  double initial_loss = 0;
  double final_loss = 0;
};

/// Fits the generator (fixed latents) to ground-truth renders of `scene`
/// from several poses by Adam on per-ray MSE of rgb and semantics. PSNR and
/// mIoU are averaged over the training views rendered without jitter.
/// Throws TrainingError when the running loss exceeds 10× its start.
SanityResult reconstruct_sanity(ParameterSet<float>& params, const GeneratorConfig& gen, const SamplingConfig& sampling,
                                const CameraConfig& camera, const PrimitiveScene& scene, const SanityOptions& opt);

}  // namespace semfield

namespace semfield {

struct PoseHeadError {
  double pitch = 0;
  double yaw = 0;
};

/// Mean absolute error of D_c's pose head on `samples` fresh generator
/// renders at poses drawn from the camera distribution.
PoseHeadError pose_head_error(const ParameterSet<float>& generator, const ParameterSet<float>& d_color,
                              const Config& config, int resolution, int samples, uint64_t seed);

}  // namespace semfield
