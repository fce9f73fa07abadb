#include "semfield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace semfield {
namespace {

double bilinear(const Tensor<float>& img, int channels, int channel, double col, double row) {
  const auto h = static_cast<int>(img.dim(0));
  const auto w = static_cast<int>(img.dim(1));
  const int c0 = std::clamp(static_cast<int>(std::floor(col)), 0, w - 1);
  const int r0 = std::clamp(static_cast<int>(std::floor(row)), 0, h - 1);
  const int c1 = std::min(c0 + 1, w - 1);
  const int r1 = std::min(r0 + 1, h - 1);
  const double fc = std::clamp(col - c0, 0.0, 1.0);
  const double fr = std::clamp(row - r0, 0.0, 1.0);
  auto at = [&](int r, int c) { return static_cast<double>(img[(static_cast<int64_t>(r) * w + c) * channels + channel]); };
  return (1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c1)) + fr * ((1 - fc) * at(r1, c0) + fc * at(r1, c1));
}

}  // namespace

int64_t ConfusionTable::total() const {
  int64_t n = 0;
  for (int64_t c : counts) n += c;
  return n;
}

ConfusionTable confusion(const LabelMap& pred, const LabelMap& gt, int k) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("miou", Shape{pred.height, pred.width}, Shape{gt.height, gt.width});
  }
  ConfusionTable t{k, std::vector<int64_t>(static_cast<size_t>(k) * k, 0)};
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    const int p = pred.labels[i], g = gt.labels[i];
    if (p >= k || g >= k) throw std::out_of_range("label not below k = " + std::to_string(k));
    ++t.counts[static_cast<size_t>(g) * k + p];
  }
  return t;
}

double miou(const LabelMap& pred, const LabelMap& gt, int k) {
  const ConfusionTable t = confusion(pred, gt, k);
  // Extended precision so simple fractions round once, e.g. 7/12 exactly.
  long double total = 0.0L;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += t.at(c, j);
      col += t.at(j, c);
    }
    const int64_t inter = t.at(c, c);
    const int64_t uni = row + col - inter;
    if (uni == 0) continue;
    total += static_cast<long double>(inter) / static_cast<long double>(uni);
    ++present;
  }
  return present == 0 ? 1.0 : static_cast<double>(total / present);
}

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr", a.shape(), b.shape());
  double se = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  if (se == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(static_cast<double>(a.size()) / se);
}

ReprojectionResult reproject(const ViewSample& a, const ViewSample& b) {
  const auto res = static_cast<int>(a.rgb.dim(0));
  if (b.rgb.dim(0) != res || a.depth.dim(0) != res || b.opacity.dim(0) != res) {
    throw ShapeError("reproject", a.rgb.shape(), b.rgb.shape());
  }
  const RayGrid rays = pose_to_rays(a.pose, res);
  const CameraFrame fb = camera_frame(b.pose);
  double sum = 0.0;
  int64_t valid = 0;
  for (int i = 0; i < rays.count(); ++i) {
    const double wsum = a.opacity[i];
    if (wsum < 0.5) continue;
    const double depth = a.depth[i] / wsum;
    const Eigen::Vector3d x = rays.origin + depth * rays.directions.row(i).transpose();
    double col = 0, row = 0;
    if (!project_point(fb, res, x, col, row)) continue;
    // Border pixel centers project back onto the border up to rounding.
    constexpr double slack = 1e-6;
    if (col < -slack || row < -slack || col > res - 1 + slack || row > res - 1 + slack) continue;
    if (bilinear(b.opacity, 1, 0, col, row) < 0.5) continue;
    double err = 0.0;
    for (int c = 0; c < 3; ++c) err += std::abs(bilinear(b.rgb, 3, c, col, row) - a.rgb[static_cast<int64_t>(i) * 3 + c]);
    sum += err / 3.0;
    ++valid;
  }
  if (valid == 0) throw std::runtime_error("reprojection: no pixel is opaque in both views");
  return {sum / static_cast<double>(valid), valid};
}

ReprojectionResult reprojection_consistency(const ParameterSet<float>& params, const GeneratorConfig& cfg,
                                            const Tensor<float>& z_s, const Tensor<float>& z_t,
                                            const CameraPose& pose_a, const CameraPose& pose_b,
                                            const SamplingConfig& sampling, int resolution) {
  SamplingConfig fixed = sampling;
  fixed.stratified = false;
  const Render ra = render_view(params, cfg, z_s, z_t, pose_a, fixed, resolution);
  const Render rb = render_view(params, cfg, z_s, z_t, pose_b, fixed, resolution);
  return reproject({pose_a, ra.rgb, ra.depth, ra.opacity}, {pose_b, rb.rgb, rb.depth, rb.opacity});
}

}  // namespace semfield
