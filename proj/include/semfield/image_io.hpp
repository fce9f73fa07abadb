#pragma once

#include "semfield/diffmath/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace semfield {

/// File or codec failure. The message carries the path when there is one.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-channel class-id image, row-major.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, uint8_t fill = 0) : height(h), width(w), labels(static_cast<size_t>(h) * w, fill) {}
  uint8_t at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
  uint8_t& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

using Bytes = std::vector<uint8_t>;

/// Images are float tensors [H, W, 3] with values in [0, 1]; they are
/// clamped and rounded to 8 bits on encode.
Bytes encode_rgb_png(const Tensor<float>& image);
Tensor<float> decode_rgb_png(const Bytes& png);

Bytes encode_label_png(const LabelMap& labels);
/// Accepts 8-bit grayscale or paletted PNGs (palette indices are the labels).
LabelMap decode_label_png(const Bytes& png);

/// Paletted preview: one fixed display color per class.
Bytes encode_label_preview_png(const LabelMap& labels);

/// Depth [H, W] mapped linearly from [near, far] onto 16-bit grayscale.
Bytes encode_depth_png(const Tensor<float>& depth, float near, float far);
/// Inverse of encode_depth_png (up to quantization).
Tensor<float> decode_depth_png(const Bytes& png, float near, float far);

Bytes read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

std::string base64_encode(const Bytes& bytes);
Bytes base64_decode(std::string_view text);

}  // namespace semfield
