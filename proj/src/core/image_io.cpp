#include "semfield/image_io.hpp"

#include <png.h>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

namespace semfield {
namespace {

struct PngImage {
  png_image image{};
  PngImage() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
};

Bytes write_png(png_image& image, const void* pixels, const void* colormap = nullptr) {
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, colormap)) {
    throw IoError(std::string("png encode: ") + image.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, colormap)) {
    throw IoError(std::string("png encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

void begin_read(PngImage& p, const Bytes& png) {
  if (!png_image_begin_read_from_memory(&p.image, png.data(), png.size())) {
    throw IoError(std::string("png decode: ") + p.image.message);
  }
}

void finish_read(PngImage& p, void* buffer, void* colormap = nullptr) {
  if (!png_image_finish_read(&p.image, nullptr, buffer, 0, colormap)) {
    throw IoError(std::string("png decode: ") + p.image.message);
  }
}

constexpr std::array<std::array<uint8_t, 3>, 8> kPalette{{
    {0, 0, 0},
    {230, 25, 75},
    {60, 180, 75},
    {0, 130, 200},
    {255, 225, 25},
    {145, 30, 180},
    {70, 240, 240},
    {245, 130, 48},
}};

uint8_t to_byte(float v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Bytes encode_rgb_png(const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("encode_rgb_png", "expected [H, W, 3], got " + shape_string(image.shape()));
  PngImage p;
  p.image.width = static_cast<png_uint_32>(image.dim(1));
  p.image.height = static_cast<png_uint_32>(image.dim(0));
  p.image.format = PNG_FORMAT_RGB;
  Bytes pixels(static_cast<size_t>(image.size()));
  for (int64_t i = 0; i < image.size(); ++i) pixels[static_cast<size_t>(i)] = to_byte(image[i]);
  return write_png(p.image, pixels.data());
}

Tensor<float> decode_rgb_png(const Bytes& png) {
  PngImage p;
  begin_read(p, png);
  p.image.format = PNG_FORMAT_RGB;
  Bytes pixels(PNG_IMAGE_SIZE(p.image));
  finish_read(p, pixels.data());
  Tensor<float> out({p.image.height, p.image.width, 3});
  auto v = out.mutable_values();
  for (size_t i = 0; i < pixels.size(); ++i) v[i] = static_cast<float>(pixels[i]) / 255.0f;
  return out;
}

Bytes encode_label_png(const LabelMap& labels) {
  PngImage p;
  p.image.width = static_cast<png_uint_32>(labels.width);
  p.image.height = static_cast<png_uint_32>(labels.height);
  p.image.format = PNG_FORMAT_GRAY;
  return write_png(p.image, labels.labels.data());
}

LabelMap decode_label_png(const Bytes& png) {
  PngImage p;
  begin_read(p, png);
  LabelMap out(static_cast<int>(p.image.height), static_cast<int>(p.image.width));
  if (p.image.format & PNG_FORMAT_FLAG_COLORMAP) {
    // Keep palette indices as they are; they are the class ids.
    p.image.format = PNG_FORMAT_RGB_COLORMAP;
    std::vector<uint8_t> colormap(PNG_IMAGE_COLORMAP_SIZE(p.image));
    finish_read(p, out.labels.data(), colormap.data());
  } else if (p.image.format == PNG_FORMAT_GRAY) {
    finish_read(p, out.labels.data());
  } else {
    throw IoError("label png must be 8-bit grayscale or paletted");
  }
  return out;
}

Bytes encode_label_preview_png(const LabelMap& labels) {
  PngImage p;
  p.image.width = static_cast<png_uint_32>(labels.width);
  p.image.height = static_cast<png_uint_32>(labels.height);
  p.image.format = PNG_FORMAT_RGB_COLORMAP;
  p.image.colormap_entries = kPalette.size();
  std::vector<uint8_t> colormap;
  for (const auto& c : kPalette) colormap.insert(colormap.end(), c.begin(), c.end());
  Bytes indices(labels.labels.size());
  for (size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<uint8_t>(labels.labels[i] % kPalette.size());
  return write_png(p.image, indices.data(), colormap.data());
}

Bytes encode_depth_png(const Tensor<float>& depth, float near, float far) {
  if (depth.rank() != 2) throw ShapeError("encode_depth_png", "expected [H, W], got " + shape_string(depth.shape()));
  PngImage p;
  p.image.width = static_cast<png_uint_32>(depth.dim(1));
  p.image.height = static_cast<png_uint_32>(depth.dim(0));
  p.image.format = PNG_FORMAT_LINEAR_Y;
  std::vector<uint16_t> pixels(static_cast<size_t>(depth.size()));
  for (size_t i = 0; i < pixels.size(); ++i) {
    const float u = std::clamp((depth[static_cast<int64_t>(i)] - near) / (far - near), 0.0f, 1.0f);
    pixels[i] = static_cast<uint16_t>(std::lround(u * 65535.0f));
  }
  return write_png(p.image, pixels.data());
}

Tensor<float> decode_depth_png(const Bytes& png, float near, float far) {
  PngImage p;
  begin_read(p, png);
  p.image.format = PNG_FORMAT_LINEAR_Y;
  std::vector<uint16_t> pixels(PNG_IMAGE_SIZE(p.image) / 2);
  finish_read(p, pixels.data());
  Tensor<float> out({p.image.height, p.image.width});
  auto v = out.mutable_values();
  for (size_t i = 0; i < pixels.size(); ++i) v[i] = near + (far - near) * static_cast<float>(pixels[i]) / 65535.0f;
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes) {
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string base64_encode(const Bytes& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<Bytes::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

Bytes base64_decode(std::string_view text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/') {
      clean.push_back(c);
    } else if (c != '=' && !std::isspace(static_cast<unsigned char>(c))) {
      throw IoError("invalid base64 character");
    }
  }
  const size_t n = clean.size() * 6 / 8;
  // transform_width reads past the last complete sextet group; pad with 'A'.
  std::string padded = clean + std::string((4 - clean.size() % 4) % 4, 'A');
  Bytes out;
  out.reserve(n);
  try {
    for (It it(padded.begin()), end(padded.end()); it != end && out.size() < n; ++it) out.push_back(static_cast<uint8_t>(*it));
  } catch (const std::exception&) {
    throw IoError("invalid base64 payload");
  }
  return out;
}

}  // namespace semfield
