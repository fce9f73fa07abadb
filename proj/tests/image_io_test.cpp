#include "semfield/image_io.hpp"

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

namespace semfield {
namespace {

TEST(Png, RgbRoundTripAtEightBits) {
  Tensor<float> img({4, 5, 3});
  auto v = img.mutable_values();
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i % 256) / 255.0f;
  const Tensor<float> back = decode_rgb_png(encode_rgb_png(img));
  ASSERT_EQ(back.shape(), img.shape());
  for (int64_t i = 0; i < img.size(); ++i) EXPECT_FLOAT_EQ(back[i], img[i]);
}

TEST(Png, LabelRoundTripIsLossless) {
  LabelMap m(7, 3);
  for (size_t i = 0; i < m.labels.size(); ++i) m.labels[i] = static_cast<uint8_t>(i % 5);
  EXPECT_EQ(decode_label_png(encode_label_png(m)), m);
}

TEST(Png, PreviewDecodesToLabels) {
  LabelMap m(4, 4);
  for (size_t i = 0; i < m.labels.size(); ++i) m.labels[i] = static_cast<uint8_t>(i % 4);
  EXPECT_EQ(decode_label_png(encode_label_preview_png(m)), m);
}

TEST(Png, DepthQuantization) {
  Tensor<float> d({2, 2}, {0.8f, 0.9f, 1.0f, 1.2f});
  const Tensor<float> back = decode_depth_png(encode_depth_png(d, 0.8f, 1.2f), 0.8f, 1.2f);
  for (int64_t i = 0; i < d.size(); ++i) EXPECT_NEAR(back[i], d[i], 0.4 / 65535 + 1e-7);
}

TEST(Png, GarbageIsRejected) {
  EXPECT_THROW(decode_rgb_png(Bytes{1, 2, 3}), IoError);
  EXPECT_THROW(decode_label_png(Bytes{}), IoError);
}

TEST(Base64, RoundTripAndKnownValue) {
  const std::string s = "any carnal pleas";
  const Bytes b(s.begin(), s.end());
  EXPECT_EQ(base64_encode(b), "YW55IGNhcm5hbCBwbGVhcw==");
  EXPECT_EQ(base64_decode(base64_encode(b)), b);
  for (size_t n = 0; n < 8; ++n) {
    Bytes x(n, 0xab);
    EXPECT_EQ(base64_decode(base64_encode(x)), x);
  }
}

TEST(Files, AtomicWriteReplaces) {
  testing::TempDir dir;
  write_file_atomic(dir / "f.bin", Bytes{1, 2});
  write_file_atomic(dir / "f.bin", std::string_view("xyz"));
  EXPECT_EQ(read_file(dir / "f.bin"), (Bytes{'x', 'y', 'z'}));
  EXPECT_THROW(read_file(dir / "missing"), IoError);
}

}  // namespace
}  // namespace semfield
