#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "ultrastage/rgbe.hpp"

using namespace ultrastage;

namespace {

std::vector<std::uint8_t> header(int w, int h) {
  const std::string s = "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y " + std::to_string(h) + " +X " +
                        std::to_string(w) + "\n";
  return {s.begin(), s.end()};
}

// Canonical flat fixture: every pixel's largest mantissa is >= 128 so the
// encoder reproduces the bytes exactly.
std::vector<std::uint8_t> random_fixture(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255), hi(128, 255), ex(110, 150), which(0, 2);
  auto out = header(w, h);
  for (int k = 0; k < w * h; ++k) {
    std::array<int, 3> m{byte(rng), byte(rng), byte(rng)};
    m[static_cast<std::size_t>(which(rng))] = hi(rng);
    for (int v : m) out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(ex(rng)));
  }
  return out;
}

}  // namespace

TEST(Rgbe, DecodeKnownBytes) {
  const Rgb c = rgbe_to_rgb({128, 128, 128, 129});
  EXPECT_EQ(c[0], 1.00390625);
  EXPECT_EQ(c[2], 1.00390625);
  EXPECT_TRUE((rgbe_to_rgb({0, 0, 0, 0}) == 0.0).all());
  EXPECT_TRUE((rgbe_to_rgb({200, 10, 3, 0}) == 0.0).all());
}

TEST(Rgbe, EncodeDecodeRelativeError) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> e(-20.0, 20.0), u(0.0, 1.0);
  for (int k = 0; k < 10000; ++k) {
    const double scale = std::exp2(e(rng));
    const Rgb c(u(rng) * scale, u(rng) * scale, u(rng) * scale);
    const Rgb back = rgbe_to_rgb(rgb_to_rgbe(c));
    const double ref = c.maxCoeff();
    for (int ch = 0; ch < 3; ++ch) EXPECT_LE(std::abs(back[ch] - c[ch]), ref * 0x1.0p-7);
  }
}

TEST(Rgbe, FileByteIdentity) {
  const auto bytes = random_fixture(16, 8, 1);
  const EnvironmentMap m = decode_hdr(bytes);
  EXPECT_EQ(m.width(), 16);
  EXPECT_EQ(m.height(), 8);
  EXPECT_EQ(encode_hdr(m), bytes);
}

TEST(Rgbe, SaveLoadIsQuantizationStable) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  std::vector<Rgb> px(32 * 16);
  for (auto& p : px) p = Rgb(u(rng), u(rng), u(rng));
  const EnvironmentMap m(32, 16, px);
  const auto path = std::filesystem::temp_directory_path() / "us_rgbe_roundtrip.hdr";
  save_hdr(m, path);
  const EnvironmentMap once = load_hdr(path);
  save_hdr(once, path);
  EXPECT_EQ(load_hdr(path), once);
  std::filesystem::remove(path);
}

TEST(Rgbe, ZeroMapHasZeroExponents) {
  const auto bytes = encode_hdr(EnvironmentMap(4, 2));
  const auto h = header(4, 2);
  ASSERT_EQ(bytes.size(), h.size() + 4 * 2 * 4);
  for (std::size_t k = h.size(); k < bytes.size(); ++k) EXPECT_EQ(bytes[k], 0);
}

TEST(Rgbe, ReadsRunLengthScanlines) {
  const int w = 8, h = 2;
  auto bytes = header(w, h);
  for (int j = 0; j < h; ++j) {
    bytes.insert(bytes.end(), {2, 2, 0, static_cast<std::uint8_t>(w)});
    // Channel R: a run of 8 x 128. G: 8 literals. B: run of 8 x 0. E: run of 8 x 129.
    bytes.insert(bytes.end(), {128 + 8, 128});
    bytes.push_back(8);
    for (int i = 0; i < w; ++i) bytes.push_back(static_cast<std::uint8_t>(i * 16));
    bytes.insert(bytes.end(), {128 + 8, 0});
    bytes.insert(bytes.end(), {128 + 8, 129});
  }
  const EnvironmentMap m = decode_hdr(bytes);
  for (int i = 0; i < w; ++i) {
    EXPECT_EQ(m.at(i, 1)[0], 1.00390625);
    EXPECT_EQ(m.at(i, 1)[1], (i * 16 + 0.5) / 128.0);
    EXPECT_EQ(m.at(i, 1)[2], 0.5 / 128.0);
  }
}

TEST(Rgbe, RejectsBadInput) {
  auto bytes = random_fixture(4, 2, 3);
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(decode_hdr(truncated), TruncatedError);

  std::vector<std::uint8_t> bad_magic = bytes;
  bad_magic[2] = 'X';
  EXPECT_THROW(decode_hdr(bad_magic), FormatError);

  const std::string flipped = "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n+Y 2 +X 4\n";
  EXPECT_THROW(decode_hdr(std::vector<std::uint8_t>(flipped.begin(), flipped.end())), FormatError);

  const std::string xyze = "#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 2 +X 4\n";
  EXPECT_THROW(decode_hdr(std::vector<std::uint8_t>(xyze.begin(), xyze.end())), FormatError);

  EXPECT_THROW(load_hdr("/nonexistent/dir/x.hdr"), IoError);
}
