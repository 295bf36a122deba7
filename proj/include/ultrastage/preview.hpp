#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <zlib.h>

#include "ultrastage/dome.hpp"
#include "ultrastage/envmap.hpp"
#include "ultrastage/partition.hpp"
#include "ultrastage/probe.hpp"
#include "ultrastage/spectral.hpp"
#include "ultrastage/tonemap.hpp"

namespace ultrastage {

// 8-bit RGB PNG, filter type 0, zlib level 6: identical input gives identical
// bytes.
inline std::vector<std::uint8_t> encode_png(const LdrImage& img) {
  if (img.width <= 0 || img.height <= 0) throw ShapeError("cannot encode an empty image");
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (1 + img.width * 3));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const auto* row = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(img.width) * 3);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("deflate failed");
  }
  z.resize(zlen);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  auto be32 = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  };
  auto chunk = [&](const char* type, const std::vector<std::uint8_t>& data) {
    be32(static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    be32(static_cast<std::uint32_t>(crc));
  };
  std::vector<std::uint8_t> ihdr;
  for (std::uint32_t v : {static_cast<std::uint32_t>(img.width), static_cast<std::uint32_t>(img.height)}) {
    for (int s = 24; s >= 0; s -= 8) ihdr.push_back(static_cast<std::uint8_t>(v >> s));
  }
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolor, deflate, no filter, no interlace
  chunk("IHDR", ihdr);
  chunk("IDAT", z);
  chunk("IEND", {});
  return out;
}

inline std::uint8_t linear_to_srgb8(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const double s = v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
  return static_cast<std::uint8_t>(std::lround(s * 255.0));
}

// Scales so the 99th-percentile luminance maps to 1, then sRGB-encodes.
inline LdrImage tonemap_for_display(const std::vector<Rgb>& pixels, int width, int height) {
  std::vector<double> lum;
  lum.reserve(pixels.size());
  for (const Rgb& p : pixels) lum.push_back(luminance(p));
  const double ref = percentile(lum, 99.0);
  const double scale = ref > 0.0 ? 1.0 / ref : 1.0;
  LdrImage out(width, height);
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    for (int c = 0; c < 3; ++c) out.rgb[k * 3 + static_cast<std::size_t>(c)] = linear_to_srgb8(pixels[k][c] * scale);
  }
  return out;
}

inline LdrImage tonemap_for_display(const Image& img) {
  return tonemap_for_display(img.pixels, img.width, img.height);
}

inline LdrImage tonemap_for_display(const EnvironmentMap& map) {
  return tonemap_for_display(map.pixels(), map.width(), map.height());
}

// Distinct, well-spread 24-bit color per panel id (odd multiplier is a
// bijection mod 2^24).
inline std::array<std::uint8_t, 3> panel_color(int id) {
  const std::uint32_t v = (static_cast<std::uint32_t>(id + 1) * 0x9E3779u) & 0xFFFFFFu;
  return {static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

// Equirect image with every pixel filled by its owning panel's color.
inline LdrImage voronoi_overlay(const DomeGeometry& geometry, int width, int height) {
  const PartitionMap part = partition(geometry, width, height);
  LdrImage out(width, height);
  for (std::size_t k = 0; k < part.owner.size(); ++k) {
    const auto c = panel_color(part.owner[k]);
    std::copy(c.begin(), c.end(), out.rgb.begin() + static_cast<std::ptrdiff_t>(k * 3));
  }
  return out;
}

enum class PreviewKind { ProbeDiffuse, ProbeMirror, ReconEnv, VoronoiOverlay };

inline PreviewKind preview_kind_from_string(const std::string& s) {
  if (s == "probe_diffuse") return PreviewKind::ProbeDiffuse;
  if (s == "probe_mirror") return PreviewKind::ProbeMirror;
  if (s == "recon_env") return PreviewKind::ReconEnv;
  if (s == "voronoi_overlay") return PreviewKind::VoronoiOverlay;
  throw NotFoundError("unknown preview kind '" + s + "'");
}

}  // namespace ultrastage
