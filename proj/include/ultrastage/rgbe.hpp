#pragma once

// Radiance RGBE (.hdr) reading and writing. Reads flat and new-style RLE
// scanlines, writes flat scanlines.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ultrastage/envmap.hpp"
#include "ultrastage/error.hpp"

namespace ultrastage {

using RgbeBytes = std::array<std::uint8_t, 4>;

inline Rgb rgbe_to_rgb(const RgbeBytes& e) {
  if (e[3] == 0) return Rgb::Zero();
  const double f = std::ldexp(1.0, static_cast<int>(e[3]) - 136);
  return {(e[0] + 0.5) * f, (e[1] + 0.5) * f, (e[2] + 0.5) * f};
}

inline RgbeBytes rgb_to_rgbe(const Rgb& c) {
  const double v = c.maxCoeff();
  if (v < 1e-32) return {0, 0, 0, 0};
  int exponent = 0;
  const double mantissa = std::frexp(v, &exponent);
  const double scale = mantissa * 256.0 / v;
  auto byte = [scale](double x) {
    return static_cast<std::uint8_t>(std::clamp(x * scale, 0.0, 255.0));
  };
  return {byte(c[0]), byte(c[1]), byte(c[2]),
          static_cast<std::uint8_t>(std::clamp(exponent + 128, 0, 255))};
}

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  bool at_end() const { return pos_ >= data_.size(); }

  std::string line() {
    std::string out;
    while (pos_ < data_.size() && data_[pos_] != '\n') out.push_back(static_cast<char>(data_[pos_++]));
    if (pos_ >= data_.size()) throw FormatError("unterminated header line");
    ++pos_;
    return out;
  }

  std::uint8_t byte() {
    if (pos_ >= data_.size()) throw TruncatedError("scanline data ends early");
    return data_[pos_++];
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (data_.size() - pos_ < n) throw TruncatedError("scanline data ends early");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline void read_rle_scanline(ByteReader& in, int width, std::vector<RgbeBytes>& line) {
  for (int c = 0; c < 4; ++c) {
    int x = 0;
    while (x < width) {
      int count = in.byte();
      if (count > 128) {
        count -= 128;
        if (x + count > width) throw FormatError("RLE run overflows scanline");
        const std::uint8_t v = in.byte();
        for (int k = 0; k < count; ++k) line[x++][c] = v;
      } else {
        if (count == 0 || x + count > width) throw FormatError("bad RLE literal count");
        for (int k = 0; k < count; ++k) line[x++][c] = in.byte();
      }
    }
  }
}

}  // namespace detail

inline EnvironmentMap decode_hdr(std::span<const std::uint8_t> data) {
  detail::ByteReader in(data);
  const std::string magic = in.line();
  if (magic != "#?RADIANCE" && magic != "#?RGBE") {
    throw FormatError("missing Radiance magic line");
  }
  bool format_ok = false;
  for (;;) {
    const std::string l = in.line();
    if (l.empty()) break;
    if (l.rfind("FORMAT=", 0) == 0) {
      if (l != "FORMAT=32-bit_rle_rgbe") throw FormatError("unsupported " + l);
      format_ok = true;
    }
  }
  if (!format_ok) throw FormatError("missing FORMAT=32-bit_rle_rgbe");

  const std::string res = in.line();
  int height = 0;
  int width = 0;
  char tail = 0;
  if (std::sscanf(res.c_str(), "-Y %d +X %d%c", &height, &width, &tail) != 2 ||
      width <= 0 || height <= 0) {
    throw FormatError("unsupported resolution line '" + res + "'");
  }

  std::vector<Rgb> pixels;
  pixels.reserve(static_cast<std::size_t>(width) * height);
  std::vector<RgbeBytes> line(width);
  for (int j = 0; j < height; ++j) {
    const auto head = in.take(4);
    const bool rle = width >= 8 && width < 32768 && head[0] == 2 && head[1] == 2 &&
                     ((head[2] << 8) | head[3]) == width && (head[2] & 0x80) == 0;
    if (rle) {
      detail::read_rle_scanline(in, width, line);
    } else {
      line[0] = {head[0], head[1], head[2], head[3]};
      for (int x = 1; x < width; ++x) {
        const auto px = in.take(4);
        line[x] = {px[0], px[1], px[2], px[3]};
      }
    }
    for (const RgbeBytes& e : line) pixels.push_back(rgbe_to_rgb(e));
  }
  return EnvironmentMap(width, height, std::move(pixels));
}

inline std::vector<std::uint8_t> encode_hdr(const EnvironmentMap& map) {
  if (map.empty()) throw InvariantError("cannot encode an empty map");
  std::ostringstream header;
  header << "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y " << map.height() << " +X "
         << map.width() << "\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.reserve(out.size() + map.size() * 4);
  for (const Rgb& p : map.pixels()) {
    const RgbeBytes e = rgb_to_rgbe(p);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

inline EnvironmentMap load_hdr(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_hdr(bytes);
}

inline void save_hdr(const EnvironmentMap& map, const std::filesystem::path& path) {
  const auto bytes = encode_hdr(map);
  write_file_bytes(path, bytes);
}

}  // namespace ultrastage
