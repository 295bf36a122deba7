#pragma once

#include <cctype>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ultrastage/envmap.hpp"
#include "ultrastage/rgbe.hpp"

namespace ultrastage {

// Binary PPM (P6, maxval 255), the bracket input format.
inline LdrImage decode_ppm(std::span<const std::uint8_t> data) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(data[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> long {
    skip_space();
    long v = 0;
    std::size_t digits = 0;
    while (pos < data.size() && std::isdigit(data[pos])) {
      v = v * 10 + (data[pos++] - '0');
      if (++digits > 7) throw FormatError("PPM header number too large");
    }
    if (digits == 0) throw FormatError("bad PPM header");
    return v;
  };
  if (data.size() < 2 || data[0] != 'P' || data[1] != '6') throw FormatError("not a binary PPM (P6)");
  pos = 2;
  const long w = number(), h = number(), maxval = number();
  if (w <= 0 || h <= 0) throw FormatError("PPM dimensions must be positive");
  if (maxval != 255) throw FormatError("only 8-bit PPM is supported");
  if (pos >= data.size() || !std::isspace(data[pos])) throw FormatError("bad PPM header");
  ++pos;
  LdrImage img(static_cast<int>(w), static_cast<int>(h));
  if (data.size() - pos < img.rgb.size()) throw TruncatedError("PPM pixel data ends early");
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(pos), img.rgb.size(), img.rgb.begin());
  return img;
}

inline std::vector<std::uint8_t> encode_ppm(const LdrImage& img) {
  const std::string head = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

inline LdrImage load_ppm(const std::filesystem::path& path) { return decode_ppm(read_file_bytes(path)); }

inline void save_ppm(const LdrImage& img, const std::filesystem::path& path) {
  write_file_bytes(path, encode_ppm(img));
}

}  // namespace ultrastage
