#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ultrastage/error.hpp"
#include "ultrastage/types.hpp"

namespace ultrastage {

// Equirectangular convention: pixel (i, j) center has azimuth
// phi = 2*pi*(i + 0.5)/W - pi and polar theta = pi*(j + 0.5)/H; +Y is up and
// phi = 0 looks down +Z.
struct PixelCoord {
  int i = 0;
  int j = 0;
};

inline double pixel_azimuth(int i, int width) {
  return 2.0 * kPi * (i + 0.5) / width - kPi;
}

inline double pixel_polar(int j, int height) {
  return kPi * (j + 0.5) / height;
}

inline Vec3 spherical_direction(double polar, double azimuth) {
  const double s = std::sin(polar);
  return {s * std::sin(azimuth), std::cos(polar), s * std::cos(azimuth)};
}

inline Vec3 pixel_direction(int i, int j, int width, int height) {
  return spherical_direction(pixel_polar(j, height), pixel_azimuth(i, width));
}

// Solid angle of one pixel in row j. Uses the exact latitude-band integral
// (2*pi/W)(cos theta_top - cos theta_bottom), so a row sums to the band area
// and the whole image sums to 4*pi for any resolution. Converges to
// (2*pi/W)(pi/H) sin(theta) as H grows.
inline double pixel_solid_angle(int j, int width, int height) {
  const double top = kPi * j / height;
  const double bottom = kPi * (j + 1) / height;
  return (2.0 * kPi / width) * (std::cos(top) - std::cos(bottom));
}

inline PixelCoord direction_to_pixel(const Vec3& d, int width, int height) {
  const Vec3 n = d.normalized();
  const double polar = std::acos(std::clamp(n.y(), -1.0, 1.0));
  const double azimuth = std::atan2(n.x(), n.z());
  int i = static_cast<int>(std::floor((azimuth + kPi) / (2.0 * kPi) * width));
  int j = static_cast<int>(std::floor(polar / kPi * height));
  i = ((i % width) + width) % width;
  j = std::clamp(j, 0, height - 1);
  return {i, j};
}

class EnvironmentMap {
 public:
  EnvironmentMap() = default;

  EnvironmentMap(int width, int height)
      : width_(width), height_(height) {
    check_dims(width, height);
    pixels_.assign(static_cast<std::size_t>(width) * height, Rgb::Zero());
  }

  EnvironmentMap(int width, int height, std::vector<Rgb> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    check_dims(width, height);
    if (pixels_.size() != static_cast<std::size_t>(width) * height) {
      throw ShapeError("pixel count does not match " + std::to_string(width) +
                       "x" + std::to_string(height));
    }
    for (const Rgb& p : pixels_) check_pixel(p);
  }

  template <typename Fn>
  static EnvironmentMap from_function(int width, int height, Fn&& radiance_at) {
    EnvironmentMap m(width, height);
    for (int j = 0; j < height; ++j) {
      for (int i = 0; i < width; ++i) {
        m.set(i, j, radiance_at(pixel_direction(i, j, width, height)));
      }
    }
    return m;
  }

  static EnvironmentMap uniform(int width, int height, const Rgb& radiance) {
    check_pixel(radiance);
    EnvironmentMap m(width, height);
    std::fill(m.pixels_.begin(), m.pixels_.end(), radiance);
    return m;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  const Rgb& at(int i, int j) const { return pixels_[index(i, j)]; }
  const Rgb& operator[](std::size_t k) const { return pixels_[k]; }
  const std::vector<Rgb>& pixels() const { return pixels_; }

  void set(int i, int j, const Rgb& radiance) {
    check_pixel(radiance);
    pixels_[index(i, j)] = radiance;
  }

  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(j) * width_ + i;
  }

  double solid_angle(int j) const { return pixel_solid_angle(j, width_, height_); }
  Vec3 direction(int i, int j) const { return pixel_direction(i, j, width_, height_); }

  // Bilinear lookup in (azimuth, polar) with azimuthal wrap.
  Rgb sample(const Vec3& d) const {
    const Vec3 n = d.normalized();
    const double polar = std::acos(std::clamp(n.y(), -1.0, 1.0));
    const double azimuth = std::atan2(n.x(), n.z());
    const double x = (azimuth + kPi) / (2.0 * kPi) * width_ - 0.5;
    const double y = std::clamp(polar / kPi * height_ - 0.5, 0.0, height_ - 1.0);
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    const int y1 = std::min(y0 + 1, height_ - 1);
    auto wrap = [this](int i) { return ((i % width_) + width_) % width_; };
    const Rgb top = (1 - fx) * at(wrap(x0), y0) + fx * at(wrap(x0 + 1), y0);
    const Rgb bot = (1 - fx) * at(wrap(x0), y1) + fx * at(wrap(x0 + 1), y1);
    return (1 - fy) * top + fy * bot;
  }

  Rgb nearest(const Vec3& d) const {
    const PixelCoord p = direction_to_pixel(d, width_, height_);
    return at(p.i, p.j);
  }

  friend bool operator==(const EnvironmentMap& a, const EnvironmentMap& b) {
    if (a.width_ != b.width_ || a.height_ != b.height_) return false;
    for (std::size_t k = 0; k < a.pixels_.size(); ++k) {
      if ((a.pixels_[k] != b.pixels_[k]).any()) return false;
    }
    return true;
  }

 private:
  static void check_dims(int width, int height) {
    if (width < 4 || height < 2) {
      throw ShapeError("environment map must be at least 4x2, got " +
                       std::to_string(width) + "x" + std::to_string(height));
    }
  }

  static void check_pixel(const Rgb& p) {
    if (!all_finite_nonnegative(p)) {
      throw InvariantError("radiance must be finite and non-negative");
    }
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Rgb> pixels_;
};

inline double total_solid_angle(int width, int height) {
  double sum = 0.0;
  for (int j = 0; j < height; ++j) sum += width * pixel_solid_angle(j, width, height);
  return sum;
}

// Radiant power: sum of radiance times pixel solid angle.
inline Rgb total_power(const EnvironmentMap& map) {
  Rgb sum = Rgb::Zero();
  for (int j = 0; j < map.height(); ++j) {
    Rgb row = Rgb::Zero();
    for (int i = 0; i < map.width(); ++i) row += map.at(i, j);
    sum += row * map.solid_angle(j);
  }
  return sum;
}

// Resamples by bilinear lookup at the target pixel centers.
inline EnvironmentMap resample(const EnvironmentMap& map, int width, int height) {
  if (width == map.width() && height == map.height()) return map;
  return EnvironmentMap::from_function(
      width, height, [&](const Vec3& d) { return map.sample(d); });
}

// ---------------------------------------------------------------------------
// Exposure brackets

struct LdrImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  LdrImage() = default;
  LdrImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t at(int i, int j, int c) const {
    return rgb[(static_cast<std::size_t>(j) * width + i) * 3 + c];
  }
  std::uint8_t& at(int i, int j, int c) {
    return rgb[(static_cast<std::size_t>(j) * width + i) * 3 + c];
  }
};

struct ExposureBracket {
  std::vector<LdrImage> images;
  std::vector<double> evs;  // stops, strictly increasing

  void validate() const {
    if (images.size() < 2) throw ShapeError("a bracket needs at least 2 images");
    if (images.size() != evs.size()) throw ShapeError("one EV per image is required");
    for (const LdrImage& im : images) {
      if (im.width != images.front().width || im.height != images.front().height) {
        throw ShapeError("bracket images differ in size");
      }
      if (im.rgb.size() != static_cast<std::size_t>(im.width) * im.height * 3) {
        throw ShapeError("bracket image buffer has the wrong size");
      }
    }
    for (std::size_t k = 1; k < evs.size(); ++k) {
      if (!(evs[k] > evs[k - 1])) throw ShapeError("EVs must be strictly increasing");
    }
  }
};

inline constexpr double kDefaultLdrGamma = 2.2;

// Triangle hat over [0, 255]: 0 at both ends, 1 at 127.5.
inline double exposure_weight(std::uint8_t z) {
  const double v = z;
  return v <= 127.5 ? v / 127.5 : (255.0 - v) / 127.5;
}

inline double ldr_to_linear(std::uint8_t z, double gamma) {
  return std::pow(z / 255.0, gamma);
}

// Weighted fusion: sum_k w(z_k) * lin(z_k) / 2^EV_k over sum_k w(z_k), per
// channel. Samples with zero total weight fall back to the darkest exposure's
// value if any sample clipped high, otherwise to zero.
inline EnvironmentMap merge_brackets(const ExposureBracket& bracket,
                                     double gamma = kDefaultLdrGamma) {
  bracket.validate();
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw RangeError("gamma must be > 0");
  const int w = bracket.images.front().width;
  const int h = bracket.images.front().height;
  const std::size_t n = bracket.images.size();

  std::vector<double> scale(n);
  for (std::size_t k = 0; k < n; ++k) scale[k] = std::exp2(-bracket.evs[k]);

  EnvironmentMap out(w, h);
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      Rgb px;
      for (int c = 0; c < 3; ++c) {
        double num = 0.0;
        double den = 0.0;
        bool clipped_high = false;
        for (std::size_t k = 0; k < n; ++k) {
          const std::uint8_t z = bracket.images[k].at(i, j, c);
          const double wt = exposure_weight(z);
          num += wt * ldr_to_linear(z, gamma) * scale[k];
          den += wt;
          clipped_high = clipped_high || z == 255;
        }
        if (den > 0.0) {
          px[c] = num / den;
        } else if (clipped_high) {
          px[c] = ldr_to_linear(bracket.images.front().at(i, j, c), gamma) * scale.front();
        } else {
          px[c] = 0.0;
        }
      }
      out.set(i, j, px);
    }
  }
  return out;
}

}  // namespace ultrastage
