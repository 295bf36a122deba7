#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "ultrastage/envmap.hpp"

namespace ultrastage {

// Linear float RGB image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, Rgb::Zero()) {}

  Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

enum class ProbeMode { Diffuse, Mirror };

// Surface normal of the probe ball at pixel (x, y) for an orthographic view
// down -Z, +Y up in image space. Empty outside the ball.
inline std::optional<Vec3> probe_normal(int x, int y, int size) {
  const double u = 2.0 * (x + 0.5) / size - 1.0;
  const double v = 1.0 - 2.0 * (y + 0.5) / size;
  const double r2 = u * u + v * v;
  if (r2 > 1.0) return std::nullopt;
  return Vec3(u, v, std::sqrt(1.0 - r2));
}

// E(n) = sum over pixels of L * max(0, n.d) * omega.
inline Rgb irradiance(const EnvironmentMap& map, const Vec3& normal) {
  Rgb sum = Rgb::Zero();
  for (int j = 0; j < map.height(); ++j) {
    const double omega = map.solid_angle(j);
    Rgb row = Rgb::Zero();
    for (int i = 0; i < map.width(); ++i) {
      const double c = normal.dot(map.direction(i, j));
      if (c > 0.0) row += map.at(i, j) * c;
    }
    sum += row * omega;
  }
  return sum;
}

inline Image render_probe(const EnvironmentMap& map, ProbeMode mode, int size) {
  if (size < 16) throw RangeError("probe size must be >= 16");
  Image img(size, size);

  // Precompute directions once; the diffuse sum touches every pixel per normal.
  std::vector<Vec3> dirs;
  std::vector<double> omegas;
  if (mode == ProbeMode::Diffuse) {
    dirs.reserve(map.size());
    omegas.reserve(map.size());
    for (int j = 0; j < map.height(); ++j) {
      for (int i = 0; i < map.width(); ++i) {
        dirs.push_back(map.direction(i, j));
        omegas.push_back(map.solid_angle(j));
      }
    }
  }

  const Vec3 view(0.0, 0.0, -1.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const auto n = probe_normal(x, y, size);
      if (!n) continue;
      if (mode == ProbeMode::Mirror) {
        const Vec3 r = view - 2.0 * view.dot(*n) * *n;
        img.at(x, y) = map.nearest(r);
      } else {
        Rgb sum = Rgb::Zero();
        for (std::size_t k = 0; k < dirs.size(); ++k) {
          const double c = n->dot(dirs[k]);
          if (c > 0.0) sum += map[k] * (c * omegas[k]);
        }
        img.at(x, y) = sum;
      }
    }
  }
  return img;
}

// Luminance RMSE over the ball pixels, relative to the reference's mean ball
// luminance.
inline double probe_relative_rmse(const Image& reference, const Image& test) {
  if (reference.width != test.width || reference.height != test.height) {
    throw ShapeError("probe images differ in size");
  }
  double se = 0.0;
  double mean = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < reference.height; ++y) {
    for (int x = 0; x < reference.width; ++x) {
      if (!probe_normal(x, y, reference.width)) continue;
      const double a = luminance(reference.at(x, y));
      const double b = luminance(test.at(x, y));
      se += (a - b) * (a - b);
      mean += a;
      ++n;
    }
  }
  if (n == 0 || mean <= 0.0) return 0.0;
  mean /= static_cast<double>(n);
  return std::sqrt(se / static_cast<double>(n)) / mean;
}

}  // namespace ultrastage
