#pragma once

#include <algorithm>
#include <vector>

#include "ultrastage/dome.hpp"
#include "ultrastage/envmap.hpp"

namespace ultrastage {

// Spherical Voronoi assignment of equirect pixels to dome panels.
struct PartitionMap {
  int width = 0;
  int height = 0;
  double cutoff_polar = kPi;
  std::vector<int> owner;           // per pixel, row-major
  std::vector<double> weight;       // omega * max(0, d . p_owner)
  std::vector<double> cell_norm;    // per panel: sum of owned weights
  std::vector<double> cell_solid_angle;  // per panel: sum of owned omega

  std::size_t panel_count() const { return cell_norm.size(); }
  int owner_at(int i, int j) const { return owner[static_cast<std::size_t>(j) * width + i]; }
  bool covered_row(int j) const { return pixel_polar(j, height) <= cutoff_polar; }
};

// Nearest panel by dot product; ties go to the lowest id.
inline int nearest_panel(const Vec3& d, const DomeGeometry& geometry) {
  int best = 0;
  double best_dot = -2.0;
  for (std::size_t p = 0; p < geometry.size(); ++p) {
    const double c = d.dot(geometry.panel(p).direction);
    if (c > best_dot) {
      best_dot = c;
      best = static_cast<int>(p);
    }
  }
  return best;
}

inline PartitionMap partition(const DomeGeometry& geometry, int width, int height) {
  if (width < 8 || height < 4) throw ShapeError("partition needs at least 8x4 pixels");
  PartitionMap part;
  part.width = width;
  part.height = height;
  part.cutoff_polar = geometry.cutoff_polar();
  part.owner.resize(static_cast<std::size_t>(width) * height);
  part.weight.resize(part.owner.size());
  part.cell_norm.assign(geometry.size(), 0.0);
  part.cell_solid_angle.assign(geometry.size(), 0.0);

  const Eigen::Matrix3Xd dirs = geometry.direction_matrix();
  for (int j = 0; j < height; ++j) {
    const double omega = pixel_solid_angle(j, width, height);
    for (int i = 0; i < width; ++i) {
      const Vec3 d = pixel_direction(i, j, width, height);
      const Eigen::RowVectorXd dots = d.transpose() * dirs;
      Eigen::Index best = 0;
      double best_dot = dots[0];
      for (Eigen::Index p = 1; p < dots.size(); ++p) {
        if (dots[p] > best_dot) {
          best_dot = dots[p];
          best = p;
        }
      }
      const std::size_t k = static_cast<std::size_t>(j) * width + i;
      part.owner[k] = static_cast<int>(best);
      part.weight[k] = omega * std::max(0.0, best_dot);
    }
  }
  for (int j = 0; j < height; ++j) {
    const double omega = pixel_solid_angle(j, width, height);
    for (int i = 0; i < width; ++i) {
      const std::size_t k = static_cast<std::size_t>(j) * width + i;
      part.cell_norm[static_cast<std::size_t>(part.owner[k])] += part.weight[k];
      part.cell_solid_angle[static_cast<std::size_t>(part.owner[k])] += omega;
    }
  }
  return part;
}

struct IntegrateOptions {
  // Ignore pixels whose polar angle is past the dome cutoff instead of folding
  // their energy into the nearest panels.
  bool drop_uncovered = false;
};

struct PanelPowers {
  std::vector<Rgb> power;  // per panel, relative radiance x steradian
  Rgb target_power = Rgb::Zero();  // energy the powers were closed against
  Rgb dropped_power = Rgb::Zero();  // below-cutoff energy left out
};

// Per-panel power: cos-weighted average radiance over the cell times the
// cell's solid angle, then rescaled per channel so the panel powers sum to
// the map's (included) radiant power.
inline PanelPowers integrate(const EnvironmentMap& map, const PartitionMap& part,
                             const IntegrateOptions& options = {}) {
  if (map.width() != part.width || map.height() != part.height) {
    throw ShapeError("environment map and partition sizes differ");
  }
  const std::size_t n = part.panel_count();
  std::vector<Rgb> weighted(n, Rgb::Zero());
  std::vector<Rgb> plain(n, Rgb::Zero());
  std::vector<double> norm(n, 0.0);
  std::vector<double> omega_sum(n, 0.0);
  PanelPowers out;

  for (int j = 0; j < map.height(); ++j) {
    const double omega = map.solid_angle(j);
    const bool covered = part.covered_row(j);
    for (int i = 0; i < map.width(); ++i) {
      const std::size_t k = map.index(i, j);
      const Rgb& L = map[k];
      if (!covered && options.drop_uncovered) {
        out.dropped_power += L * omega;
        continue;
      }
      const auto p = static_cast<std::size_t>(part.owner[k]);
      weighted[p] += L * part.weight[k];
      plain[p] += L * omega;
      norm[p] += part.weight[k];
      omega_sum[p] += omega;
      out.target_power += L * omega;
    }
  }

  out.power.assign(n, Rgb::Zero());
  Rgb sum = Rgb::Zero();
  for (std::size_t p = 0; p < n; ++p) {
    if (norm[p] > 0.0) out.power[p] = weighted[p] / norm[p] * omega_sum[p];
    sum += out.power[p];
  }
  for (int c = 0; c < 3; ++c) {
    if (sum[c] > 0.0) {
      const double s = out.target_power[c] / sum[c];
      for (auto& pw : out.power) pw[c] *= s;
    } else if (out.target_power[c] > 0.0) {
      // Every lit pixel sits at or past 90 degrees from its panel, so the cos
      // weights vanish; fall back to plain cell power.
      for (std::size_t p = 0; p < n; ++p) out.power[p][c] = plain[p][c];
    }
  }
  return out;
}

}  // namespace ultrastage
