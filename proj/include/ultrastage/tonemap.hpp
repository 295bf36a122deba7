#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ultrastage/dome.hpp"
#include "ultrastage/envmap.hpp"

namespace ultrastage {

struct DilationConfig {
  double cap = 1.0;
  double blur_sigma = 3.0 * kPi / 180.0;  // radians
  double highlight_threshold = 99.0;      // luminance percentile
  int max_iters = 64;
  int k_spread = 6;

  void validate() const {
    if (!(cap > 0.0)) throw ConfigError("dilation cap must be > 0");
    if (!(blur_sigma >= 0.0)) throw ConfigError("blur_sigma must be >= 0");
    if (!(highlight_threshold > 0.0 && highlight_threshold <= 100.0)) {
      throw ConfigError("highlight_threshold must be in (0, 100]");
    }
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (k_spread < 1) throw ConfigError("k_spread must be >= 1");
  }
};

inline nlohmann::json to_json(const DilationConfig& c) {
  return {{"cap", c.cap},
          {"blur_sigma", c.blur_sigma},
          {"highlight_threshold", c.highlight_threshold},
          {"max_iters", c.max_iters},
          {"k_spread", c.k_spread}};
}

inline DilationConfig dilation_from_json(const nlohmann::json& j) {
  DilationConfig c;
  c.cap = j.value("cap", c.cap);
  c.blur_sigma = j.value("blur_sigma", c.blur_sigma);
  c.highlight_threshold = j.value("highlight_threshold", c.highlight_threshold);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.k_spread = j.value("k_spread", c.k_spread);
  c.validate();
  return c;
}

// Linear-interpolated percentile (p in [0, 100]) of unsorted values.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double rank = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// Pixels brighter than the luminance percentile keep their color scaled down
// to the threshold luminance; the excess energy is scattered over the sphere
// with a Gaussian kernel in angular distance. Total power is unchanged and
// only pixels within 4 sigma of a highlight are touched.
inline EnvironmentMap blur_highlights(const EnvironmentMap& map, const DilationConfig& cfg) {
  cfg.validate();
  std::vector<double> lum(map.size());
  for (std::size_t k = 0; k < map.size(); ++k) lum[k] = luminance(map[k]);
  const double threshold = percentile(lum, cfg.highlight_threshold);

  std::vector<std::size_t> highlights;
  for (std::size_t k = 0; k < map.size(); ++k) {
    if (lum[k] > threshold) highlights.push_back(k);
  }
  if (highlights.empty() || cfg.blur_sigma <= 0.0) return map;

  const int W = map.width();
  const int H = map.height();
  std::vector<Rgb> out(map.pixels());
  std::vector<Rgb> added(map.size(), Rgb::Zero());
  const double reach = 4.0 * cfg.blur_sigma;
  const double cos_reach = std::cos(std::min(reach, kPi));
  const double inv_two_sigma2 = 1.0 / (2.0 * cfg.blur_sigma * cfg.blur_sigma);

  std::vector<std::pair<std::size_t, double>> kernel;
  for (std::size_t src : highlights) {
    const int si = static_cast<int>(src % static_cast<std::size_t>(W));
    const int sj = static_cast<int>(src / static_cast<std::size_t>(W));
    const Vec3 ds = map.direction(si, sj);
    const double keep = threshold / lum[src];
    const Rgb excess = map[src] * (1.0 - keep);
    out[src] = map[src] * keep;

    const double src_polar = pixel_polar(sj, H);
    const int j0 = std::max(0, static_cast<int>(std::floor((src_polar - reach) / kPi * H)) - 1);
    const int j1 = std::min(H - 1, static_cast<int>(std::ceil((src_polar + reach) / kPi * H)) + 1);
    kernel.clear();
    double norm = 0.0;
    for (int j = j0; j <= j1; ++j) {
      const double omega = map.solid_angle(j);
      for (int i = 0; i < W; ++i) {
        const Vec3 d = map.direction(i, j);
        if (ds.dot(d) < cos_reach) continue;
        const double theta = angular_distance(ds, d);
        const double kw = std::exp(-theta * theta * inv_two_sigma2);
        kernel.emplace_back(map.index(i, j), kw);
        norm += kw * omega;
      }
    }
    const Rgb energy = excess * map.solid_angle(sj);
    for (const auto& [t, kw] : kernel) {
      added[t] += energy * (kw / norm);
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += added[k];
  return EnvironmentMap(W, H, std::move(out));
}

struct DilationResult {
  std::vector<Rgb> powers;
  Rgb deficit = Rgb::Zero();  // energy that could not be placed under the cap
  int iterations = 0;
  bool converged = false;  // neighbor spreading alone brought every channel under cap
};

// Synchronous neighbor spreading: every iteration collects the excess above
// cap from all panels, then hands each excess out equally to that panel's
// k_spread nearest neighbors. Whatever is still over cap after max_iters is
// poured into the remaining headroom of all panels in proportion to it; only
// energy beyond total capacity becomes deficit.
inline DilationResult dilate(std::span<const Rgb> powers, const DomeGeometry& geometry,
                             const DilationConfig& cfg) {
  cfg.validate();
  if (powers.size() != geometry.size()) throw ShapeError("power list does not match panel count");
  const std::size_t n = powers.size();
  const double cap = cfg.cap;
  DilationResult r;
  r.powers.assign(powers.begin(), powers.end());
  for (const Rgb& p : r.powers) {
    if (!all_finite_nonnegative(p)) throw InvariantError("panel powers must be finite and >= 0");
  }

  std::vector<Rgb> incoming(n);
  std::vector<Eigen::Array<bool, 3, 1>> donor(n);
  for (r.iterations = 0; r.iterations < cfg.max_iters; ++r.iterations) {
    bool moved = false;
    std::fill(incoming.begin(), incoming.end(), Rgb::Zero());
    for (std::size_t p = 0; p < n; ++p) {
      donor[p].setConstant(false);
      const auto& nb = geometry.neighbors(p);
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.k_spread), nb.size());
      if (k == 0) continue;
      for (int c = 0; c < 3; ++c) {
        const double e = r.powers[p][c] - cap;
        if (e <= 0.0) continue;
        moved = true;
        donor[p][c] = true;
        const double share = e / static_cast<double>(k);
        for (std::size_t t = 0; t < k; ++t) incoming[static_cast<std::size_t>(nb[t])][c] += share;
      }
    }
    if (!moved) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (int c = 0; c < 3; ++c) {
        r.powers[p][c] = (donor[p][c] ? cap : r.powers[p][c]) + incoming[p][c];
      }
    }
  }

  r.converged = true;
  for (int c = 0; c < 3; ++c) {
    double excess = 0.0;
    for (const Rgb& p : r.powers) excess += std::max(0.0, p[c] - cap);
    if (excess <= 0.0) continue;
    r.converged = false;
    double headroom = 0.0;
    for (Rgb& p : r.powers) {
      p[c] = std::min(p[c], cap);
      headroom += cap - p[c];
    }
    if (headroom >= excess) {
      const double fill = excess / headroom;
      for (Rgb& p : r.powers) p[c] = std::min(cap, p[c] + (cap - p[c]) * fill);
    } else {
      for (Rgb& p : r.powers) p[c] = cap;
      r.deficit[c] = excess - headroom;
    }
  }
  return r;
}

}  // namespace ultrastage
