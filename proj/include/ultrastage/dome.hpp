#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ultrastage/envmap.hpp"
#include "ultrastage/error.hpp"
#include "ultrastage/types.hpp"

namespace ultrastage {

inline constexpr int kChannelsPerPanel = 6;
inline constexpr int kPanelsPerUniverse = 85;  // 85 * 6 = 510 <= 512
inline constexpr int kDmxUniverseSize = 512;
inline constexpr int kDefaultNeighborsK = 6;

// pi - asin(0.8): a 10 m dome whose ground-level diameter is 8 m.
inline const double kDefaultCutoffPolar = kPi - std::asin(0.8);

struct PanelDescriptor {
  int id = 0;
  Vec3 direction = Vec3::UnitY();
  int universe = 0;
  int channel_base = 0;
};

// Great-circle distance between unit vectors, stable near 0 and pi.
inline double angular_distance(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

class DomeGeometry {
 public:
  DomeGeometry() = default;

  DomeGeometry(std::vector<PanelDescriptor> panels, double cutoff_polar,
               int neighbors_k = kDefaultNeighborsK)
      : panels_(std::move(panels)), cutoff_polar_(cutoff_polar), neighbors_k_(neighbors_k) {
    validate();
    build_neighbors();
  }

  std::size_t size() const { return panels_.size(); }
  const std::vector<PanelDescriptor>& panels() const { return panels_; }
  const PanelDescriptor& panel(std::size_t id) const { return panels_.at(id); }
  double cutoff_polar() const { return cutoff_polar_; }
  int neighbors_k() const { return neighbors_k_; }

  // Symmetrized k-nearest neighbors, sorted by angular distance then id.
  const std::vector<int>& neighbors(std::size_t id) const { return neighbors_.at(id); }

  std::set<int> universes() const {
    std::set<int> u;
    for (const auto& p : panels_) u.insert(p.universe);
    return u;
  }

  // Panel directions as a dense 3xN matrix, column p = panel p.
  Eigen::Matrix3Xd direction_matrix() const {
    Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(panels_.size()));
    for (std::size_t p = 0; p < panels_.size(); ++p) m.col(static_cast<Eigen::Index>(p)) = panels_[p].direction;
    return m;
  }

 private:
  void validate() const {
    if (panels_.empty()) throw ConfigError("dome needs at least one panel");
    if (!(cutoff_polar_ > 0.0 && cutoff_polar_ <= kPi)) {
      throw ConfigError("cutoff_polar must be in (0, pi]");
    }
    if (neighbors_k_ < 1) throw ConfigError("neighbors_k must be >= 1");
    std::set<std::pair<int, int>> addresses;
    for (std::size_t p = 0; p < panels_.size(); ++p) {
      const auto& d = panels_[p];
      if (d.id != static_cast<int>(p)) throw ConfigError("panel ids must be 0..n-1 in order");
      if (std::abs(d.direction.norm() - 1.0) > 1e-9) {
        throw ConfigError("panel " + std::to_string(p) + " direction is not unit length");
      }
      if (d.universe < 0 || d.universe > 0x7fff) {
        throw ConfigError("panel " + std::to_string(p) + " universe out of range");
      }
      if (d.channel_base < 0 || d.channel_base + kChannelsPerPanel > kDmxUniverseSize) {
        throw ConfigError("panel " + std::to_string(p) + " channels exceed the universe");
      }
      if (!addresses.emplace(d.universe, d.channel_base).second) {
        throw ConfigError("duplicate DMX address (universe " + std::to_string(d.universe) +
                          ", channel " + std::to_string(d.channel_base) + ")");
      }
    }
    // Panels may share a universe; their channel ranges must not overlap.
    std::vector<std::pair<int, int>> sorted(addresses.begin(), addresses.end());
    for (std::size_t k = 1; k < sorted.size(); ++k) {
      if (sorted[k].first == sorted[k - 1].first &&
          sorted[k].second < sorted[k - 1].second + kChannelsPerPanel) {
        throw ConfigError("overlapping DMX channel ranges in universe " +
                          std::to_string(sorted[k].first));
      }
    }
    for (std::size_t a = 0; a < panels_.size(); ++a) {
      for (std::size_t b = a + 1; b < panels_.size(); ++b) {
        if (panels_[a].direction == panels_[b].direction) {
          throw ConfigError("panels " + std::to_string(a) + " and " + std::to_string(b) +
                            " share a direction");
        }
      }
    }
  }

  void build_neighbors() {
    const std::size_t n = panels_.size();
    std::vector<std::set<int>> adj(n);
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(neighbors_k_), n - 1);
    std::vector<std::pair<double, int>> order;
    order.reserve(n);
    for (std::size_t p = 0; p < n; ++p) {
      order.clear();
      for (std::size_t q = 0; q < n; ++q) {
        if (q != p) order.emplace_back(angular_distance(panels_[p].direction, panels_[q].direction), static_cast<int>(q));
      }
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
      for (std::size_t t = 0; t < k; ++t) {
        adj[p].insert(order[t].second);
        adj[static_cast<std::size_t>(order[t].second)].insert(static_cast<int>(p));
      }
    }
    neighbors_.assign(n, {});
    for (std::size_t p = 0; p < n; ++p) {
      std::vector<std::pair<double, int>> list;
      for (int q : adj[p]) list.emplace_back(angular_distance(panels_[p].direction, panels_[q].direction), q);
      std::sort(list.begin(), list.end());
      for (const auto& e : list) neighbors_[p].push_back(e.second);
    }
  }

  std::vector<PanelDescriptor> panels_;
  double cutoff_polar_ = kPi;
  int neighbors_k_ = kDefaultNeighborsK;
  std::vector<std::vector<int>> neighbors_;
};

inline PanelDescriptor sequential_address(int id, int universes_base) {
  PanelDescriptor d;
  d.id = id;
  d.universe = universes_base + id / kPanelsPerUniverse;
  d.channel_base = (id % kPanelsPerUniverse) * kChannelsPerPanel;
  return d;
}

// Spherical Fibonacci spiral over the cap polar in [0, cutoff]: equal-area
// bands in cos(polar), azimuth advancing by the golden angle. A single panel
// sits at the cap's pole.
inline DomeGeometry generate_dome(int n_panels, double cutoff_polar = kDefaultCutoffPolar,
                                  int universes_base = 0, int neighbors_k = kDefaultNeighborsK) {
  if (n_panels < 1) throw ConfigError("n_panels must be >= 1");
  if (!(cutoff_polar > 0.0 && cutoff_polar <= kPi)) throw ConfigError("cutoff_polar must be in (0, pi]");
  const double golden_angle = kPi * (3.0 - std::sqrt(5.0));
  const double cap_height = 1.0 - std::cos(cutoff_polar);
  std::vector<PanelDescriptor> panels;
  panels.reserve(static_cast<std::size_t>(n_panels));
  for (int k = 0; k < n_panels; ++k) {
    PanelDescriptor d = sequential_address(k, universes_base);
    if (n_panels == 1) {
      d.direction = Vec3::UnitY();
    } else {
      const double y = 1.0 - cap_height * (k + 0.5) / n_panels;
      const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
      const double azimuth = std::remainder(golden_angle * k, 2.0 * kPi);
      d.direction = Vec3(r * std::sin(azimuth), y, r * std::cos(azimuth)).normalized();
    }
    panels.push_back(d);
  }
  return DomeGeometry(std::move(panels), cutoff_polar, neighbors_k);
}

// ---------------------------------------------------------------------------
// JSON file format, version 1:
// {version, cutoff_polar, neighbors_k, panels: [{id, dir: [x,y,z], universe, channel}]}

inline nlohmann::json dome_to_json(const DomeGeometry& g) {
  nlohmann::json panels = nlohmann::json::array();
  for (const auto& p : g.panels()) {
    panels.push_back({{"id", p.id},
                      {"dir", {p.direction.x(), p.direction.y(), p.direction.z()}},
                      {"universe", p.universe},
                      {"channel", p.channel_base}});
  }
  return {{"version", 1},
          {"cutoff_polar", g.cutoff_polar()},
          {"neighbors_k", g.neighbors_k()},
          {"panels", std::move(panels)}};
}

inline DomeGeometry dome_from_json(const nlohmann::json& j, std::ostream* warnings = &std::cerr) {
  try {
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported dome file version");
    std::vector<PanelDescriptor> panels;
    for (const auto& jp : j.at("panels")) {
      PanelDescriptor p;
      p.id = jp.at("id").get<int>();
      const auto dir = jp.at("dir").get<std::vector<double>>();
      if (dir.size() != 3) throw ConfigError("panel dir must have 3 components");
      p.direction = Vec3(dir[0], dir[1], dir[2]);
      if (!p.direction.allFinite()) throw ConfigError("panel dir must be finite");
      const double err = std::abs(p.direction.norm() - 1.0);
      if (err > 1e-3) {
        throw ConfigError("panel " + std::to_string(p.id) + " direction magnitude off by " +
                          std::to_string(err));
      }
      if (err > 1e-6 && warnings) {
        *warnings << "warning: panel " << p.id << " direction re-normalized (off by " << err << ")\n";
      }
      if (err > 1e-9) p.direction.normalize();
      p.universe = jp.at("universe").get<int>();
      p.channel_base = jp.at("channel").get<int>();
      panels.push_back(p);
    }
    std::sort(panels.begin(), panels.end(),
              [](const PanelDescriptor& a, const PanelDescriptor& b) { return a.id < b.id; });
    return DomeGeometry(std::move(panels), j.at("cutoff_polar").get<double>(),
                        j.value("neighbors_k", kDefaultNeighborsK));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dome file: ") + e.what());
  }
}

inline DomeGeometry load_dome(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed dome file " + path.string() + ": " + e.what());
  }
  return dome_from_json(j);
}

inline void save_dome(const DomeGeometry& g, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << dome_to_json(g).dump(2) << "\n";
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace ultrastage
