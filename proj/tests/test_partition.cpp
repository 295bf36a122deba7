#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ultrastage/partition.hpp"

using namespace ultrastage;

namespace {

std::vector<Vec3> directions(const DomeGeometry& g) {
  std::vector<Vec3> out;
  for (const auto& p : g.panels()) out.push_back(p.direction);
  return out;
}

}  // namespace

TEST(Partition, SinglePanelOwnsEverything) {
  const PartitionMap part = partition(generate_dome(1), 32, 16);
  for (int o : part.owner) EXPECT_EQ(o, 0);
  EXPECT_NEAR(part.cell_solid_angle[0], 4.0 * kPi, 1e-12);
}

TEST(Partition, PanelAtPixelCenterOwnsIt) {
  const int w = 32, h = 16;
  std::vector<PanelDescriptor> panels;
  const std::vector<std::pair<int, int>> px{{3, 2}, {20, 7}, {11, 12}, {28, 14}};
  for (std::size_t k = 0; k < px.size(); ++k) {
    PanelDescriptor d = sequential_address(static_cast<int>(k), 0);
    d.direction = pixel_direction(px[k].first, px[k].second, w, h);
    panels.push_back(d);
  }
  const DomeGeometry g(panels, kPi);
  const PartitionMap part = partition(g, w, h);
  for (std::size_t k = 0; k < px.size(); ++k) {
    EXPECT_EQ(part.owner_at(px[k].first, px[k].second), static_cast<int>(k));
  }
}

TEST(Partition, OwnDirectionOwnedBySelf) {
  const DomeGeometry g = generate_dome(480);
  const PartitionMap part = partition(g, 256, 128);
  for (const auto& p : g.panels()) {
    const PixelCoord c = direction_to_pixel(p.direction, 256, 128);
    EXPECT_EQ(part.owner_at(c.i, c.j), p.id);
  }
}

TEST(Partition, MatchesBruteForce) {
  const DomeGeometry g = generate_dome(12, kPi);
  const auto dirs = directions(g);
  const int w = 64, h = 32;
  const PartitionMap part = partition(g, w, h);
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      const auto r = oracle::nearest_panels(oracle::equirect_direction(i, j, w, h), dirs, 1e-12);
      EXPECT_NE(std::find(r.ids.begin(), r.ids.end(), part.owner_at(i, j)), r.ids.end());
    }
  }
  EXPECT_THROW(partition(g, 4, 4), ShapeError);
}

TEST(Integrate, UniformProportionalToCellArea) {
  const DomeGeometry g = generate_dome(48);
  const PartitionMap part = partition(g, 128, 64);
  const auto map = EnvironmentMap::uniform(128, 64, Rgb::Ones());
  const PanelPowers pw = integrate(map, part);
  double sum = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    EXPECT_NEAR(pw.power[p][0], part.cell_solid_angle[p], 1e-12);
    sum += pw.power[p][1];
  }
  EXPECT_NEAR(sum, 4.0 * kPi, 4.0 * kPi * 1e-3);
}

TEST(Integrate, ImpulseStaysInItsCell) {
  const DomeGeometry g = generate_dome(12);
  const int w = 64, h = 32;
  const PartitionMap part = partition(g, w, h);
  EnvironmentMap map(w, h);
  map.set(40, 9, Rgb(3.0, 1.0, 0.0));
  const PanelPowers pw = integrate(map, part);
  const int k = part.owner_at(40, 9);
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (static_cast<int>(p) == k) {
      EXPECT_NEAR(pw.power[p][0], 3.0 * map.solid_angle(9), 1e-15);
      EXPECT_NEAR(pw.power[p][1], 1.0 * map.solid_angle(9), 1e-15);
      EXPECT_EQ(pw.power[p][2], 0.0);
    } else {
      EXPECT_TRUE((pw.power[p] == 0.0).all());
    }
  }
}

TEST(Integrate, EnergyClosure) {
  const DomeGeometry g = generate_dome(12);
  const PartitionMap part = partition(g, 64, 32);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto map = oracle::random_map(64, 32, seed);
    const Rgb total = total_power(map);
    const PanelPowers pw = integrate(map, part);
    Rgb sum = Rgb::Zero();
    for (const Rgb& p : pw.power) sum += p;
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(sum[c], total[c], total[c] * 1e-9);
  }
}

TEST(Integrate, DropUncoveredBookkeeping) {
  const DomeGeometry g = generate_dome(48);
  const PartitionMap part = partition(g, 64, 32);
  const auto map = oracle::random_map(64, 32, 7);
  Rgb below = Rgb::Zero();
  for (int j = 0; j < 32; ++j) {
    if (pixel_polar(j, 32) <= g.cutoff_polar()) continue;
    for (int i = 0; i < 64; ++i) below += map.at(i, j) * map.solid_angle(j);
  }
  const PanelPowers pw = integrate(map, part, {.drop_uncovered = true});
  Rgb sum = Rgb::Zero();
  for (const Rgb& p : pw.power) sum += p;
  const Rgb total = total_power(map);
  for (int c = 0; c < 3; ++c) {
    EXPECT_GT(below[c], 0.0);
    EXPECT_NEAR(pw.dropped_power[c], below[c], below[c] * 1e-12);
    EXPECT_NEAR(sum[c] + pw.dropped_power[c], total[c], total[c] * 1e-12);
  }
}

TEST(Integrate, ShapeMismatch) {
  const PartitionMap part = partition(generate_dome(4), 16, 8);
  EXPECT_THROW(integrate(EnvironmentMap(32, 16), part), ShapeError);
}

TEST(Integrate, ScalesLinearly) {
  const DomeGeometry g = generate_dome(12);
  const PartitionMap part = partition(g, 64, 32);
  const auto map = oracle::random_map(64, 32, 3);
  std::vector<Rgb> px(map.pixels());
  for (auto& p : px) p *= 4.0;
  const PanelPowers a = integrate(map, part);
  const PanelPowers b = integrate(EnvironmentMap(64, 32, px), part);
  for (std::size_t p = 0; p < g.size(); ++p) {
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(b.power[p][c], 4.0 * a.power[p][c], 1e-12 * b.power[p][c]);
  }
}

TEST(Integrate, RotationEquivariant) {
  const int w = 64, h = 32, shift = 5;
  const DomeGeometry g = generate_dome(12);
  const double step = 2.0 * kPi * shift / w;
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(step, Vec3::UnitY()).toRotationMatrix();
  std::vector<PanelDescriptor> turned;
  for (const auto& p : g.panels()) {
    PanelDescriptor d = p;
    d.direction = (rot * p.direction).normalized();
    turned.push_back(d);
  }
  const DomeGeometry gr(turned, g.cutoff_polar());
  const auto map = oracle::random_map(w, h, 12);
  std::vector<Rgb> px(map.size());
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) px[map.index((i + shift) % w, j)] = map.at(i, j);
  }
  const PanelPowers a = integrate(map, partition(g, w, h));
  const PanelPowers b = integrate(EnvironmentMap(w, h, px), partition(gr, w, h));
  for (std::size_t p = 0; p < g.size(); ++p) {
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(b.power[p][c], a.power[p][c], 1e-9 * a.power[p][c]);
  }
}
