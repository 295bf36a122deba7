#pragma once

#include <array>
#include <cstdint>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ultrastage {

using Vec3 = Eigen::Vector3d;
using Rgb = Eigen::Array3d;
using Drive6 = Eigen::Matrix<double, 6, 1>;
using Dmx6 = std::array<std::uint8_t, 6>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr int kLedChannels = 6;

enum LedChannel : int { kRed = 0, kGreen, kBlue, kAmber, kCyan, kWhite };

// Rec. 709 luminance weights.
inline double luminance(const Rgb& c) {
  return 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2];
}

inline bool all_finite_nonnegative(const Rgb& c) {
  return c.allFinite() && (c >= 0.0).all();
}

}  // namespace ultrastage
