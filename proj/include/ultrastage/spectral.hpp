#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ultrastage/dome.hpp"
#include "ultrastage/envmap.hpp"
#include "ultrastage/error.hpp"
#include "ultrastage/nnls.hpp"
#include "ultrastage/partition.hpp"
#include "ultrastage/types.hpp"

namespace ultrastage {

inline constexpr int kChartPatches = 24;

enum class CalibrationMode { Rgb3, Chart24 };

inline const char* to_string(CalibrationMode m) {
  return m == CalibrationMode::Rgb3 ? "rgb3" : "chart24";
}

// LED response model. Rgb3: 3x6, column c is the camera-linear RGB of LED
// channel c at full drive. Chart24: 72x6, column c stacks the RGB readings of
// the 24 chart patches lit by LED channel c alone (row = patch * 3 + channel).
class SpectralCalibration {
 public:
  SpectralCalibration() = default;

  SpectralCalibration(CalibrationMode mode, Eigen::MatrixXd led_basis,
                      std::vector<Rgb> chart_reflectance = {})
      : mode_(mode), basis_(std::move(led_basis)), reflectance_(std::move(chart_reflectance)) {
    validate();
    white_point_ = emitted_rgb(Drive6::Ones());
  }

  CalibrationMode mode() const { return mode_; }
  const Eigen::MatrixXd& led_basis() const { return basis_; }
  const std::vector<Rgb>& chart_reflectance() const { return reflectance_; }
  Rgb white_point() const { return white_point_; }

  // Ratio of extreme singular values over the informative rank: full column
  // rank for chart24, full row rank for rgb3 (3 rows cannot span 6 columns).
  double condition_number() const {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(basis_);
    const auto& s = svd.singularValues();
    const Eigen::Index r = std::min(basis_.rows(), basis_.cols());
    return s[r - 1] > 0.0 ? s[0] / s[r - 1] : std::numeric_limits<double>::infinity();
  }

  // Chart patch whose reflectance is the brightest neutral: largest minimum
  // channel.
  int neutral_patch() const {
    int best = 0;
    for (int p = 1; p < static_cast<int>(reflectance_.size()); ++p) {
      if (reflectance_[static_cast<std::size_t>(p)].minCoeff() >
          reflectance_[static_cast<std::size_t>(best)].minCoeff()) {
        best = p;
      }
    }
    return best;
  }

  // Camera RGB the panel emits for the given drive. In chart24 mode the
  // neutral patch's rows are divided by its reflectance to recover the
  // illuminant color.
  Rgb emitted_rgb(const Drive6& w) const {
    if (mode_ == CalibrationMode::Rgb3) {
      const Eigen::Vector3d v = basis_ * w;
      return v.array();
    }
    const int p = neutral_patch();
    const Eigen::Vector3d v = basis_.middleRows(p * 3, 3) * w;
    return v.array() / reflectance_[static_cast<std::size_t>(p)];
  }

  // Right-hand side the NNLS solve fits for a target RGB.
  Eigen::VectorXd target_vector(const Rgb& target) const {
    if (mode_ == CalibrationMode::Rgb3) return target.matrix();
    Eigen::VectorXd b(kChartPatches * 3);
    for (int p = 0; p < kChartPatches; ++p) {
      for (int k = 0; k < 3; ++k) b[p * 3 + k] = target[k] * reflectance_[static_cast<std::size_t>(p)][k];
    }
    return b;
  }

 private:
  void validate() const {
    if (basis_.cols() != kLedChannels) throw ConfigError("led_basis must have 6 columns");
    const Eigen::Index rows = mode_ == CalibrationMode::Rgb3 ? 3 : kChartPatches * 3;
    if (basis_.rows() != rows) {
      throw ConfigError(std::string("led_basis must have ") + std::to_string(rows) + " rows in " +
                        to_string(mode_) + " mode");
    }
    if (!basis_.allFinite() || (basis_.array() < 0.0).any()) {
      throw ConfigError("led_basis entries must be finite and >= 0");
    }
    for (Eigen::Index c = 0; c < basis_.cols(); ++c) {
      if (basis_.col(c).isZero(0.0)) {
        throw ConfigError("LED channel " + std::to_string(c) + " has an all-zero response");
      }
    }
    if (mode_ == CalibrationMode::Chart24) {
      if (reflectance_.size() != kChartPatches) throw ConfigError("chart24 needs 24 reflectances");
      for (const Rgb& r : reflectance_) {
        if (!all_finite_nonnegative(r)) throw ConfigError("reflectances must be finite and >= 0");
      }
      if (reflectance_[static_cast<std::size_t>(neutral_patch())].minCoeff() <= 0.0) {
        throw ConfigError("chart has no patch with positive reflectance in all channels");
      }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(basis_);
    if (lu.rank() < std::min(basis_.rows(), basis_.cols())) {
      throw ConfigError("led_basis is rank deficient");
    }
  }

  CalibrationMode mode_ = CalibrationMode::Rgb3;
  Eigen::MatrixXd basis_ = Eigen::MatrixXd::Zero(3, kLedChannels);
  std::vector<Rgb> reflectance_;
  Rgb white_point_ = Rgb::Zero();
};

// Idealized narrowband six-channel panel: pure R, G, B primaries plus amber,
// cyan and a broadband white. Every row sums to at most 1.95.
inline SpectralCalibration default_calibration() {
  Eigen::MatrixXd b(3, 6);
  //      R    G    B    Amber Cyan  White
  b << 1.0, 0.0, 0.0, 0.45, 0.00, 0.50,
       0.0, 1.0, 0.0, 0.25, 0.30, 0.40,
       0.0, 0.0, 1.0, 0.00, 0.40, 0.45;
  return SpectralCalibration(CalibrationMode::Rgb3, b);
}

inline double srgb_to_linear(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

// Classic 24-patch color chart, linearized from its nominal sRGB values.
inline std::vector<Rgb> classic_chart_reflectance() {
  static constexpr std::array<std::array<int, 3>, kChartPatches> srgb{{
      {115, 82, 68},   {194, 150, 130}, {98, 122, 157},  {87, 108, 67},
      {133, 128, 177}, {103, 189, 170}, {214, 126, 44},  {80, 91, 166},
      {193, 90, 99},   {94, 60, 108},   {157, 188, 64},  {224, 163, 46},
      {56, 61, 150},   {70, 148, 73},   {175, 54, 60},   {231, 199, 31},
      {187, 86, 149},  {8, 133, 161},   {243, 243, 242}, {200, 200, 200},
      {160, 160, 160}, {122, 122, 121}, {85, 85, 85},    {52, 52, 52},
  }};
  std::vector<Rgb> out;
  out.reserve(kChartPatches);
  for (const auto& c : srgb) {
    out.emplace_back(srgb_to_linear(c[0] / 255.0), srgb_to_linear(c[1] / 255.0),
                     srgb_to_linear(c[2] / 255.0));
  }
  return out;
}

// captures[c][p] is the camera RGB of chart patch p under LED channel c at
// full drive.
using ChartCaptures = std::vector<std::vector<Rgb>>;

inline SpectralCalibration calibrate_from_chart(const ChartCaptures& captures,
                                                const std::vector<Rgb>& chart_reflectance) {
  if (captures.size() != kLedChannels) throw ConfigError("need captures for 6 LED channels");
  Eigen::MatrixXd basis(kChartPatches * 3, kLedChannels);
  for (int c = 0; c < kLedChannels; ++c) {
    const auto& patches = captures[static_cast<std::size_t>(c)];
    if (patches.size() != kChartPatches) throw ConfigError("need 24 patch readings per channel");
    bool lit = false;
    for (int p = 0; p < kChartPatches; ++p) {
      const Rgb& v = patches[static_cast<std::size_t>(p)];
      if (!all_finite_nonnegative(v)) throw ConfigError("chart readings must be finite and >= 0");
      lit = lit || (v > 0.0).any();
      for (int k = 0; k < 3; ++k) basis(p * 3 + k, c) = v[k];
    }
    if (!lit) throw ConfigError("LED channel " + std::to_string(c) + " is dead (all readings zero)");
  }
  return SpectralCalibration(CalibrationMode::Chart24, basis, chart_reflectance);
}

// Unnormalized drive weights for one panel.
inline Drive6 solve_panel(const Rgb& target, const SpectralCalibration& cal) {
  if (!all_finite_nonnegative(target)) throw RangeError("target RGB must be finite and >= 0");
  if ((target == 0.0).all()) return Drive6::Zero();
  const NnlsResult r = nnls(cal.led_basis(), cal.target_vector(target));
  return r.x;
}

// ---------------------------------------------------------------------------
// Quantization

inline constexpr double kQuantizeTolerance = 1e-9;

inline std::uint8_t quantize(double w) {
  if (!(w >= -kQuantizeTolerance && w <= 1.0 + kQuantizeTolerance)) {
    throw RangeError("drive weight " + std::to_string(w) + " outside [0, 1]");
  }
  return static_cast<std::uint8_t>(std::floor(std::clamp(w, 0.0, 1.0) * 255.0 + 0.5));
}

inline double dequantize(std::uint8_t d) { return d / 255.0; }

inline Dmx6 quantize(const Drive6& w) {
  Dmx6 d{};
  for (int c = 0; c < kLedChannels; ++c) d[static_cast<std::size_t>(c)] = quantize(w[c]);
  return d;
}

inline Drive6 dequantize(const Dmx6& d) {
  Drive6 w;
  for (int c = 0; c < kLedChannels; ++c) w[c] = dequantize(d[static_cast<std::size_t>(c)]);
  return w;
}

// Per-panel drive levels for the whole dome. Emitted RGB (calibration units)
// times exposure_scalar is the panel power in environment units.
struct LightMap {
  std::vector<Drive6> weights;
  std::vector<Dmx6> dmx;
  double exposure_scalar = 1.0;
  Rgb deficit = Rgb::Zero();

  static LightMap zeros(std::size_t n) {
    LightMap m;
    m.weights.assign(n, Drive6::Zero());
    m.dmx.assign(n, Dmx6{});
    return m;
  }

  static LightMap from_weights(std::vector<Drive6> w, double exposure = 1.0,
                               const Rgb& deficit = Rgb::Zero()) {
    LightMap m;
    m.weights = std::move(w);
    m.dmx.reserve(m.weights.size());
    for (auto& x : m.weights) {
      m.dmx.push_back(quantize(x));
      x = x.cwiseMax(0.0).cwiseMin(1.0).eval();
    }
    m.exposure_scalar = exposure;
    m.deficit = deficit;
    return m;
  }

  std::size_t size() const { return weights.size(); }

  void set_panel(std::size_t p, const Drive6& w) {
    dmx.at(p) = quantize(w);
    weights.at(p) = w.cwiseMax(0.0).cwiseMin(1.0);
  }

  friend bool operator==(const LightMap& a, const LightMap& b) {
    return a.weights == b.weights && a.dmx == b.dmx && a.exposure_scalar == b.exposure_scalar &&
           (a.deficit == b.deficit).all();
  }
};

struct SolvedDrives {
  std::vector<Drive6> weights;  // normalized so the largest entry is <= 1
  double normalization = 1.0;   // factor applied to the raw NNLS weights
};

// Solves every panel, then scales all weights by one shared factor so the
// brightest drive is at most 1. Hue is never clipped.
inline SolvedDrives solve_panels(std::span<const Rgb> targets, const SpectralCalibration& cal) {
  SolvedDrives out;
  out.weights.reserve(targets.size());
  double peak = 0.0;
  for (const Rgb& t : targets) {
    out.weights.push_back(solve_panel(t, cal));
    peak = std::max(peak, out.weights.back().maxCoeff());
  }
  if (peak > 1.0) {
    out.normalization = 1.0 / peak;
    for (auto& w : out.weights) w *= out.normalization;
  }
  return out;
}

// Paints each panel's emitted power uniformly over its Voronoi cell, so the
// cell-integrated power equals the panel power in environment units.
inline EnvironmentMap reconstruct_env(const LightMap& lightmap, const DomeGeometry& geometry,
                                      const SpectralCalibration& cal, int width, int height) {
  if (lightmap.size() != geometry.size()) throw ShapeError("lightmap does not match dome");
  const PartitionMap part = partition(geometry, width, height);
  std::vector<Rgb> radiance(geometry.size(), Rgb::Zero());
  for (std::size_t p = 0; p < geometry.size(); ++p) {
    if (part.cell_solid_angle[p] > 0.0) {
      radiance[p] = cal.emitted_rgb(lightmap.weights[p]) * lightmap.exposure_scalar / part.cell_solid_angle[p];
      radiance[p] = radiance[p].cwiseMax(0.0);
    }
  }
  std::vector<Rgb> px(part.owner.size());
  for (std::size_t k = 0; k < px.size(); ++k) px[k] = radiance[static_cast<std::size_t>(part.owner[k])];
  return EnvironmentMap(width, height, std::move(px));
}

// Sum over panels of emitted power in environment units.
inline Rgb emitted_power(const LightMap& lightmap, const SpectralCalibration& cal) {
  Rgb sum = Rgb::Zero();
  for (const auto& w : lightmap.weights) sum += cal.emitted_rgb(w);
  return sum * lightmap.exposure_scalar;
}

// ---------------------------------------------------------------------------
// Calibration file: {mode, led_basis (row-major), chart_reflectance?, white_point, version: 1}

inline nlohmann::json to_json(const SpectralCalibration& cal) {
  nlohmann::json basis = nlohmann::json::array();
  for (Eigen::Index r = 0; r < cal.led_basis().rows(); ++r) {
    for (Eigen::Index c = 0; c < cal.led_basis().cols(); ++c) basis.push_back(cal.led_basis()(r, c));
  }
  nlohmann::json j{{"version", 1},
                   {"mode", to_string(cal.mode())},
                   {"led_basis", basis},
                   {"white_point", {cal.white_point()[0], cal.white_point()[1], cal.white_point()[2]}}};
  if (cal.mode() == CalibrationMode::Chart24) {
    nlohmann::json refl = nlohmann::json::array();
    for (const Rgb& r : cal.chart_reflectance()) refl.push_back({r[0], r[1], r[2]});
    j["chart_reflectance"] = refl;
  }
  return j;
}

inline SpectralCalibration calibration_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported calibration version");
    const std::string mode_name = j.at("mode").get<std::string>();
    CalibrationMode mode;
    if (mode_name == "rgb3") {
      mode = CalibrationMode::Rgb3;
    } else if (mode_name == "chart24") {
      mode = CalibrationMode::Chart24;
    } else {
      throw ConfigError("unknown calibration mode '" + mode_name + "'");
    }
    const auto flat = j.at("led_basis").get<std::vector<double>>();
    if (flat.size() % kLedChannels != 0) throw ConfigError("led_basis length must be a multiple of 6");
    const auto rows = static_cast<Eigen::Index>(flat.size() / kLedChannels);
    Eigen::MatrixXd basis(rows, kLedChannels);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < kLedChannels; ++c) basis(r, c) = flat[static_cast<std::size_t>(r * kLedChannels + c)];
    }
    std::vector<Rgb> refl;
    if (j.contains("chart_reflectance")) {
      for (const auto& t : j.at("chart_reflectance")) {
        const auto v = t.get<std::vector<double>>();
        if (v.size() != 3) throw ConfigError("reflectance entries need 3 components");
        refl.emplace_back(v[0], v[1], v[2]);
      }
    }
    return SpectralCalibration(mode, basis, refl);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed calibration: ") + e.what());
  }
}

inline SpectralCalibration load_calibration(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed calibration file " + path.string() + ": " + e.what());
  }
  return calibration_from_json(j);
}

inline void save_calibration(const SpectralCalibration& cal, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_json(cal).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// LightMap blob: "USLM", u32 version (1), u32 panel count, f64 exposure_scalar,
// f64 deficit[3], then per panel 6 DMX bytes followed by 6 f64 weights. All
// little-endian.

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
}

class BlobReader {
 public:
  explicit BlobReader(std::span<const std::uint8_t> d) : d_(d) {}
  std::uint8_t u8() { need(1); return d_[pos_++]; }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(d_[pos_++]) << (8 * k);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(d_[pos_++]) << (8 * k);
    return std::bit_cast<double>(v);
  }
  bool done() const { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (d_.size() - pos_ < n) throw TruncatedError("lightmap blob ends early");
  }
  std::span<const std::uint8_t> d_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_lightmap(const LightMap& m) {
  std::vector<std::uint8_t> out{'U', 'S', 'L', 'M'};
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(m.size()));
  detail::put_f64(out, m.exposure_scalar);
  for (int c = 0; c < 3; ++c) detail::put_f64(out, m.deficit[c]);
  for (std::size_t p = 0; p < m.size(); ++p) {
    out.insert(out.end(), m.dmx[p].begin(), m.dmx[p].end());
    for (int c = 0; c < kLedChannels; ++c) detail::put_f64(out, m.weights[p][c]);
  }
  return out;
}

inline LightMap decode_lightmap(std::span<const std::uint8_t> bytes) {
  detail::BlobReader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "USLM", 4) != 0) throw FormatError("not a lightmap blob");
  for (int k = 0; k < 4; ++k) in.u8();
  if (in.u32() != 1) throw FormatError("unsupported lightmap blob version");
  const std::uint32_t n = in.u32();
  if (bytes.size() < 44 + static_cast<std::size_t>(n) * 54) throw TruncatedError("lightmap blob ends early");
  LightMap m;
  m.exposure_scalar = in.f64();
  for (int c = 0; c < 3; ++c) m.deficit[c] = in.f64();
  m.weights.resize(n);
  m.dmx.resize(n);
  for (std::uint32_t p = 0; p < n; ++p) {
    for (auto& b : m.dmx[p]) b = in.u8();
    for (int c = 0; c < kLedChannels; ++c) m.weights[p][c] = in.f64();
  }
  if (!in.done()) throw FormatError("trailing bytes after lightmap blob");
  return m;
}

inline void save_lightmap(const LightMap& m, const std::filesystem::path& path) {
  const auto bytes = encode_lightmap(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline LightMap load_lightmap(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return decode_lightmap(bytes);
}

}  // namespace ultrastage
