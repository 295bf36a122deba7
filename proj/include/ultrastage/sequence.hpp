#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ultrastage/error.hpp"
#include "ultrastage/spectral.hpp"

namespace ultrastage {

enum class Interp { Hold, Linear, Smoothstep };

inline const char* to_string(Interp i) {
  switch (i) {
    case Interp::Hold: return "hold";
    case Interp::Linear: return "linear";
    case Interp::Smoothstep: return "smoothstep";
  }
  return "linear";
}

inline Interp interp_from_string(const std::string& s) {
  if (s == "hold") return Interp::Hold;
  if (s == "linear") return Interp::Linear;
  if (s == "smoothstep") return Interp::Smoothstep;
  throw FormatError("unknown interpolation '" + s + "'");
}

inline double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

struct Keyframe {
  double t = 0.0;
  LightMap lightmap;
  Interp interp_out = Interp::Linear;
};

inline constexpr double kDefaultFps = 120.0;

class Sequence {
 public:
  Sequence() = default;

  Sequence(std::vector<Keyframe> keyframes, double fps = kDefaultFps, bool loop = false)
      : keyframes_(std::move(keyframes)), fps_(fps), loop_(loop) {
    validate();
  }

  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  double fps() const { return fps_; }
  bool loop() const { return loop_; }
  double duration() const { return keyframes_.back().t; }
  std::size_t panel_count() const { return keyframes_.front().lightmap.size(); }

  // Lighting state at time t, interpolated in drive space and quantized last.
  LightMap sample(double t) const {
    if (!(t >= 0.0)) throw RangeError("sample time must be >= 0");
    const double end = duration();
    if (loop_ && end > 0.0 && t >= end) t = std::fmod(t, end);
    if (t <= keyframes_.front().t) return keyframes_.front().lightmap;
    if (t >= end) return keyframes_.back().lightmap;

    const auto next = std::upper_bound(keyframes_.begin(), keyframes_.end(), t,
                                       [](double v, const Keyframe& k) { return v < k.t; });
    const Keyframe& b = *next;
    const Keyframe& a = *(next - 1);
    if (t == a.t || a.interp_out == Interp::Hold) return a.lightmap;

    double u = (t - a.t) / (b.t - a.t);
    if (a.interp_out == Interp::Smoothstep) u = smoothstep(u);

    std::vector<Drive6> w(a.lightmap.size());
    for (std::size_t p = 0; p < w.size(); ++p) {
      w[p] = a.lightmap.weights[p] + u * (b.lightmap.weights[p] - a.lightmap.weights[p]);
    }
    const double exposure = a.lightmap.exposure_scalar +
                            u * (b.lightmap.exposure_scalar - a.lightmap.exposure_scalar);
    return LightMap::from_weights(std::move(w), exposure, a.lightmap.deficit);
  }

 private:
  void validate() const {
    if (keyframes_.empty()) throw InvariantError("a sequence needs at least one keyframe");
    if (!(fps_ >= 1.0 && fps_ <= 240.0)) throw RangeError("fps must be in [1, 240]");
    const std::size_t n = keyframes_.front().lightmap.size();
    for (std::size_t k = 0; k < keyframes_.size(); ++k) {
      const auto& kf = keyframes_[k];
      if (!(kf.t >= 0.0) || !std::isfinite(kf.t)) throw InvariantError("keyframe times must be finite and >= 0");
      if (k > 0 && !(kf.t > keyframes_[k - 1].t)) throw InvariantError("keyframe times must be strictly increasing");
      if (kf.lightmap.size() != n) throw InvariantError("keyframes disagree on panel count");
    }
  }

  std::vector<Keyframe> keyframes_;
  double fps_ = kDefaultFps;
  bool loop_ = false;
};

// ---------------------------------------------------------------------------
// Lightning flicker

struct BurstSpec {
  std::uint64_t seed = 0;
  double mean_interval = 2.0;  // seconds between burst starts (exponential)
  double burst_len = 0.25;     // seconds of decay after the attack frame
  double peak_gain = 4.0;      // white-channel multiplier at the peak
  double duration = 10.0;      // seconds of sequence to generate
  double fps = kDefaultFps;
};

// Uniform double in [0, 1) from the top 53 bits of a 64-bit Mersenne Twister
// draw; fixed here so burst timings do not depend on the standard library's
// distribution implementation.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Burst start times: cumulative exponential gaps -mean * log(1 - u) until the
// duration is reached.
inline std::vector<double> burst_times(const BurstSpec& spec) {
  if (!(spec.mean_interval > 0.0)) throw RangeError("mean_interval must be > 0");
  std::mt19937_64 rng(spec.seed);
  std::vector<double> times;
  double t = 0.0;
  for (;;) {
    t += -spec.mean_interval * std::log(1.0 - unit_uniform(rng));
    if (t >= spec.duration) break;
    times.push_back(t);
  }
  return times;
}

// Gain multiplier at time t for a burst starting at `start`: linear rise to
// peak over one frame, then exponential decay to 1% of the excess at
// burst_len, after which it is exactly 1.
inline double burst_gain(double t, double start, const BurstSpec& spec) {
  const double frame = 1.0 / spec.fps;
  const double excess = spec.peak_gain - 1.0;
  if (t < start) return 1.0;
  if (t < start + frame) return 1.0 + excess * (t - start) / frame;
  const double after = t - start - frame;
  if (after > spec.burst_len) return 1.0;
  const double tau = spec.burst_len / std::log(100.0);
  return 1.0 + excess * std::exp(-after / tau);
}

inline Sequence flicker_generator(const LightMap& base, const BurstSpec& spec) {
  if (!(spec.peak_gain >= 1.0)) throw RangeError("peak_gain must be >= 1");
  if (!(spec.burst_len > 0.0)) throw RangeError("burst_len must be > 0");
  if (!(spec.duration > 0.0)) throw RangeError("duration must be > 0");
  if (!(spec.fps >= 1.0 && spec.fps <= 240.0)) throw RangeError("fps must be in [1, 240]");
  const std::vector<double> starts = burst_times(spec);
  const auto frames = static_cast<std::size_t>(std::ceil(spec.duration * spec.fps));

  std::vector<Keyframe> kfs;
  kfs.reserve(frames);
  for (std::size_t n = 0; n < frames; ++n) {
    const double t = static_cast<double>(n) / spec.fps;
    double gain = 1.0;
    for (double s : starts) gain = std::max(gain, burst_gain(t, s, spec));
    std::vector<Drive6> w = base.weights;
    for (auto& x : w) x[kWhite] = std::min(1.0, x[kWhite] * gain);
    kfs.push_back({t, LightMap::from_weights(std::move(w), base.exposure_scalar, base.deficit), Interp::Linear});
  }
  return Sequence(std::move(kfs), spec.fps, false);
}

// ---------------------------------------------------------------------------
// Sequence file: {fps, loop, keyframes: [{t, interp, lightmap_ref}], version: 1}
// with each keyframe's LightMap blob stored next to the JSON.

inline void save_sequence(const Sequence& seq, const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  const std::filesystem::path dir = path.parent_path();
  nlohmann::json kfs = nlohmann::json::array();
  for (std::size_t k = 0; k < seq.keyframes().size(); ++k) {
    const auto& kf = seq.keyframes()[k];
    char name[64];
    std::snprintf(name, sizeof name, ".kf%05zu.lmap", k);
    const std::string ref = stem + name;
    save_lightmap(kf.lightmap, dir / ref);
    kfs.push_back({{"t", kf.t}, {"interp", to_string(kf.interp_out)}, {"lightmap_ref", ref}});
  }
  nlohmann::json j{{"version", 1}, {"fps", seq.fps()}, {"loop", seq.loop()}, {"keyframes", kfs}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

inline Sequence load_sequence(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
    if (j.at("version").get<int>() != 1) throw FormatError("unsupported sequence version");
    std::vector<Keyframe> kfs;
    for (const auto& jk : j.at("keyframes")) {
      Keyframe kf;
      kf.t = jk.at("t").get<double>();
      kf.interp_out = interp_from_string(jk.value("interp", std::string("linear")));
      kf.lightmap = load_lightmap(path.parent_path() / jk.at("lightmap_ref").get<std::string>());
      kfs.push_back(std::move(kf));
    }
    return Sequence(std::move(kfs), j.value("fps", kDefaultFps), j.value("loop", false));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed sequence file " + path.string() + ": " + e.what());
  }
}

}  // namespace ultrastage
