#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ultrastage/dome.hpp"
#include "ultrastage/envmap.hpp"
#include "ultrastage/partition.hpp"
#include "ultrastage/spectral.hpp"
#include "ultrastage/tonemap.hpp"

namespace ultrastage {

struct ReproduceOptions {
  std::optional<std::pair<int, int>> resolution;  // resample the map first
  DilationConfig dilation;
  bool drop_uncovered = false;
  // Panel power percentile mapped to the dilation cap.
  double exposure_percentile = 99.9;
};

struct ReproduceReport {
  LightMap lightmap;
  Rgb total_power = Rgb::Zero();      // power the panels were closed against
  Rgb dropped_power = Rgb::Zero();    // below-cutoff power left out
  Rgb emitted_power = Rgb::Zero();    // what the dome emits, environment units
  double cap_exposure = 1.0;          // panel power -> cap units
  double drive_normalization = 1.0;   // shared NNLS weight scale
  int dilation_iterations = 0;
  bool dilation_converged = true;
};

namespace detail {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  }
}

}  // namespace detail

// blur_highlights -> partition -> integrate -> dilate -> solve -> quantize.
inline ReproduceReport reproduce(const EnvironmentMap& source, const DomeGeometry& geometry,
                                 const SpectralCalibration& cal,
                                 const ReproduceOptions& options = {}) {
  using detail::run_stage;
  ReproduceReport rep;

  const EnvironmentMap map = run_stage("resample", [&] {
    return options.resolution ? resample(source, options.resolution->first, options.resolution->second)
                              : source;
  });
  const EnvironmentMap smoothed = run_stage("blur_highlights", [&] {
    return blur_highlights(map, options.dilation);
  });
  const PartitionMap part = run_stage("partition", [&] {
    return partition(geometry, smoothed.width(), smoothed.height());
  });
  const PanelPowers powers = run_stage("integrate", [&] {
    return integrate(smoothed, part, IntegrateOptions{options.drop_uncovered});
  });
  rep.total_power = powers.target_power;
  rep.dropped_power = powers.dropped_power;

  // Map the chosen panel-power percentile onto the cap.
  std::vector<double> peaks;
  peaks.reserve(powers.power.size());
  for (const Rgb& p : powers.power) peaks.push_back(p.maxCoeff());
  const double reference = percentile(peaks, options.exposure_percentile);
  rep.cap_exposure = reference > 0.0 ? options.dilation.cap / reference : 1.0;

  std::vector<Rgb> scaled(powers.power.size());
  for (std::size_t p = 0; p < scaled.size(); ++p) scaled[p] = powers.power[p] * rep.cap_exposure;

  const DilationResult dil = run_stage("dilate", [&] {
    return dilate(scaled, geometry, options.dilation);
  });
  rep.dilation_iterations = dil.iterations;
  rep.dilation_converged = dil.converged;

  const SolvedDrives drives = run_stage("solve_panel", [&] {
    return solve_panels(dil.powers, cal);
  });
  rep.drive_normalization = drives.normalization;

  const double exposure = 1.0 / (rep.cap_exposure * drives.normalization);
  rep.lightmap = run_stage("quantize", [&] {
    return LightMap::from_weights(drives.weights, exposure, dil.deficit / rep.cap_exposure);
  });
  rep.emitted_power = emitted_power(rep.lightmap, cal);
  return rep;
}

inline nlohmann::json to_json(const Rgb& c) { return {c[0], c[1], c[2]}; }

inline nlohmann::json report_json(const ReproduceReport& r) {
  return {{"panels", r.lightmap.size()},
          {"exposure_scalar", r.lightmap.exposure_scalar},
          {"deficit", to_json(r.lightmap.deficit)},
          {"total_power", to_json(r.total_power)},
          {"dropped_power", to_json(r.dropped_power)},
          {"emitted_power", to_json(r.emitted_power)},
          {"drive_normalization", r.drive_normalization},
          {"dilation_iterations", r.dilation_iterations},
          {"dilation_converged", r.dilation_converged}};
}

}  // namespace ultrastage
