#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "ultrastage/http.hpp"
#include "ultrastage/ppm.hpp"
#include "ultrastage/ultrastage.hpp"

using namespace ultrastage;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
  if (!f) throw IoError("write failed for " + path.string());
}

template <typename T>
const T& need(const std::optional<T>& v, const char* flag) {
  if (!v) throw ConfigError(std::string(flag) + " is required");
  return *v;
}

std::vector<Rgb> rgb_list(const nlohmann::json& j, std::size_t n, const char* what) {
  std::vector<Rgb> out;
  for (const auto& v : j) {
    const auto c = v.get<std::vector<double>>();
    if (c.size() != 3) throw ConfigError(std::string(what) + " entries need 3 values");
    out.emplace_back(c[0], c[1], c[2]);
  }
  if (out.size() != n) throw ConfigError(std::string(what) + " needs " + std::to_string(n) + " entries");
  return out;
}

// {"mode": "rgb3", "channels": [[r,g,b] x 6]} or
// {"mode": "chart24", "captures": [[[r,g,b] x 24] x 6], "reflectance": optional [[r,g,b] x 24]}
SpectralCalibration calibration_from_captures(const nlohmann::json& j) {
  try {
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "rgb3") {
      const auto cols = rgb_list(j.at("channels"), kLedChannels, "channels");
      Eigen::MatrixXd basis(3, kLedChannels);
      for (int c = 0; c < kLedChannels; ++c) basis.col(c) = cols[static_cast<std::size_t>(c)].matrix();
      return SpectralCalibration(CalibrationMode::Rgb3, basis);
    }
    if (mode == "chart24") {
      ChartCaptures caps;
      for (const auto& ch : j.at("captures")) caps.push_back(rgb_list(ch, kChartPatches, "captures"));
      const auto refl = j.contains("reflectance") ? rgb_list(j["reflectance"], kChartPatches, "reflectance")
                                                  : classic_chart_reflectance();
      return calibrate_from_chart(caps, refl);
    }
    throw ConfigError("mode must be rgb3 or chart24");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed captures file: ") + e.what());
  }
}

void print_stats(const PlaybackStats& s, std::ostream& out) {
  out << "frames: " << s.frames << "\n";
  out << "late frames: " << s.late_frames << "\n";
  out << "lateness histogram (us):\n";
  std::int64_t lo = 0;
  for (std::size_t b = 0; b < s.histogram.size(); ++b) {
    char label[48];
    if (b < kLatenessBucketsUs.size()) {
      std::snprintf(label, sizeof label, "  [%lld, %lld)", static_cast<long long>(lo),
                    static_cast<long long>(kLatenessBucketsUs[b]));
      lo = kLatenessBucketsUs[b];
    } else {
      std::snprintf(label, sizeof label, "  [%lld, inf)", static_cast<long long>(lo));
    }
    out << label << ": " << s.histogram[b] << "\n";
  }
}

int exit_code(ErrorKind k) { return k == ErrorKind::Io ? 1 : 2; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lighting reproduction toolkit for an LED dome"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for all subcommands");

  // merge
  auto* merge = app.add_subcommand("merge", "Merge an exposure bracket of 8-bit PPM images into an HDR map");
  std::vector<std::string> merge_images;
  std::vector<double> merge_evs;
  std::string merge_out;
  double merge_gamma = kDefaultLdrGamma;
  merge->add_option("--image", merge_images, "Bracket image (binary PPM), one per exposure")->required();
  merge->add_option("--ev", merge_evs, "Exposure of each image in stops, same order")->required();
  merge->add_option("--out", merge_out, "Output Radiance .hdr file")->required();
  merge->add_option("--gamma", merge_gamma, "Camera response gamma")->capture_default_str();

  // reproduce
  auto* repro = app.add_subcommand("reproduce", "Compute a panel lightmap for an environment map");
  std::string r_hdr, r_dome, r_cal, r_out, r_dilation, r_sidecar;
  std::optional<int> r_width, r_height;
  double r_percentile = 99.9;
  bool r_drop = false, r_det = false;
  repro->add_option("--hdr", r_hdr, "Input equirectangular .hdr map")->required();
  repro->add_option("--dome", r_dome, "Dome geometry JSON")->required();
  repro->add_option("--calibration", r_cal, "Spectral calibration JSON")->required();
  repro->add_option("--out", r_out, "Output lightmap blob (.lmap)")->required();
  repro->add_option("--sidecar", r_sidecar, "Report JSON path (default: <out>.json)");
  repro->add_option("--width", r_width, "Resample the map to this width first");
  repro->add_option("--height", r_height, "Resample the map to this height first");
  repro->add_option("--dilation", r_dilation, "Dilation config JSON");
  repro->add_option("--exposure-percentile", r_percentile, "Panel power percentile mapped to the cap")
      ->capture_default_str();
  repro->add_flag("--drop-uncovered", r_drop, "Discard light below the dome cutoff instead of folding it in");
  repro->add_flag("--deterministic", r_det, "Omit wall-clock fields from the report");

  // preview
  auto* prev = app.add_subcommand("preview", "Render a preview image as PNG");
  std::string p_kind, p_out;
  std::optional<std::string> p_hdr, p_lmap, p_dome, p_cal;
  int p_width = 256, p_height = 128, p_size = 128;
  prev->add_option("--kind", p_kind, "probe_diffuse | probe_mirror | recon_env | voronoi_overlay")->required();
  prev->add_option("--out", p_out, "Output PNG")->required();
  prev->add_option("--hdr", p_hdr, "Environment map to preview");
  prev->add_option("--lightmap", p_lmap, "Lightmap to reconstruct (needs --dome and --calibration)");
  prev->add_option("--dome", p_dome, "Dome geometry JSON");
  prev->add_option("--calibration", p_cal, "Spectral calibration JSON");
  prev->add_option("--width", p_width, "Equirect width")->capture_default_str();
  prev->add_option("--height", p_height, "Equirect height")->capture_default_str();
  prev->add_option("--size", p_size, "Probe image size")->capture_default_str();

  // play
  auto* play = app.add_subcommand("play", "Play a sequence to an Art-Net endpoint or the in-process loopback");
  std::string s_seq, s_endpoint = "127.0.0.1:6454";
  std::optional<std::string> s_dome;
  std::optional<double> s_seconds;
  double s_start = 0.0;
  bool s_loopback = false, s_virtual = false, s_det = false;
  play->add_option("--sequence", s_seq, "Sequence JSON")->required();
  play->add_option("--endpoint", s_endpoint, "Art-Net receiver host:port")->capture_default_str();
  play->add_option("--dome", s_dome, "Dome geometry JSON for DMX addressing (default: sequential)");
  play->add_option("--seconds", s_seconds, "Play this long instead of the whole sequence");
  play->add_option("--start", s_start, "Sequence time of the first frame")->capture_default_str();
  play->add_flag("--loopback", s_loopback, "Deliver packets to an in-process virtual dome");
  play->add_flag("--virtual-clock", s_virtual, "Run on a simulated clock (no sleeping, zero lateness)");
  play->add_flag("--deterministic", s_det, "Omit wall-clock fields from the output");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP control service for a project directory");
  std::string v_project, v_host = "127.0.0.1";
  std::optional<int> v_port;
  serve->add_option("--project", v_project, "Project directory (project.json)")->required();
  serve->add_option("--port", v_port, "Listen port, 0 picks a free one (env ULTRASTAGE_PORT, default 8080)");
  serve->add_option("--host", v_host, "Listen address")->capture_default_str();

  // dome gen
  auto* dome = app.add_subcommand("dome", "Dome geometry tools");
  dome->require_subcommand(1);
  auto* dome_gen = dome->add_subcommand("gen", "Generate a Fibonacci cap dome");
  int d_panels = 480, d_k = kDefaultNeighborsK;
  std::optional<double> d_cutoff_deg;
  std::string d_out;
  dome_gen->add_option("--panels", d_panels, "Panel count")->capture_default_str();
  dome_gen->add_option("--cutoff-deg", d_cutoff_deg, "Lowest covered polar angle in degrees (default 126.87)");
  dome_gen->add_option("--neighbors", d_k, "Neighbors per panel for dilation")->capture_default_str();
  dome_gen->add_option("--out", d_out, "Output dome JSON")->required();

  // calibrate
  auto* calib = app.add_subcommand("calibrate", "Build a spectral calibration from LED captures");
  std::string c_captures, c_out;
  calib->add_option("--captures", c_captures, "Captures JSON (rgb3 channels or chart24 patches)")->required();
  calib->add_option("--out", c_out, "Output calibration JSON")->required();

  // flicker
  auto* flicker = app.add_subcommand("flicker", "Generate a lightning flicker sequence over a base lightmap");
  std::string f_base, f_out;
  BurstSpec f_spec;
  flicker->add_option("--base", f_base, "Base lightmap (.lmap)")->required();
  flicker->add_option("--out", f_out, "Output sequence JSON")->required();
  flicker->add_option("--seed", f_spec.seed, "Random seed for burst timing")->required();
  flicker->add_option("--duration", f_spec.duration, "Seconds")->capture_default_str();
  flicker->add_option("--mean-interval", f_spec.mean_interval, "Mean seconds between bursts")->capture_default_str();
  flicker->add_option("--burst-len", f_spec.burst_len, "Decay length in seconds")->capture_default_str();
  flicker->add_option("--peak-gain", f_spec.peak_gain, "White-channel gain at the peak")->capture_default_str();
  flicker->add_option("--fps", f_spec.fps, "Frame rate")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*merge) {
      ExposureBracket bracket;
      for (const auto& p : merge_images) bracket.images.push_back(load_ppm(p));
      bracket.evs = merge_evs;
      save_hdr(merge_brackets(bracket, merge_gamma), merge_out);
      std::cout << "wrote " << merge_out << "\n";
    } else if (*repro) {
      const auto start = std::chrono::steady_clock::now();
      const EnvironmentMap map = load_hdr(r_hdr);
      const DomeGeometry geometry = load_dome(r_dome);
      const SpectralCalibration cal = load_calibration(r_cal);
      ReproduceOptions opts;
      if (r_width || r_height) opts.resolution = std::make_pair(need(r_width, "--width"), need(r_height, "--height"));
      if (!r_dilation.empty()) opts.dilation = dilation_from_json(read_json(r_dilation));
      opts.drop_uncovered = r_drop;
      opts.exposure_percentile = r_percentile;
      const ReproduceReport rep = reproduce(map, geometry, cal, opts);
      save_lightmap(rep.lightmap, r_out);
      nlohmann::json side = report_json(rep);
      if (!r_det) {
        side["elapsed_ms"] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      }
      write_json(r_sidecar.empty() ? r_out + ".json" : r_sidecar, side);
      std::cout << "wrote " << r_out << " (" << rep.lightmap.size() << " panels, exposure "
                << rep.lightmap.exposure_scalar << ")\n";
    } else if (*prev) {
      const PreviewKind kind = preview_kind_from_string(p_kind);
      std::vector<std::uint8_t> png;
      if (kind == PreviewKind::VoronoiOverlay) {
        png = encode_png(voronoi_overlay(load_dome(need(p_dome, "--dome")), p_width, p_height));
      } else {
        EnvironmentMap env;
        if (p_lmap) {
          const DomeGeometry g = load_dome(need(p_dome, "--dome"));
          env = reconstruct_env(load_lightmap(*p_lmap), g, load_calibration(need(p_cal, "--calibration")), p_width,
                                p_height);
        } else {
          if (kind == PreviewKind::ReconEnv) need(p_lmap, "--lightmap");
          env = load_hdr(need(p_hdr, "--hdr"));
        }
        if (kind == PreviewKind::ReconEnv) {
          png = encode_png(tonemap_for_display(env));
        } else {
          const ProbeMode mode = kind == PreviewKind::ProbeDiffuse ? ProbeMode::Diffuse : ProbeMode::Mirror;
          png = encode_png(tonemap_for_display(render_probe(env, mode, p_size)));
        }
      }
      write_file_bytes(p_out, png);
      std::cout << "wrote " << p_out << "\n";
    } else if (*play) {
      const auto seq = std::make_shared<const Sequence>(load_sequence(s_seq));
      const DomeGeometry g = s_dome ? load_dome(*s_dome) : generate_dome(static_cast<int>(seq->panel_count()));
      if (g.size() != seq->panel_count()) throw ShapeError("sequence does not match dome");
      artnet::LoopbackSink loop;
      std::unique_ptr<artnet::UdpSender> udp;
      if (!s_loopback) udp = std::make_unique<artnet::UdpSender>(artnet::parse_endpoint(s_endpoint));
      std::uint8_t counter = 0;
      FrameSink sink = [&](const LightMap& m, const FrameInfo&) {
        counter = artnet::next_sequence(counter);
        const auto packets = artnet::encode_frame(m, g, counter);
        if (udp) {
          udp->send_frame(packets);
        } else {
          loop.receive_frame(packets);
        }
      };
      std::shared_ptr<Clock> clock;
      if (s_virtual) {
        clock = std::make_shared<SimulatedClock>();
      } else {
        clock = std::make_shared<SteadyClock>();
      }
      PlaybackOptions opts;
      opts.start_t = s_start;
      if (s_seconds) {
        if (!(*s_seconds > 0.0)) throw RangeError("--seconds must be > 0");
        opts.max_frames = static_cast<std::uint64_t>(std::llround(*s_seconds * seq->fps()));
      }
      std::signal(SIGINT, on_signal);
      const auto start = std::chrono::steady_clock::now();
      auto h = start_playback(seq, sink, clock, opts);
      while (h->running() && !g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(5));
      h->stop();
      if (h->error()) std::rethrow_exception(h->error());
      print_stats(h->stats(), std::cout);
      if (s_loopback) std::cout << "loopback frames: " << loop.frame_count() << "\n";
      if (!s_det) {
        std::cout << "elapsed: "
                  << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";
      }
    } else if (*serve) {
      Project project = load_project(v_project);
      const ServeSettings settings =
          resolve_serve_settings(project, v_port, std::getenv("ULTRASTAGE_PORT"),
                                 std::getenv("ULTRASTAGE_TRANSPORT_ENDPOINT"));
      project.transport_endpoint = settings.transport_endpoint;
      auto sender = std::make_shared<artnet::UdpSender>(artnet::parse_endpoint(settings.transport_endpoint));
      const DomeGeometry geometry = project.dome;
      ControlService service(std::move(project), std::make_shared<SteadyClock>(), artnet_output(geometry, sender));
      HttpServer server(service, fs::path(v_project));
      const int port = server.bind(v_host, settings.port);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.start();
      std::cout << "listening on http://" << v_host << ":" << port << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
      server.stop();
      service.live().close();
    } else if (*dome_gen) {
      const double cutoff = d_cutoff_deg ? *d_cutoff_deg * kPi / 180.0 : kDefaultCutoffPolar;
      save_dome(generate_dome(d_panels, cutoff, d_k), d_out);
      std::cout << "wrote " << d_out << " (" << d_panels << " panels)\n";
    } else if (*calib) {
      const SpectralCalibration cal = calibration_from_captures(read_json(c_captures));
      save_calibration(cal, c_out);
      std::cout << "wrote " << c_out << " (" << to_string(cal.mode()) << ", condition " << cal.condition_number()
                << ")\n";
    } else if (*flicker) {
      save_sequence(flicker_generator(load_lightmap(f_base), f_spec), f_out);
      std::cout << "wrote " << f_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  }
  return 0;
}
