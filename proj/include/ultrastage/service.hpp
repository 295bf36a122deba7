#pragma once

#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ultrastage/artnet.hpp"
#include "ultrastage/pipeline.hpp"
#include "ultrastage/playback.hpp"
#include "ultrastage/preview.hpp"
#include "ultrastage/probe.hpp"
#include "ultrastage/rgbe.hpp"
#include "ultrastage/sequence.hpp"

namespace ultrastage {

// ---------------------------------------------------------------------------
// Project directory: project.json plus one file per asset.
//
//   project.json      {version, dome, calibration, envmaps, sequences,
//                      base_lightmap, live_overrides, transport_endpoint, dilation}
//   dome.json, calibration.json, base.lmap
//   envmaps/<name>.hdr, sequences/<name>.json

inline void check_asset_name(const std::string& name) {
  static const std::regex ok("[A-Za-z0-9_.-]{1,64}");
  if (!std::regex_match(name, ok) || name.front() == '.') {
    throw ConfigError("invalid asset name '" + name + "'");
  }
}

struct Project {
  DomeGeometry dome;
  SpectralCalibration calibration;
  std::map<std::string, EnvironmentMap> envmaps;
  std::map<std::string, std::shared_ptr<const Sequence>> sequences;
  std::optional<LightMap> base_lightmap;
  std::map<int, Drive6> live_overrides;
  std::string transport_endpoint = "127.0.0.1:6454";
  DilationConfig dilation;

  void validate() const {
    for (const auto& [name, m] : envmaps) check_asset_name(name);
    for (const auto& [name, s] : sequences) {
      check_asset_name(name);
      if (!s) throw InvariantError("sequence '" + name + "' is empty");
      if (s->panel_count() != dome.size()) throw ShapeError("sequence '" + name + "' does not match dome");
    }
    if (base_lightmap && base_lightmap->size() != dome.size()) throw ShapeError("base lightmap does not match dome");
    for (const auto& [id, w] : live_overrides) {
      if (id < 0 || static_cast<std::size_t>(id) >= dome.size()) throw NotFoundError("no panel " + std::to_string(id));
      if (!((w.array() >= 0.0).all() && (w.array() <= 1.0).all())) throw RangeError("override outside [0, 1]");
    }
    artnet::parse_endpoint(transport_endpoint);
    dilation.validate();
  }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

inline void save_project(const Project& p, const std::filesystem::path& dir) {
  p.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir / "envmaps", ec);
  std::filesystem::create_directories(dir / "sequences", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json j;
  j["version"] = 1;
  save_dome(p.dome, dir / "dome.json");
  j["dome"] = "dome.json";
  save_calibration(p.calibration, dir / "calibration.json");
  j["calibration"] = "calibration.json";
  j["envmaps"] = nlohmann::json::object();
  for (const auto& [name, m] : p.envmaps) {
    const std::string ref = "envmaps/" + name + ".hdr";
    save_hdr(m, dir / ref);
    j["envmaps"][name] = ref;
  }
  j["sequences"] = nlohmann::json::object();
  for (const auto& [name, s] : p.sequences) {
    const std::string ref = "sequences/" + name + ".json";
    save_sequence(*s, dir / ref);
    j["sequences"][name] = ref;
  }
  if (p.base_lightmap) {
    save_lightmap(*p.base_lightmap, dir / "base.lmap");
    j["base_lightmap"] = "base.lmap";
  } else {
    j["base_lightmap"] = nullptr;
  }
  j["live_overrides"] = nlohmann::json::object();
  for (const auto& [id, w] : p.live_overrides) {
    j["live_overrides"][std::to_string(id)] = std::vector<double>(w.data(), w.data() + 6);
  }
  j["transport_endpoint"] = p.transport_endpoint;
  j["dilation"] = to_json(p.dilation);
  write_text(dir / "project.json", j.dump(2) + "\n");
}

inline Project load_project(const std::filesystem::path& dir) {
  std::ifstream f(dir / "project.json");
  if (!f) throw IoError("cannot open " + (dir / "project.json").string());
  Project p;
  try {
    nlohmann::json j;
    f >> j;
    if (j.at("version").get<int>() != 1) throw FormatError("unsupported project version");
    p.dome = load_dome(dir / j.at("dome").get<std::string>());
    p.calibration = load_calibration(dir / j.at("calibration").get<std::string>());
    const nlohmann::json envmaps = j.value("envmaps", nlohmann::json::object());
    const nlohmann::json sequences = j.value("sequences", nlohmann::json::object());
    const nlohmann::json overrides = j.value("live_overrides", nlohmann::json::object());
    for (const auto& [name, ref] : envmaps.items()) {
      check_asset_name(name);
      p.envmaps.emplace(name, load_hdr(dir / ref.get<std::string>()));
    }
    for (const auto& [name, ref] : sequences.items()) {
      check_asset_name(name);
      p.sequences.emplace(name, std::make_shared<const Sequence>(load_sequence(dir / ref.get<std::string>())));
    }
    if (j.contains("base_lightmap") && !j["base_lightmap"].is_null()) {
      p.base_lightmap = load_lightmap(dir / j["base_lightmap"].get<std::string>());
    }
    for (const auto& [id, w] : overrides.items()) {
      const auto v = w.get<std::vector<double>>();
      if (v.size() != 6) throw FormatError("override for panel " + id + " needs 6 values");
      p.live_overrides[std::stoi(id)] = Drive6(v.data());
    }
    p.transport_endpoint = j.value("transport_endpoint", p.transport_endpoint);
    if (j.contains("dilation")) p.dilation = dilation_from_json(j["dilation"]);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed project file: " + std::string(e.what()));
  } catch (const std::invalid_argument&) {
    throw FormatError("malformed panel id in project file");
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Live state stream. Holds only the latest frame; every subscriber reads that
// one snapshot, so a slow reader skips intermediate frames instead of queueing.

struct LiveFrame {
  std::uint64_t version = 0;
  std::uint64_t frame_no = 0;
  double t = 0.0;
  std::int64_t lateness_ns = 0;
  std::string transport = "stopped";
  std::vector<Dmx6> dmx;
};

inline nlohmann::json to_json(const LiveFrame& f) {
  nlohmann::json dmx = nlohmann::json::array();
  for (const Dmx6& d : f.dmx) dmx.push_back(std::vector<int>(d.begin(), d.end()));
  return {{"version", f.version},   {"frame_no", f.frame_no},   {"t", f.t},
          {"lateness_us", f.lateness_ns / 1000}, {"transport", f.transport}, {"dmx", std::move(dmx)}};
}

class LiveHub {
 public:
  void publish(LiveFrame f) {
    {
      std::lock_guard lock(m_);
      f.version = ++version_;
      latest_ = std::make_shared<const LiveFrame>(std::move(f));
    }
    cv_.notify_all();
  }

  std::shared_ptr<const LiveFrame> latest() const {
    std::lock_guard lock(m_);
    return latest_;
  }

  // Blocks until a frame newer than `seen` exists, the hub closes, or the
  // timeout passes. Returns the newest frame or nullptr.
  std::shared_ptr<const LiveFrame> wait_newer(std::uint64_t seen, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(m_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || version_ > seen; });
    if (version_ > seen) return latest_;
    return nullptr;
  }

  void close() {
    {
      std::lock_guard lock(m_);
      closed_ = true;
    }
    cv_.notify_all();
  }
  bool closed() const {
    std::lock_guard lock(m_);
    return closed_;
  }

 private:
  mutable std::mutex m_;
  mutable std::condition_variable cv_;
  std::shared_ptr<const LiveFrame> latest_;
  std::uint64_t version_ = 0;
  bool closed_ = false;
};

// ---------------------------------------------------------------------------

enum class TransportAction { Play, Pause, Seek, Stop };

inline TransportAction transport_action_from_string(const std::string& s) {
  if (s == "play") return TransportAction::Play;
  if (s == "pause") return TransportAction::Pause;
  if (s == "seek") return TransportAction::Seek;
  if (s == "stop") return TransportAction::Stop;
  throw ConfigError("unknown transport action '" + s + "'");
}

struct TransportState {
  std::string state = "stopped";  // stopped | playing | paused
  std::string sequence;
  double t = 0.0;
  double fps = kDefaultFps;
  double duration = 0.0;
  std::uint64_t frames = 0;
  std::uint64_t late_frames = 0;
};

inline nlohmann::json to_json(const TransportState& s) {
  return {{"state", s.state},       {"sequence", s.sequence.empty() ? nlohmann::json() : nlohmann::json(s.sequence)},
          {"t", s.t},               {"fps", s.fps},
          {"duration", s.duration}, {"frames", s.frames},
          {"late_frames", s.late_frames}};
}

enum class OverrideMode { Rgb, Direct };

using FrameOutput = std::function<void(const LightMap&)>;

// Sends frames to the dome over Art-Net, one ArtSync per frame.
inline FrameOutput artnet_output(const DomeGeometry& geometry, std::shared_ptr<artnet::UdpSender> sender) {
  auto seq = std::make_shared<std::uint8_t>(0);
  return [geometry, sender, seq](const LightMap& m) {
    *seq = artnet::next_sequence(*seq);
    sender->send_frame(artnet::encode_frame(m, geometry, *seq));
  };
}

// Single-project control service. Commands are serialized; the playback
// thread only reads immutable override snapshots.
class ControlService {
 public:
  explicit ControlService(Project project, std::shared_ptr<Clock> clock = std::make_shared<SteadyClock>(),
                          FrameOutput output = {})
      : project_(std::move(project)), clock_(std::move(clock)), output_(std::move(output)) {
    project_.validate();
    overrides_ = std::make_shared<const std::map<int, Drive6>>(project_.live_overrides);
    std::lock_guard lock(cmd_m_);
    publish_idle();
  }

  ~ControlService() {
    std::lock_guard lock(cmd_m_);
    if (handle_) handle_->stop();
    hub_.close();
  }

  ControlService(const ControlService&) = delete;
  ControlService& operator=(const ControlService&) = delete;

  LiveHub& live() { return hub_; }
  const DomeGeometry& dome() const { return project_.dome; }

  Project project() const {
    std::lock_guard lock(cmd_m_);
    Project p = project_;
    p.live_overrides = *overrides();
    return p;
  }

  void save(const std::filesystem::path& dir) const { save_project(project(), dir); }

  nlohmann::json state() {
    std::lock_guard lock(cmd_m_);
    nlohmann::json envs = nlohmann::json::array(), seqs = nlohmann::json::array();
    for (const auto& [name, m] : project_.envmaps) {
      envs.push_back({{"name", name}, {"width", m.width()}, {"height", m.height()}});
    }
    for (const auto& [name, s] : project_.sequences) {
      seqs.push_back({{"name", name}, {"duration", s->duration()}, {"fps", s->fps()}, {"loop", s->loop()}});
    }
    nlohmann::json ov = nlohmann::json::object();
    for (const auto& [id, w] : *overrides()) ov[std::to_string(id)] = std::vector<double>(w.data(), w.data() + 6);
    nlohmann::json base;
    if (project_.base_lightmap) {
      base = {{"exposure_scalar", project_.base_lightmap->exposure_scalar},
              {"deficit", to_json(project_.base_lightmap->deficit)}};
    }
    return {{"panels", project_.dome.size()},
            {"universes", project_.dome.universes().size()},
            {"cutoff_polar", project_.dome.cutoff_polar()},
            {"calibration", to_string(project_.calibration.mode())},
            {"envmaps", envs},
            {"sequences", seqs},
            {"base_lightmap", base},
            {"overrides", ov},
            {"transport", to_json(transport_locked())},
            {"transport_endpoint", project_.transport_endpoint},
            {"dilation", to_json(project_.dilation)}};
  }

  void add_envmap(const std::string& name, EnvironmentMap map) {
    check_asset_name(name);
    std::lock_guard lock(cmd_m_);
    project_.envmaps.insert_or_assign(name, std::move(map));
  }

  void add_sequence(const std::string& name, Sequence seq) {
    check_asset_name(name);
    if (seq.panel_count() != project_.dome.size()) throw ShapeError("sequence does not match dome");
    std::lock_guard lock(cmd_m_);
    project_.sequences.insert_or_assign(name, std::make_shared<const Sequence>(std::move(seq)));
  }

  // Runs the full pipeline on a stored map and makes the result the base look.
  ReproduceReport reproduce(const std::string& envmap, std::optional<std::pair<int, int>> resolution = {},
                            std::optional<DilationConfig> dilation = {}, bool drop_uncovered = false) {
    std::lock_guard lock(cmd_m_);
    const EnvironmentMap& map = find_envmap(envmap);
    ReproduceOptions opts;
    opts.resolution = resolution;
    opts.dilation = dilation.value_or(project_.dilation);
    opts.drop_uncovered = drop_uncovered;
    ReproduceReport rep = ultrastage::reproduce(map, project_.dome, project_.calibration, opts);
    project_.base_lightmap = rep.lightmap;
    if (!playing_locked()) publish_idle();
    return rep;
  }

  // Stores an override and returns the panel's new DMX values. Rgb mode
  // solves for drive weights; Direct takes the 6 weights as given.
  Dmx6 set_panel_override(int panel, const Eigen::VectorXd& values, OverrideMode mode) {
    check_panel(panel);
    Drive6 w;
    if (mode == OverrideMode::Rgb) {
      if (values.size() != 3) throw ShapeError("rgb override needs 3 values");
      const Rgb target = values;
      if (!target.allFinite() || (target < 0.0).any()) throw RangeError("rgb target must be finite and >= 0");
      w = solve_panel(target, project_.calibration);
      if (w.maxCoeff() > 1.0 + kQuantizeTolerance) throw RangeError("rgb target beyond panel output");
      w = w.cwiseMin(1.0);
    } else {
      if (values.size() != 6) throw ShapeError("direct override needs 6 values");
      w = values;
      if (!w.allFinite() || (w.array() < 0.0).any() || (w.array() > 1.0).any()) {
        throw RangeError("direct override values must be in [0, 1]");
      }
    }
    std::lock_guard lock(cmd_m_);
    auto next = std::make_shared<std::map<int, Drive6>>(*overrides());
    (*next)[panel] = w;
    swap_overrides(std::move(next));
    return quantize(w);
  }

  void clear_override(int panel) {
    check_panel(panel);
    std::lock_guard lock(cmd_m_);
    auto next = std::make_shared<std::map<int, Drive6>>(*overrides());
    next->erase(panel);
    swap_overrides(std::move(next));
  }

  TransportState transport(TransportAction action, const std::string& sequence = {}, double t = 0.0) {
    std::lock_guard lock(cmd_m_);
    settle_locked();
    switch (action) {
      case TransportAction::Play: {
        const std::string name = sequence.empty() ? active_name_ : sequence;
        if (name.empty()) throw NotFoundError("no sequence selected");
        auto seq = find_sequence(name);
        if (name != active_name_) {
          stop_playback_locked();
          active_name_ = name;
          active_ = seq;
          position_ = 0.0;
          advance_on_resume_ = false;
        }
        if (playing_locked()) break;
        double start = position_;
        if (advance_on_resume_) start += 1.0 / active_->fps();
        advance_on_resume_ = false;
        if (!active_->loop() && start >= active_->duration() && active_->duration() > 0.0) start = 0.0;
        start_playback_locked(start);
        break;
      }
      case TransportAction::Pause:
        if (playing_locked()) {
          stop_playback_locked();
          state_ = "paused";
          publish_idle();
        }
        break;
      case TransportAction::Seek: {
        if (!sequence.empty() && sequence != active_name_) {
          auto seq = find_sequence(sequence);
          stop_playback_locked();
          active_ = seq;
          active_name_ = sequence;
          state_ = "paused";
        }
        if (!active_) throw NotFoundError("no sequence selected");
        if (!(t >= 0.0) || !std::isfinite(t)) throw RangeError("seek time must be finite and >= 0");
        const double end = active_->duration();
        if (active_->loop() && end > 0.0) {
          t = std::fmod(t, end);
        } else {
          t = std::min(t, end);
        }
        const bool was_playing = playing_locked();
        stop_playback_locked();
        position_ = t;
        advance_on_resume_ = false;
        if (was_playing) {
          start_playback_locked(t);
        } else {
          if (state_ == "stopped") state_ = "paused";
          publish_idle();
        }
        break;
      }
      case TransportAction::Stop:
        stop_playback_locked();
        state_ = "stopped";
        position_ = 0.0;
        advance_on_resume_ = false;
        publish_idle();
        break;
    }
    return transport_locked();
  }

  TransportState transport_state() {
    std::lock_guard lock(cmd_m_);
    settle_locked();
    return transport_locked();
  }

  // Blocks until the current playback run ends on its own.
  void wait_playback() {
    PlaybackHandle* h = nullptr;
    {
      std::lock_guard lock(cmd_m_);
      h = handle_.get();
    }
    if (h) h->wait();
    std::lock_guard lock(cmd_m_);
    settle_locked();
  }

  // The frame the dome currently shows: last emitted frame, overrides included.
  LightMap current_frame() const {
    std::lock_guard lock(frame_m_);
    return current_;
  }

  // PNG bytes. Source "live" is the current dome state reconstructed over the
  // sphere; any other source names an environment map.
  std::vector<std::uint8_t> preview(PreviewKind kind, const std::string& source = "live", int width = 256,
                                    int height = 128, int probe_size = 128) {
    if (width < 2 || height < 1 || width > 4096 || height > 2048) throw RangeError("preview size out of range");
    if (probe_size < 8 || probe_size > 1024) throw RangeError("probe size out of range");
    if (kind == PreviewKind::VoronoiOverlay) return encode_png(voronoi_overlay(project_.dome, width, height));
    const EnvironmentMap env = preview_source(kind, source, width, height);
    switch (kind) {
      case PreviewKind::ProbeDiffuse: return encode_png(tonemap_for_display(render_probe(env, ProbeMode::Diffuse, probe_size)));
      case PreviewKind::ProbeMirror: return encode_png(tonemap_for_display(render_probe(env, ProbeMode::Mirror, probe_size)));
      default: return encode_png(tonemap_for_display(env));
    }
  }

 private:
  EnvironmentMap preview_source(PreviewKind kind, const std::string& source, int width, int height) {
    std::lock_guard lock(cmd_m_);
    if (source == "live") {
      return reconstruct_env(current_frame(), project_.dome, project_.calibration, width, height);
    }
    const EnvironmentMap& map = find_envmap(source);
    if (kind != PreviewKind::ReconEnv) return map;
    ReproduceOptions opts;
    opts.dilation = project_.dilation;
    const ReproduceReport rep = ultrastage::reproduce(map, project_.dome, project_.calibration, opts);
    return reconstruct_env(rep.lightmap, project_.dome, project_.calibration, width, height);
  }

  const EnvironmentMap& find_envmap(const std::string& name) const {
    const auto it = project_.envmaps.find(name);
    if (it == project_.envmaps.end()) throw NotFoundError("no environment map '" + name + "'");
    return it->second;
  }

  std::shared_ptr<const Sequence> find_sequence(const std::string& name) const {
    const auto it = project_.sequences.find(name);
    if (it == project_.sequences.end()) throw NotFoundError("no sequence '" + name + "'");
    return it->second;
  }

  void check_panel(int panel) const {
    if (panel < 0 || static_cast<std::size_t>(panel) >= project_.dome.size()) {
      throw NotFoundError("no panel " + std::to_string(panel));
    }
  }

  std::shared_ptr<const std::map<int, Drive6>> overrides() const {
    std::lock_guard lock(ov_m_);
    return overrides_;
  }

  void swap_overrides(std::shared_ptr<const std::map<int, Drive6>> next) {
    {
      std::lock_guard lock(ov_m_);
      overrides_ = std::move(next);
    }
    if (!playing_locked()) publish_idle();
  }

  LightMap composite(const LightMap& base, const std::map<int, Drive6>& ov) const {
    LightMap out = base;
    for (const auto& [id, w] : ov) out.set_panel(static_cast<std::size_t>(id), w);
    return out;
  }

  void emit(const LightMap& frame, std::uint64_t frame_no, double t, Nanos lateness, const std::string& state) {
    {
      std::lock_guard lock(frame_m_);
      current_ = frame;
    }
    if (output_) output_(frame);
    LiveFrame f;
    f.frame_no = frame_no;
    f.t = t;
    f.lateness_ns = lateness.count();
    f.transport = state;
    f.dmx = frame.dmx;
    hub_.publish(std::move(f));
  }

  // Publishes the resting frame: the paused sequence position, otherwise the
  // base look.
  void publish_idle() {
    LightMap base;
    double t = 0.0;
    if (active_ && state_ == "paused") {
      base = active_->sample(position_);
      t = position_;
    } else if (project_.base_lightmap) {
      base = *project_.base_lightmap;
    } else {
      base = LightMap::zeros(project_.dome.size());
    }
    emit(composite(base, *overrides()), last_frame_no_, t, Nanos{0}, state_);
  }

  void start_playback_locked(double start) {
    state_ = "playing";
    position_ = start;
    auto sink = [this](const LightMap& frame, const FrameInfo& info) {
      emit(composite(frame, *overrides()), info.frame_no, info.t, info.lateness, "playing");
    };
    PlaybackOptions opts;
    opts.start_t = start;
    opts.record_lateness = false;
    if (active_->loop()) opts.max_frames = std::numeric_limits<std::uint64_t>::max();
    handle_ = start_playback(active_, sink, clock_, opts);
  }

  void stop_playback_locked() {
    if (!handle_) return;
    handle_->stop();
    collect_locked();
  }

  // Folds a finished or stopped run back into the transport position.
  void collect_locked() {
    const PlaybackStats s = handle_->stats();
    frames_ += s.frames;
    late_frames_ += s.late_frames;
    if (s.frames > 0) {
      position_ = handle_->current_t();
      last_frame_no_ = s.frames - 1;
      advance_on_resume_ = true;
    }
    handle_.reset();
  }

  void settle_locked() {
    if (handle_ && !handle_->running()) {
      handle_->wait();
      collect_locked();
      state_ = "paused";
    }
  }

  bool playing_locked() const { return handle_ && handle_->running(); }

  TransportState transport_locked() const {
    TransportState s;
    s.state = state_;
    s.sequence = active_name_;
    s.t = handle_ ? handle_->current_t() : position_;
    if (active_) {
      s.fps = active_->fps();
      s.duration = active_->duration();
    }
    s.frames = frames_ + (handle_ ? handle_->frames_emitted() : 0);
    s.late_frames = late_frames_ + (handle_ ? handle_->late_frames() : 0);
    return s;
  }

  mutable std::mutex cmd_m_;
  mutable std::mutex ov_m_;
  mutable std::mutex frame_m_;
  Project project_;
  std::shared_ptr<Clock> clock_;
  FrameOutput output_;
  std::shared_ptr<const std::map<int, Drive6>> overrides_;
  LightMap current_;
  LiveHub hub_;

  std::unique_ptr<PlaybackHandle> handle_;
  std::shared_ptr<const Sequence> active_;
  std::string active_name_;
  std::string state_ = "stopped";
  double position_ = 0.0;
  bool advance_on_resume_ = false;
  std::uint64_t last_frame_no_ = 0;
  std::uint64_t frames_ = 0;
  std::uint64_t late_frames_ = 0;
};

}  // namespace ultrastage
