#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ultrastage/http.hpp"

using namespace ultrastage;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ultrastage_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(f), {});
  }
  return out;
}

Sequence ramp(std::size_t panels, double seconds) {
  std::vector<Drive6> lo(panels, Drive6::Zero()), hi(panels, Drive6::Constant(0.8));
  std::vector<Keyframe> kfs{{0.0, LightMap::from_weights(lo), Interp::Linear},
                            {seconds, LightMap::from_weights(hi), Interp::Linear}};
  return Sequence(std::move(kfs), 120.0);
}

Project small_project() {
  Project p;
  p.dome = generate_dome(12);
  p.calibration = default_calibration();
  p.envmaps.emplace("sky", oracle::lobe_map(64, 32, {{Vec3(0.3, 0.9, 0.2).normalized(), Rgb(4, 3, 2), 0.5}}, Rgb::Constant(0.05)));
  p.envmaps.emplace("dark", EnvironmentMap(32, 16));
  p.sequences.emplace("ramp", std::make_shared<const Sequence>(ramp(12, 2.0)));
  return p;
}

}  // namespace

TEST(Project, SaveLoadSaveIsByteIdentical) {
  Project p = small_project();
  p.live_overrides[3] = Drive6(0.1, 0.2, 0.3, 0.4, 0.5, 1.0 / 3.0);
  p.base_lightmap = reproduce(p.envmaps.at("sky"), p.dome, p.calibration).lightmap;
  const fs::path a = temp_dir("proj_a"), b = temp_dir("proj_b");
  save_project(p, a);
  save_project(load_project(a), b);
  const auto ta = read_tree(a), tb = read_tree(b);
  EXPECT_GE(ta.size(), 7u);
  EXPECT_EQ(ta, tb);
}

TEST(Project, Validation) {
  Project p = small_project();
  p.live_overrides[40] = Drive6::Zero();
  EXPECT_THROW(p.validate(), NotFoundError);
  p.live_overrides.clear();
  p.live_overrides[1] = Drive6::Constant(1.5);
  EXPECT_THROW(p.validate(), RangeError);
  p.live_overrides.clear();
  p.envmaps.emplace("../escape", EnvironmentMap(4, 2));
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_THROW(load_project(temp_dir("missing")), IoError);
}

TEST(Service, ReproduceZeroAndDeterministic) {
  ControlService svc(small_project());
  const ReproduceReport z = svc.reproduce("dark");
  for (const Dmx6& d : z.lightmap.dmx) EXPECT_EQ(d, Dmx6{});
  EXPECT_TRUE((z.lightmap.deficit == 0.0).all());
  const ReproduceReport a = svc.reproduce("sky"), b = svc.reproduce("sky");
  EXPECT_EQ(a.lightmap, b.lightmap);
  EXPECT_EQ(svc.current_frame(), a.lightmap);
  EXPECT_THROW(svc.reproduce("nope"), NotFoundError);
}

TEST(Service, ImpulseWithinCapacityLeavesNoDeficit) {
  Project p = small_project();
  EnvironmentMap m = EnvironmentMap::uniform(64, 32, Rgb::Constant(0.01));
  m.set(20, 8, Rgb::Constant(50.0));
  p.envmaps.emplace("spot", m);
  ControlService svc(std::move(p));
  const ReproduceReport r = svc.reproduce("spot");
  EXPECT_TRUE((r.lightmap.deficit == 0.0).all());
  const Rgb emitted = r.emitted_power, total = r.total_power;
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(emitted[c], total[c], total[c] * 1e-2);
}

TEST(Service, OverrideThenClearRestoresExactly) {
  ControlService svc(small_project());
  svc.reproduce("sky");
  const LightMap before = svc.current_frame();
  svc.set_panel_override(7, Eigen::Vector3d(0.5, 0.0, 0.0), OverrideMode::Rgb);
  EXPECT_NE(svc.current_frame(), before);
  svc.clear_override(7);
  EXPECT_EQ(svc.current_frame(), before);
  EXPECT_EQ(svc.live().latest()->dmx, before.dmx);
}

TEST(Service, DirectOverride) {
  ControlService svc(small_project());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(6);
  w[0] = 1.0;
  EXPECT_EQ(svc.set_panel_override(7, w, OverrideMode::Direct), (Dmx6{255, 0, 0, 0, 0, 0}));
  EXPECT_EQ(svc.current_frame().dmx[7], (Dmx6{255, 0, 0, 0, 0, 0}));
  EXPECT_THROW(svc.set_panel_override(12, w, OverrideMode::Direct), NotFoundError);
  EXPECT_THROW(svc.set_panel_override(-1, w, OverrideMode::Direct), NotFoundError);
  EXPECT_THROW(svc.clear_override(99), NotFoundError);
  w[1] = 1.2;
  EXPECT_THROW(svc.set_panel_override(7, w, OverrideMode::Direct), RangeError);
  EXPECT_THROW(svc.set_panel_override(7, Eigen::VectorXd::Zero(3), OverrideMode::Direct), ShapeError);
  EXPECT_THROW(svc.set_panel_override(7, Eigen::Vector3d(-1, 0, 0), OverrideMode::Rgb), RangeError);
}

TEST(Service, RgbOverrideMatchesTarget) {
  ControlService svc(small_project());
  const SpectralCalibration cal = default_calibration();
  const Drive6 truth(0.1, 0.3, 0.0, 0.2, 0.05, 0.1);
  const Rgb target = cal.emitted_rgb(truth);
  svc.set_panel_override(7, target.matrix(), OverrideMode::Rgb);
  const Drive6 w = svc.project().live_overrides.at(7);
  EXPECT_LE((cal.emitted_rgb(w) - target).abs().maxCoeff(), 1e-6);
  EXPECT_THROW(svc.set_panel_override(7, (cal.white_point() * 3.0).matrix(), OverrideMode::Rgb), RangeError);
}

TEST(Transport, PauseShowsSampledFrame) {
  auto clock = std::make_shared<ManualClock>();
  Project p = small_project();
  const auto seq = p.sequences.at("ramp");
  ControlService svc(std::move(p), clock);
  TransportState s = svc.transport(TransportAction::Play, "ramp");
  EXPECT_EQ(s.state, "playing");
  ASSERT_TRUE(clock->wait_idle());
  clock->advance_to(std::chrono::milliseconds(500));
  ASSERT_TRUE(clock->wait_idle());
  s = svc.transport(TransportAction::Pause);
  EXPECT_EQ(s.state, "paused");
  EXPECT_NEAR(s.t, 0.5, 1e-9);
  EXPECT_EQ(svc.current_frame(), seq->sample(s.t));
  EXPECT_EQ(svc.live().latest()->dmx, seq->sample(s.t).dmx);

  // Resume continues with the next frame.
  svc.transport(TransportAction::Play);
  ASSERT_TRUE(clock->wait_idle());
  clock->advance_to(std::chrono::milliseconds(600));
  ASSERT_TRUE(clock->wait_idle());
  s = svc.transport(TransportAction::Pause);
  EXPECT_NEAR(s.t, 0.5 + 13.0 / 120.0, 1e-9);
  EXPECT_EQ(svc.current_frame(), seq->sample(s.t));
}

TEST(Transport, SeekClampsAndStopResets) {
  auto clock = std::make_shared<ManualClock>();
  ControlService svc(small_project(), clock);
  TransportState s = svc.transport(TransportAction::Seek, "ramp", 99.0);
  EXPECT_EQ(s.t, 2.0);
  EXPECT_EQ(s.state, "paused");
  s = svc.transport(TransportAction::Seek, "", 0.75);
  EXPECT_EQ(s.t, 0.75);
  EXPECT_THROW(svc.transport(TransportAction::Seek, "", -1.0), RangeError);
  s = svc.transport(TransportAction::Stop);
  EXPECT_EQ(s.state, "stopped");
  EXPECT_EQ(s.t, 0.0);
  EXPECT_THROW(svc.transport(TransportAction::Play, "nope"), NotFoundError);
  EXPECT_THROW(transport_action_from_string("rewind"), ConfigError);
}

TEST(Transport, RunsToEndUnderSimulatedClock) {
  auto clock = std::make_shared<SimulatedClock>();
  std::vector<LightMap> sent;
  std::mutex m;
  ControlService svc(small_project(), clock, [&](const LightMap& f) {
    std::lock_guard lock(m);
    sent.push_back(f);
  });
  sent.clear();
  svc.transport(TransportAction::Play, "ramp");
  svc.wait_playback();
  const TransportState s = svc.transport_state();
  EXPECT_EQ(s.frames, 240u);
  EXPECT_EQ(s.state, "paused");
  EXPECT_EQ(sent.size(), 240u);
}

TEST(Transport, EditIsAtomicAtFrameBoundaries) {
  auto clock = std::make_shared<ManualClock>();
  Project p = small_project();
  const auto seq = p.sequences.at("ramp");
  std::vector<LightMap> sent;
  std::mutex m;
  ControlService svc(std::move(p), clock, [&](const LightMap& f) {
    std::lock_guard lock(m);
    sent.push_back(f);
  });
  svc.transport(TransportAction::Play, "ramp");
  ASSERT_TRUE(clock->wait_idle());
  clock->advance_to(std::chrono::milliseconds(100));
  ASSERT_TRUE(clock->wait_idle());
  std::size_t edit_at = 0;
  {
    std::lock_guard lock(m);
    edit_at = sent.size();
  }
  svc.set_panel_override(7, Eigen::Vector<double, 6>(1, 0, 0, 0, 0, 0), OverrideMode::Direct);
  clock->advance_to(std::chrono::milliseconds(200));
  ASSERT_TRUE(clock->wait_idle());
  svc.transport(TransportAction::Pause);

  std::lock_guard lock(m);
  // sent[0] is the idle frame from construction.
  ASSERT_GT(sent.size(), edit_at + 5);
  for (std::size_t k = 1; k < sent.size(); ++k) {
    const bool overridden = sent[k].dmx[7] == Dmx6{255, 0, 0, 0, 0, 0};
    EXPECT_EQ(overridden, k >= edit_at) << k;
    for (std::size_t q = 0; q < 12; ++q) {
      if (q != 7) EXPECT_EQ(sent[k].dmx[q], sent[k].dmx[0]);
    }
  }
}

TEST(LiveHub, SubscribersConvergeToLatest) {
  LiveHub hub;
  std::vector<std::uint64_t> fast, slow;
  std::atomic<bool> done{false};
  auto reader = [&](std::vector<std::uint64_t>& seen, std::chrono::milliseconds pause) {
    std::uint64_t v = 0;
    while (true) {
      const auto f = hub.wait_newer(v, std::chrono::milliseconds(50));
      if (f) {
        seen.push_back(f->frame_no);
        v = f->version;
      } else if (done) {
        break;
      }
      std::this_thread::sleep_for(pause);
    }
  };
  std::thread a(reader, std::ref(fast), std::chrono::milliseconds(0));
  std::thread b(reader, std::ref(slow), std::chrono::milliseconds(15));
  for (std::uint64_t n = 1; n <= 400; ++n) {
    LiveFrame f;
    f.frame_no = n;
    hub.publish(f);
    std::this_thread::sleep_for(std::chrono::microseconds(250));
  }
  done = true;
  a.join();
  b.join();
  ASSERT_FALSE(fast.empty());
  ASSERT_FALSE(slow.empty());
  EXPECT_EQ(fast.back(), 400u);
  EXPECT_EQ(slow.back(), 400u);
  EXPECT_LT(slow.size(), 100u);
  EXPECT_TRUE(std::is_sorted(slow.begin(), slow.end()));
  EXPECT_EQ(std::adjacent_find(slow.begin(), slow.end()), slow.end());
}

TEST(Service, IdenticalRequestsGiveIdenticalProjects) {
  auto run = [](const fs::path& dir) {
    ControlService svc(small_project(), std::make_shared<ManualClock>());
    svc.reproduce("sky", std::make_pair(32, 16));
    svc.set_panel_override(2, Eigen::Vector3d(0.2, 0.1, 0.05), OverrideMode::Rgb);
    svc.set_panel_override(5, Eigen::Vector<double, 6>::Constant(0.25), OverrideMode::Direct);
    svc.clear_override(2);
    svc.save(dir);
  };
  const fs::path a = temp_dir("det_a"), b = temp_dir("det_b");
  run(a);
  run(b);
  EXPECT_EQ(read_tree(a), read_tree(b));
}

TEST(Preview, OverlayAndDeterminism) {
  const DomeGeometry g = generate_dome(480);
  const LdrImage img = voronoi_overlay(g, 256, 128);
  std::set<std::array<std::uint8_t, 3>> colors;
  for (std::size_t k = 0; k < img.rgb.size(); k += 3) colors.insert({img.rgb[k], img.rgb[k + 1], img.rgb[k + 2]});
  EXPECT_EQ(colors.size(), 480u);

  ControlService svc(small_project());
  svc.reproduce("sky");
  for (const auto kind : {PreviewKind::ProbeDiffuse, PreviewKind::ProbeMirror, PreviewKind::ReconEnv,
                          PreviewKind::VoronoiOverlay}) {
    const auto a = svc.preview(kind), b = svc.preview(kind);
    ASSERT_GT(a.size(), 8u);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a[1], 'P');
  }
  EXPECT_EQ(svc.preview(PreviewKind::ProbeDiffuse, "sky"), svc.preview(PreviewKind::ProbeDiffuse, "sky"));
  EXPECT_THROW(svc.preview(PreviewKind::ReconEnv, "nope"), NotFoundError);
}

TEST(Preview, ReconstructionIsConstantPerCell) {
  const DomeGeometry g = generate_dome(12);
  const auto cal = default_calibration();
  const ReproduceReport r = reproduce(EnvironmentMap::uniform(64, 32, Rgb::Ones()), g, cal);
  const EnvironmentMap env = reconstruct_env(r.lightmap, g, cal, 64, 32);
  const PartitionMap part = partition(g, 64, 32);
  std::map<int, Rgb> seen;
  for (int j = 0; j < 32; ++j) {
    for (int i = 0; i < 64; ++i) {
      const int o = part.owner_at(i, j);
      const auto [it, fresh] = seen.emplace(o, env.at(i, j));
      if (!fresh) EXPECT_TRUE((it->second == env.at(i, j)).all());
    }
  }
}

TEST(ServeSettings, EnvironmentOverrides) {
  Project p = small_project();
  ServeSettings s = resolve_serve_settings(p, std::nullopt, nullptr, nullptr);
  EXPECT_EQ(s.port, kDefaultServicePort);
  EXPECT_EQ(s.transport_endpoint, "127.0.0.1:6454");
  s = resolve_serve_settings(p, std::nullopt, "9123", "10.1.2.3:7000");
  EXPECT_EQ(s.port, 9123);
  EXPECT_EQ(s.transport_endpoint, "10.1.2.3:7000");
  EXPECT_EQ(resolve_serve_settings(p, 7001, "9123", nullptr).port, 7001);
  EXPECT_THROW(resolve_serve_settings(p, std::nullopt, "port", nullptr), ConfigError);
  EXPECT_THROW(resolve_serve_settings(p, std::nullopt, nullptr, "host:0"), ConfigError);
}

class Http : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = temp_dir("http");
    svc_ = std::make_unique<ControlService>(small_project(), std::make_shared<ManualClock>());
    server_ = std::make_unique<HttpServer>(*svc_, dir_);
    port_ = server_->bind("127.0.0.1", 0);
    server_->start();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    server_->stop();
  }

  fs::path dir_;
  std::unique_ptr<ControlService> svc_;
  std::unique_ptr<HttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

TEST_F(Http, StateAndErrors) {
  auto r = client_->Get("/api/state");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  const auto j = nlohmann::json::parse(r->body);
  EXPECT_EQ(j["panels"], 12);
  EXPECT_EQ(j["transport"]["state"], "stopped");

  r = client_->Post("/api/reproduce", R"({"envmap": "nope"})", "application/json");
  EXPECT_EQ(r->status, 404);
  r = client_->Post("/api/reproduce", "{not json", "application/json");
  EXPECT_EQ(r->status, 400);
  r = client_->Put("/api/panel/99/override", R"({"mode": "direct", "values": [1,0,0,0,0,0]})", "application/json");
  EXPECT_EQ(r->status, 404);
  r = client_->Get("/api/preview/heatmap");
  EXPECT_EQ(r->status, 404);
  r = client_->Post("/api/transport", R"({"action": "rewind"})", "application/json");
  EXPECT_EQ(r->status, 400);
}

TEST_F(Http, UploadReproduceEditAndSave) {
  const auto hdr = encode_hdr(oracle::random_map(32, 16, 4));
  auto r = client_->Post("/api/envmap?name=upload", std::string(hdr.begin(), hdr.end()), "application/octet-stream");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  r = client_->Post("/api/reproduce", R"({"envmap": "upload", "resolution": [32, 16]})", "application/json");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(nlohmann::json::parse(r->body)["panels"], 12);
  const LightMap base = svc_->current_frame();

  r = client_->Put("/api/panel/7/override", R"({"mode": "direct", "values": [1,0,0,0,0,0]})", "application/json");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(nlohmann::json::parse(r->body)["dmx"], nlohmann::json({255, 0, 0, 0, 0, 0}));
  r = client_->Delete("/api/panel/7/override");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(svc_->current_frame(), base);

  r = client_->Get("/api/preview/voronoi_overlay?width=64&height=32");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(r->body.substr(1, 3), "PNG");

  r = client_->Post("/api/transport", R"({"action": "seek", "sequence": "ramp", "t": 1.0})", "application/json");
  EXPECT_EQ(nlohmann::json::parse(r->body)["t"], 1.0);

  r = client_->Post("/api/save", "", "application/json");
  EXPECT_EQ(r->status, 200);
  EXPECT_TRUE(load_project(dir_).envmaps.contains("upload"));
}

TEST_F(Http, LiveStreamDeliversFrames) {
  std::string buffer;
  std::thread editor([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    svc_->set_panel_override(3, Eigen::Vector<double, 6>(0, 1, 0, 0, 0, 0), OverrideMode::Direct);
  });
  httplib::Client c("127.0.0.1", port_);
  c.Get("/api/live", [&](const char* data, std::size_t n) {
    buffer.append(data, n);
    return buffer.find("\"dmx\":[[0,0,0,0,0,0],[0,0,0,0,0,0],[0,0,0,0,0,0],[0,255,") == std::string::npos;
  });
  editor.join();
  EXPECT_NE(buffer.find("event: frame"), std::string::npos);
  EXPECT_NE(buffer.find("[0,255,0,0,0,0]"), std::string::npos);
}

TEST(Reproduce, UniformFollowsCellArea) {
  // Panel luminance tracks the Voronoi cell area; the oracle partition uses
  // acos distances and the exact latitude-band solid angle.
  const auto cal = default_calibration();
  const DomeGeometry g = generate_dome(480);
  std::vector<Vec3> dirs;
  for (const auto& p : g.panels()) dirs.push_back(p.direction);
  const int w = 128, h = 64;
  for (bool drop : {false, true}) {
    std::vector<double> area(g.size(), 0.0);
    for (int j = 0; j < h; ++j) {
      if (drop && kPi * (j + 0.5) / h > g.cutoff_polar()) continue;
      const double omega = 2.0 * kPi / w * (std::cos(kPi * j / h) - std::cos(kPi * (j + 1) / h));
      for (int i = 0; i < w; ++i) {
        area[static_cast<std::size_t>(oracle::nearest_panels(oracle::equirect_direction(i, j, w, h), dirs, 0.0).ids[0])] +=
            omega;
      }
    }
    ReproduceOptions opt;
    opt.drop_uncovered = drop;
    opt.exposure_percentile = 100.0;  // nothing above cap, so no dilation
    const ReproduceReport r = reproduce(EnvironmentMap::uniform(w, h, Rgb::Constant(0.7)), g, cal, opt);
    EXPECT_EQ(r.dilation_iterations, 0);
    const double scale = luminance(cal.emitted_rgb(r.lightmap.weights[0])) / area[0];
    for (std::size_t p = 0; p < g.size(); ++p) {
      EXPECT_NEAR(luminance(cal.emitted_rgb(r.lightmap.weights[p])), scale * area[p], scale * area[p] * 1e-9) << p;
    }
  }
}
