#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

// Before httplib: <resolv.h> defines a _res macro that breaks Eigen.
#include "ultrastage/service.hpp"

#include <httplib.h>

namespace ultrastage {

inline constexpr int kDefaultServicePort = 8080;

struct ServeSettings {
  std::string host = "127.0.0.1";
  int port = kDefaultServicePort;
  std::string transport_endpoint;
};

// Port: flag, then ULTRASTAGE_PORT, then the default. Transport endpoint:
// ULTRASTAGE_TRANSPORT_ENDPOINT, then the project file.
inline ServeSettings resolve_serve_settings(const Project& project, std::optional<int> port_flag,
                                            const char* env_port, const char* env_endpoint) {
  ServeSettings s;
  s.transport_endpoint = project.transport_endpoint;
  if (env_port && *env_port) {
    char* end = nullptr;
    const long v = std::strtol(env_port, &end, 10);
    if (*end != '\0' || v < 0 || v > 65535) throw ConfigError("ULTRASTAGE_PORT must be a port number");
    s.port = static_cast<int>(v);
  }
  if (port_flag) s.port = *port_flag;
  if (s.port < 0 || s.port > 65535) throw ConfigError("port out of range");
  if (env_endpoint && *env_endpoint) s.transport_endpoint = env_endpoint;
  artnet::parse_endpoint(s.transport_endpoint);
  return s;
}

inline int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Io: return 500;
    case ErrorKind::Solver: return 422;
    default: return 400;
  }
}

// HTTP + JSON front end of a ControlService. The live stream is served as
// Server-Sent Events at /api/live, one "frame" event per coalesced state.
class HttpServer {
 public:
  explicit HttpServer(ControlService& service, std::optional<std::filesystem::path> project_dir = {},
                      double max_events_per_s = kDefaultFps)
      : svc_(service), project_dir_(std::move(project_dir)), min_interval_(std::chrono::nanoseconds(
                                                                   static_cast<std::int64_t>(1e9 / max_events_per_s))) {
    routes();
  }

  ~HttpServer() { stop(); }

  // Binds and returns the port; 0 picks a free one.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  void run() { server_.listen_after_bind(); }

  void start() {
    thread_ = std::thread([this] { run(); });
    server_.wait_until_ready();
  }

  void stop() {
    stopping_ = true;
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const StageError& e) {
      reply_error(res, http_status(e.kind()), e.what(), e.kind(), e.stage());
    } catch (const Error& e) {
      reply_error(res, http_status(e.kind()), e.what(), e.kind());
    } catch (const nlohmann::json::exception& e) {
      reply_error(res, 400, std::string("bad request body: ") + e.what(), ErrorKind::Format);
    }
  }

  static void reply_error(httplib::Response& res, int status, const std::string& msg, ErrorKind kind,
                          const std::string& stage = {}) {
    nlohmann::json j{{"error", msg}, {"kind", to_string(kind)}};
    if (!stage.empty()) j["stage"] = stage;
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static void reply(httplib::Response& res, const nlohmann::json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static nlohmann::json body_json(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    return nlohmann::json::parse(req.body);
  }

  static int int_param(const httplib::Request& req, const char* key, int fallback) {
    if (!req.has_param(key)) return fallback;
    try {
      return std::stoi(req.get_param_value(key));
    } catch (const std::exception&) {
      throw RangeError(std::string("bad integer for ") + key);
    }
  }

  void routes() {
    server_.Get("/api/state", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { reply(res, svc_.state()); });
    });

    server_.Post("/api/envmap", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_param("name")) throw ConfigError("missing name parameter");
        const std::string name = req.get_param_value("name");
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(req.body.data());
        EnvironmentMap map = decode_hdr({bytes, req.body.size()});
        const int w = map.width(), h = map.height();
        svc_.add_envmap(name, std::move(map));
        reply(res, {{"name", name}, {"width", w}, {"height", h}}, 201);
      });
    });

    server_.Post("/api/reproduce", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto j = body_json(req);
        const std::string name = j.at("envmap").get<std::string>();
        std::optional<std::pair<int, int>> resolution;
        if (j.contains("resolution")) {
          const auto r = j["resolution"].get<std::vector<int>>();
          if (r.size() != 2) throw ShapeError("resolution needs [width, height]");
          resolution = std::make_pair(r[0], r[1]);
        }
        std::optional<DilationConfig> dilation;
        if (j.contains("dilation")) dilation = dilation_from_json(j["dilation"]);
        const ReproduceReport rep = svc_.reproduce(name, resolution, dilation, j.value("drop_uncovered", false));
        nlohmann::json out = report_json(rep);
        out["envmap"] = name;
        reply(res, out);
      });
    });

    server_.Put(R"(/api/panel/(\d+)/override)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const int id = panel_id(req);
        const auto j = body_json(req);
        const std::string mode = j.value("mode", std::string("rgb"));
        const auto v = j.at("values").get<std::vector<double>>();
        const Eigen::VectorXd values = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
        OverrideMode m;
        if (mode == "rgb") {
          m = OverrideMode::Rgb;
        } else if (mode == "direct") {
          m = OverrideMode::Direct;
        } else {
          throw ConfigError("mode must be rgb or direct");
        }
        const Dmx6 dmx = svc_.set_panel_override(id, values, m);
        reply(res, {{"panel", id}, {"dmx", std::vector<int>(dmx.begin(), dmx.end())}});
      });
    });

    server_.Delete(R"(/api/panel/(\d+)/override)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const int id = panel_id(req);
        svc_.clear_override(id);
        reply(res, {{"panel", id}, {"cleared", true}});
      });
    });

    server_.Post("/api/transport", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto j = body_json(req);
        const auto action = transport_action_from_string(j.at("action").get<std::string>());
        reply(res, to_json(svc_.transport(action, j.value("sequence", std::string()), j.value("t", 0.0))));
      });
    });

    server_.Get(R"(/api/preview/([a-z_]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const PreviewKind kind = preview_kind_from_string(req.matches[1]);
        const std::string source = req.has_param("source") ? req.get_param_value("source") : "live";
        const auto png = svc_.preview(kind, source, int_param(req, "width", 256), int_param(req, "height", 128),
                                      int_param(req, "size", 128));
        res.set_content(std::string(png.begin(), png.end()), "image/png");
      });
    });

    server_.Post("/api/save", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        if (!project_dir_) throw ConfigError("service has no project directory");
        svc_.save(*project_dir_);
        reply(res, {{"saved", project_dir_->string()}});
      });
    });

    server_.Get("/api/live", [this](const httplib::Request&, httplib::Response& res) {
      res.set_header("Cache-Control", "no-cache");
      auto seen = std::make_shared<std::uint64_t>(0);
      auto last = std::make_shared<std::chrono::steady_clock::time_point>();
      res.set_chunked_content_provider("text/event-stream", [this, seen, last](std::size_t, httplib::DataSink& sink) {
        if (stopping_) return false;
        // Pace to the frame rate; whatever arrives meanwhile collapses into
        // the latest frame.
        const auto due = *last + min_interval_;
        if (std::chrono::steady_clock::now() < due) std::this_thread::sleep_until(due);
        const auto f = svc_.live().wait_newer(*seen, std::chrono::milliseconds(500));
        if (stopping_ || svc_.live().closed()) return false;
        std::string msg;
        if (f) {
          *seen = f->version;
          *last = std::chrono::steady_clock::now();
          msg = "id: " + std::to_string(f->version) + "\nevent: frame\ndata: " + to_json(*f).dump() + "\n\n";
        } else {
          msg = ": keepalive\n\n";
        }
        return sink.write(msg.data(), msg.size());
      });
    });
  }

  static int panel_id(const httplib::Request& req) {
    try {
      return std::stoi(req.matches[1]);
    } catch (const std::exception&) {
      throw NotFoundError("no panel " + std::string(req.matches[1]));
    }
  }

  ControlService& svc_;
  std::optional<std::filesystem::path> project_dir_;
  std::chrono::nanoseconds min_interval_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
};

}  // namespace ultrastage
