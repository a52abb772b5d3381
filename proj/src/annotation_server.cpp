#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "annotation_json.hpp"
#include "httplib.h"
#include "odseg/annotation.hpp"
#include "odseg/data.hpp"
#include "odseg/image_io.hpp"
#include "odseg/log.hpp"

namespace odseg {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

void send_png(httplib::Response& res, const Tensor& mask) {
  const std::vector<std::uint8_t> png = encode_png(mask_to_image(mask));
  res.set_content(std::string(png.begin(), png.end()), "image/png");
}

int http_status(StoreResult r) {
  switch (r) {
    case StoreResult::kOk: return 204;
    case StoreResult::kNotFound: return 404;
    case StoreResult::kForbidden: return 403;
    case StoreResult::kConflict: return 409;
    case StoreResult::kInvalid: return 400;
  }
  return 500;
}

}  // namespace

struct AnnotationServer::Impl {
  struct Session {
    std::string user;
    Clock::time_point expires;
  };
  struct Failures {
    std::size_t count = 0;
    Clock::time_point locked_until{};
  };

  ServiceConfig config;
  AnnotationStore store;
  std::map<std::string, std::string> users;
  httplib::Server server;
  std::thread thread;
  std::atomic<int> port{0};
  std::mutex mutex;  // sessions and failures
  std::map<std::string, Session> sessions;
  std::map<std::string, Failures> failures;

  explicit Impl(ServiceConfig c)
      : config(std::move(c)), store(config.data_dir), users(read_users_file(config.users_file)) {
    if (!config.clock) config.clock = [] { return Clock::now(); };
    routes();
  }

  // Returns the authenticated user or sends 401 and returns nullopt.
  std::optional<std::string> authenticate(const httplib::Request& req, httplib::Response& res) {
    std::string token;
    const std::string header = req.get_header_value("Authorization");
    if (header.rfind("Bearer ", 0) == 0) {
      token = header.substr(7);
    } else if (req.has_param("access_token")) {
      token = req.get_param_value("access_token");
    }
    std::lock_guard lock(mutex);
    auto it = sessions.find(token);
    if (token.empty() || it == sessions.end()) {
      send_error(res, 401, "missing or unknown session token");
      return std::nullopt;
    }
    if (config.clock() >= it->second.expires) {
      sessions.erase(it);
      send_error(res, 401, "session expired");
      return std::nullopt;
    }
    return it->second.user;
  }

  void login(const httplib::Request& req, httplib::Response& res) {
    std::string user, password;
    try {
      const json body = json::parse(req.body);
      user = body.at("username").get<std::string>();
      password = body.at("password").get<std::string>();
    } catch (const json::exception&) {
      send_error(res, 400, "expected {\"username\": ..., \"password\": ...}");
      return;
    }
    {
      std::lock_guard lock(mutex);
      Failures& f = failures[user];
      if (config.clock() < f.locked_until) {
        send_error(res, 429, "too many failed attempts; try again later");
        return;
      }
    }
    auto it = users.find(user);
    const bool ok = it != users.end() && verify_password(password, it->second);
    std::lock_guard lock(mutex);
    Failures& f = failures[user];
    if (!ok) {
      if (++f.count >= config.max_failed_logins) {
        f.count = 0;
        f.locked_until = config.clock() + config.lockout;
        log_warn("login for '" + user + "' locked after repeated failures");
      }
      send_error(res, 401, "invalid credentials");
      return;
    }
    f = {};
    const std::string token = random_token();
    sessions[token] = {user, config.clock() + config.session_ttl};
    const auto ttl = std::chrono::duration_cast<std::chrono::seconds>(config.session_ttl).count();
    res.set_content(json{{"token", token}, {"expires_in", ttl}}.dump(), "application/json");
  }

  void list_images(const httplib::Request& req, httplib::Response& res) {
    const auto user = authenticate(req, res);
    if (!user) return;
    json out = json::array();
    for (const std::string& id : store.assigned_images(*user)) {
      const RecordStatus s = store.status(id, *user);
      if (s == RecordStatus::kSubmitted) continue;
      out.push_back({{"id", id}, {"thumbnail_url", "/api/images/" + id + "/image"}, {"status", to_string(s)}});
    }
    res.set_content(out.dump(), "application/json");
  }

  // Shared 404/403 guard for per-image endpoints.
  bool check_image(const std::string& user, const std::string& id, httplib::Response& res) {
    if (!store.has_image(id)) {
      send_error(res, 404, "unknown image '" + id + "'");
      return false;
    }
    if (!store.is_assigned(user, id)) {
      send_error(res, 403, "image not assigned to this annotator");
      return false;
    }
    return true;
  }

  void image(const httplib::Request& req, httplib::Response& res) {
    const auto user = authenticate(req, res);
    if (!user) return;
    const std::string id = req.matches[1];
    if (!check_image(*user, id, res)) return;
    std::ifstream in(store.image_path(id), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    res.set_content(ss.str(), "image/png");
  }

  void get_strokes(const httplib::Request& req, httplib::Response& res) {
    const auto user = authenticate(req, res);
    if (!user) return;
    const std::string id = req.matches[1];
    if (!check_image(*user, id, res)) return;
    res.set_content(record_to_json(store.record(id, *user)).dump(), "application/json");
  }

  void post_strokes(const httplib::Request& req, httplib::Response& res) {
    const auto user = authenticate(req, res);
    if (!user) return;
    const std::string id = req.matches[1];
    std::vector<Stroke> strokes;
    try {
      const json body = json::parse(req.body);
      for (const json& s : body.at("strokes")) strokes.push_back(stroke_from_json(s));
    } catch (const json::exception& e) {
      send_error(res, 400, std::string("malformed body: ") + e.what());
      return;
    } catch (const FormatError& e) {
      send_error(res, 400, e.what());
      return;
    }
    std::string message;
    const StoreResult r = store.append(id, *user, strokes, message);
    if (r == StoreResult::kOk) {
      res.status = 204;
    } else {
      send_error(res, http_status(r), message);
    }
  }

  void submit(const httplib::Request& req, httplib::Response& res) {
    const auto user = authenticate(req, res);
    if (!user) return;
    const std::string id = req.matches[1];
    std::string message;
    const StoreResult r = store.submit(id, *user, message);
    if (r == StoreResult::kOk) {
      res.status = 204;
      log_info("'" + *user + "' submitted " + id);
    } else {
      send_error(res, http_status(r), message);
    }
  }

  void export_one(const httplib::Request& req, httplib::Response& res) {
    if (!authenticate(req, res)) return;
    const std::string id = req.matches[1];
    const std::string annotator = req.get_param_value("annotator");
    const std::optional<Tensor> mask = store.submitted_mask(id, annotator);
    if (!mask) {
      send_error(res, 404, "no submitted tracing of '" + id + "' by '" + annotator + "'");
      return;
    }
    send_png(res, *mask);
  }

  void export_merged(const httplib::Request& req, httplib::Response& res) {
    if (!authenticate(req, res)) return;
    const std::string id = req.matches[1];
    std::vector<Tensor> masks;
    for (const std::string& a : store.submitted_annotators(id)) {
      if (auto m = store.submitted_mask(id, a)) masks.push_back(std::move(*m));
    }
    if (masks.empty()) {
      send_error(res, 404, "no submitted tracings of '" + id + "'");
      return;
    }
    send_png(res, merge_annotations(masks));
  }

  void routes() {
    using Handler = void (Impl::*)(const httplib::Request&, httplib::Response&);
    auto bind = [this](Handler h) {
      return [this, h](const httplib::Request& req, httplib::Response& res) { (this->*h)(req, res); };
    };
    server.Post("/api/login", bind(&Impl::login));
    server.Get("/api/images", bind(&Impl::list_images));
    server.Get(R"(/api/images/([^/]+)/image)", bind(&Impl::image));
    server.Get(R"(/api/images/([^/]+)/strokes)", bind(&Impl::get_strokes));
    server.Post(R"(/api/images/([^/]+)/strokes)", bind(&Impl::post_strokes));
    server.Post(R"(/api/images/([^/]+)/submit)", bind(&Impl::submit));
    server.Get(R"(/api/export/([^/]+)/merged)", bind(&Impl::export_merged));
    server.Get(R"(/api/export/([^/]+))", bind(&Impl::export_one));
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        log(LogLevel::kError, std::string("request failed: ") + e.what());
        send_error(res, 500, e.what());
      }
    });
    // SO_REUSEADDR only: the library default also sets SO_REUSEPORT, which
    // would let a second server silently share an occupied port.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    if (!config.static_dir.empty() && fs::is_directory(config.static_dir)) {
      server.set_mount_point("/", config.static_dir.string());
    }
  }

  void bind() {
    if (config.port == 0) {
      const int p = server.bind_to_any_port(config.host);
      if (p < 0) throw IoError("cannot bind to " + config.host);
      port = p;
    } else {
      if (!server.bind_to_port(config.host, config.port)) {
        throw IoError("cannot bind to " + config.host + ":" + std::to_string(config.port) +
                      " (port in use or not permitted)");
      }
      port = config.port;
    }
    log_info("annotation service listening on http://" + config.host + ":" + std::to_string(port.load()));
  }
};

AnnotationServer::AnnotationServer(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

AnnotationServer::~AnnotationServer() { stop(); }

void AnnotationServer::start() {
  impl_->bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void AnnotationServer::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
}

void AnnotationServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int AnnotationServer::port() const noexcept { return impl_->port; }

}  // namespace odseg
