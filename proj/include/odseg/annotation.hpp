#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "odseg/errors.hpp"
#include "odseg/tensor.hpp"

namespace odseg {

// ---------------------------------------------------------------------------
// Strokes and mask rendering

enum class StrokeMode { kDraw, kErase };

struct StrokePoint {
  double x = 0.0;
  double y = 0.0;
};

/// Polyline in image pixel coordinates; pixel (i, j) covers [i, i+1) x [j, j+1).
struct Stroke {
  StrokeMode mode = StrokeMode::kDraw;
  double width = 3.0;
  std::vector<StrokePoint> points;
  std::int64_t time_ms = 0;  // server receive time, not used for rendering

  bool degenerate() const;
};

/// Replays `strokes` onto a blank [H,W,1] canvas. Draw strokes stamp a
/// brush along the polyline; consecutive draw strokes form one path, and
/// once that path ends within a brush width of where it started its
/// interior is filled with the even-odd rule and a new path begins. Erase
/// strokes clear a brush along their polyline and break the path.
/// Degenerate strokes (fewer than two distinct points) are skipped.
Tensor render_mask(const std::vector<Stroke>& strokes, std::size_t width, std::size_t height);

/// Even-odd fill of a closed polygon sampled at pixel centres; the scan
/// used by render_mask, exposed for tests.
void fill_polygon(Tensor& canvas, const std::vector<StrokePoint>& polygon, float value);

/// Sets every pixel whose centre lies within width/2 of the polyline.
void stamp_polyline(Tensor& canvas, const std::vector<StrokePoint>& points, double width, float value);

// ---------------------------------------------------------------------------
// Accounts

/// "pbkdf2-sha256$<iterations>$<salt hex>$<hash hex>".
std::string hash_password(const std::string& password, std::uint32_t iterations = 200000);
bool verify_password(const std::string& password, const std::string& encoded);

/// Lines "username:<encoded hash>"; '#' starts a comment.
std::map<std::string, std::string> read_users_file(const std::filesystem::path& path);

std::string random_token(std::size_t bytes = 32);

// ---------------------------------------------------------------------------
// Storage

enum class RecordStatus { kNew, kInProgress, kSubmitted };
std::string to_string(RecordStatus status);

struct TracingRecord {
  std::string image;
  std::string annotator;
  RecordStatus status = RecordStatus::kNew;
  std::vector<Stroke> strokes;
  std::int64_t submitted_ms = 0;
};

/// Outcome codes the HTTP layer maps onto status codes.
enum class StoreResult { kOk, kNotFound, kForbidden, kConflict, kInvalid };

/// Layout under the data directory:
///   images/<id>.png                      source images
///   assignments.txt                      "user: id id ..." ("*" = all);
///                                        absent file assigns everything
///   tracings/<id>/<user>.jsonl           append-only stroke log
///   tracings/<id>/<user>.submitted       submission marker
///   tracings/<id>/<user>.mask.png        mask rendered on submit
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path data_dir);

  const std::filesystem::path& data_dir() const noexcept { return data_dir_; }

  std::vector<std::string> image_ids() const;
  bool has_image(const std::string& id) const;
  bool is_assigned(const std::string& user, const std::string& id) const;
  std::vector<std::string> assigned_images(const std::string& user) const;
  std::filesystem::path image_path(const std::string& id) const;
  /// (width, height) of the source image; cached after the first read.
  std::pair<std::size_t, std::size_t> image_size(const std::string& id);

  TracingRecord record(const std::string& id, const std::string& user);
  RecordStatus status(const std::string& id, const std::string& user);

  /// Appends `strokes` as one write; `message` receives the reason on failure.
  StoreResult append(const std::string& id, const std::string& user, const std::vector<Stroke>& strokes,
                     std::string& message);
  StoreResult submit(const std::string& id, const std::string& user, std::string& message);

  /// Rendered mask of a submitted record; nullopt when not submitted.
  std::optional<Tensor> submitted_mask(const std::string& id, const std::string& user);
  std::vector<std::string> submitted_annotators(const std::string& id);

 private:
  std::mutex& stream_mutex(const std::string& id, const std::string& user);
  std::filesystem::path tracing_dir(const std::string& id) const;
  void load_assignments();

  std::filesystem::path data_dir_;
  bool assign_all_ = true;
  std::map<std::string, std::vector<std::string>> assignments_;
  std::mutex table_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> stream_mutexes_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> sizes_;
};

// ---------------------------------------------------------------------------
// HTTP service

struct ServiceConfig {
  std::filesystem::path data_dir;
  std::filesystem::path users_file;
  /// Static UI bundle mounted at "/"; skipped when empty or missing.
  std::filesystem::path static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::chrono::seconds session_ttl{8 * 3600};
  std::size_t max_failed_logins = 5;
  std::chrono::seconds lockout{300};
  /// Injectable clock for expiry tests.
  std::function<std::chrono::steady_clock::time_point()> clock;
};

class AnnotationServer {
 public:
  explicit AnnotationServer(ServiceConfig config);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds and serves on a background thread. IoError if the port is taken.
  void start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();
  int port() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace odseg
