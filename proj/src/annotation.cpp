#include "odseg/annotation.hpp"

#include <fcntl.h>
#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "annotation_json.hpp"
#include "odseg/image_io.hpp"

namespace odseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Rendering

bool Stroke::degenerate() const {
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].x != points[0].x || points[i].y != points[0].y) return false;
  }
  return true;
}

namespace {

double distance_to_segment(double px, double py, const StrokePoint& a, const StrokePoint& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

long clamp_index(double v, std::size_t n) {
  return std::clamp(static_cast<long>(std::floor(v)), 0L, static_cast<long>(n) - 1);
}

}  // namespace

void stamp_polyline(Tensor& canvas, const std::vector<StrokePoint>& points, double width, float value) {
  const std::size_t h = canvas.dim(0), w = canvas.dim(1);
  const double r = width / 2.0;
  for (std::size_t s = 0; s < points.size(); ++s) {
    const StrokePoint& a = points[s];
    const StrokePoint& b = points[std::min(s + 1, points.size() - 1)];
    const long x0 = clamp_index(std::min(a.x, b.x) - r, w), x1 = clamp_index(std::max(a.x, b.x) + r, w);
    const long y0 = clamp_index(std::min(a.y, b.y) - r, h), y1 = clamp_index(std::max(a.y, b.y) + r, h);
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) {
        if (distance_to_segment(x + 0.5, y + 0.5, a, b) <= r) canvas[static_cast<std::size_t>(y) * w + x] = value;
      }
    }
  }
}

void fill_polygon(Tensor& canvas, const std::vector<StrokePoint>& polygon, float value) {
  const std::size_t h = canvas.dim(0), w = canvas.dim(1);
  const std::size_t n = polygon.size();
  if (n < 3) return;
  std::vector<double> xs;
  for (std::size_t y = 0; y < h; ++y) {
    const double yc = static_cast<double>(y) + 0.5;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const StrokePoint& a = polygon[i];
      const StrokePoint& b = polygon[(i + 1) % n];
      if ((a.y <= yc) != (b.y <= yc)) xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // pixel centres x + 0.5 in [xs[k], xs[k+1])
      const double lo = std::max(0.0, std::ceil(xs[k] - 0.5));
      const double hi = std::min(static_cast<double>(w), std::ceil(xs[k + 1] - 0.5));
      for (double x = lo; x < hi; x += 1.0) canvas[y * w + static_cast<std::size_t>(x)] = value;
    }
  }
}

Tensor render_mask(const std::vector<Stroke>& strokes, std::size_t width, std::size_t height) {
  Tensor canvas({height, width, 1});
  std::vector<StrokePoint> path;
  for (const Stroke& s : strokes) {
    if (s.points.empty() || s.degenerate()) continue;
    if (s.mode == StrokeMode::kErase) {
      stamp_polyline(canvas, s.points, s.width, 0.0f);
      path.clear();
      continue;
    }
    stamp_polyline(canvas, s.points, s.width, 1.0f);
    path.insert(path.end(), s.points.begin(), s.points.end());
    const double dx = path.back().x - path.front().x, dy = path.back().y - path.front().y;
    if (path.size() >= 3 && std::sqrt(dx * dx + dy * dy) <= s.width) {
      fill_polygon(canvas, path, 1.0f);
      path.clear();
    }
  }
  return canvas;
}

// ---------------------------------------------------------------------------
// Accounts

namespace {

std::string to_hex(const unsigned char* data, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = digits[data[i] >> 4];
    out[2 * i + 1] = digits[data[i] & 15];
  }
  return out;
}

std::optional<std::vector<unsigned char>> from_hex(const std::string& s) {
  if (s.size() % 2 != 0) return std::nullopt;
  std::vector<unsigned char> out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    unsigned v = 0;
    if (std::sscanf(s.c_str() + 2 * i, "%2x", &v) != 1) return std::nullopt;
    out[i] = static_cast<unsigned char>(v);
  }
  return out;
}

std::vector<unsigned char> random_bytes(std::size_t n) {
  std::vector<unsigned char> out(n);
  if (RAND_bytes(out.data(), static_cast<int>(n)) != 1) throw Error("system random source failed");
  return out;
}

std::vector<unsigned char> pbkdf2(const std::string& password, const std::vector<unsigned char>& salt,
                                  std::uint32_t iterations) {
  std::vector<unsigned char> out(32);
  if (PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()), salt.data(),
                        static_cast<int>(salt.size()), static_cast<int>(iterations), EVP_sha256(),
                        static_cast<int>(out.size()), out.data()) != 1) {
    throw Error("PBKDF2 failed");
  }
  return out;
}

}  // namespace

std::string random_token(std::size_t bytes) {
  const auto b = random_bytes(bytes);
  return to_hex(b.data(), b.size());
}

std::string hash_password(const std::string& password, std::uint32_t iterations) {
  if (iterations == 0) throw ParameterError("iteration count must be positive");
  const auto salt = random_bytes(16);
  const auto hash = pbkdf2(password, salt, iterations);
  return "pbkdf2-sha256$" + std::to_string(iterations) + "$" + to_hex(salt.data(), salt.size()) + "$" +
         to_hex(hash.data(), hash.size());
}

bool verify_password(const std::string& password, const std::string& encoded) {
  std::vector<std::string> parts;
  std::stringstream ss(encoded);
  for (std::string part; std::getline(ss, part, '$');) parts.push_back(part);
  if (parts.size() != 4 || parts[0] != "pbkdf2-sha256") return false;
  std::uint32_t iterations = 0;
  try {
    const unsigned long v = std::stoul(parts[1]);
    if (v == 0 || v > 100'000'000) return false;
    iterations = static_cast<std::uint32_t>(v);
  } catch (const std::logic_error&) {
    return false;
  }
  const auto salt = from_hex(parts[2]);
  const auto expected = from_hex(parts[3]);
  if (!salt || !expected || expected->empty()) return false;
  std::vector<unsigned char> got(expected->size());
  if (PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()), salt->data(),
                        static_cast<int>(salt->size()), static_cast<int>(iterations), EVP_sha256(),
                        static_cast<int>(got.size()), got.data()) != 1) {
    return false;
  }
  return CRYPTO_memcmp(got.data(), expected->data(), got.size()) == 0;
}

bool safe_name(const std::string& name) {
  if (name.empty() || name.size() > 128 || name[0] == '.') return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
           c == '.';
  });
}

std::map<std::string, std::string> read_users_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open users file '" + path.string() + "'");
  std::map<std::string, std::string> users;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (colon == std::string::npos) throw FormatError(where + ": expected username:hash");
    std::string user = line.substr(0, colon);
    if (!safe_name(user)) throw FormatError(where + ": invalid username '" + user + "'");
    if (!users.emplace(user, line.substr(colon + 1)).second) {
      throw FormatError(where + ": duplicate username '" + user + "'");
    }
  }
  return users;
}

// ---------------------------------------------------------------------------
// JSON

json stroke_to_json(const Stroke& s) {
  json pts = json::array();
  for (const StrokePoint& p : s.points) pts.push_back({p.x, p.y});
  return {{"mode", s.mode == StrokeMode::kDraw ? "draw" : "erase"}, {"width", s.width}, {"points", pts},
          {"t", s.time_ms}};
}

Stroke stroke_from_json(const json& j) {
  try {
    Stroke s;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "draw") {
      s.mode = StrokeMode::kDraw;
    } else if (mode == "erase") {
      s.mode = StrokeMode::kErase;
    } else {
      throw FormatError("stroke mode must be draw or erase");
    }
    s.width = j.at("width").get<double>();
    for (const json& p : j.at("points")) {
      if (!p.is_array() || p.size() != 2) throw FormatError("stroke points must be [x, y] pairs");
      s.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    if (j.contains("t")) s.time_ms = j["t"].get<std::int64_t>();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed stroke: ") + e.what());
  }
}

std::string to_string(RecordStatus status) {
  switch (status) {
    case RecordStatus::kNew: return "new";
    case RecordStatus::kInProgress: return "in-progress";
    case RecordStatus::kSubmitted: return "submitted";
  }
  return "?";
}

json record_to_json(const TracingRecord& r) {
  json strokes = json::array();
  for (const Stroke& s : r.strokes) strokes.push_back(stroke_to_json(s));
  json out{{"image", r.image}, {"annotator", r.annotator}, {"status", to_string(r.status)}, {"strokes", strokes}};
  if (r.status == RecordStatus::kSubmitted) out["submitted"] = r.submitted_ms;
  return out;
}

// ---------------------------------------------------------------------------
// Storage

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void fsync_path(const fs::path& p, int flags) {
  const int fd = ::open(p.c_str(), flags);
  if (fd < 0) throw IoError("cannot open '" + p.string() + "' for sync");
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw IoError("fsync failed for '" + p.string() + "'");
}

// Writes `bytes` to `path` through a synced temporary and a rename.
void write_durable(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
  }
  fsync_path(tmp, O_RDONLY);
  fs::rename(tmp, path);
  fsync_path(path.parent_path(), O_RDONLY | O_DIRECTORY);
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

AnnotationStore::AnnotationStore(fs::path data_dir) : data_dir_(std::move(data_dir)) {
  if (!fs::is_directory(data_dir_ / "images")) {
    throw IoError("data directory '" + data_dir_.string() + "' has no images/ subdirectory");
  }
  fs::create_directories(data_dir_ / "tracings");
  load_assignments();
}

void AnnotationStore::load_assignments() {
  const fs::path p = data_dir_ / "assignments.txt";
  if (!fs::exists(p)) return;
  assign_all_ = false;
  std::ifstream in(p);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw FormatError(p.string() + ":" + std::to_string(lineno) + ": expected 'user: id id ...'");
    }
    std::vector<std::string>& ids = assignments_[line.substr(0, colon)];
    std::istringstream rest(line.substr(colon + 1));
    for (std::string id; rest >> id;) ids.push_back(id);
  }
}

std::vector<std::string> AnnotationStore::image_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(data_dir_ / "images")) {
    if (e.is_regular_file() && e.path().extension() == ".png" && safe_name(e.path().stem().string())) {
      ids.push_back(e.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool AnnotationStore::has_image(const std::string& id) const {
  return safe_name(id) && fs::is_regular_file(image_path(id));
}

fs::path AnnotationStore::image_path(const std::string& id) const { return data_dir_ / "images" / (id + ".png"); }

fs::path AnnotationStore::tracing_dir(const std::string& id) const { return data_dir_ / "tracings" / id; }

bool AnnotationStore::is_assigned(const std::string& user, const std::string& id) const {
  if (!has_image(id)) return false;
  if (assign_all_) return true;
  auto it = assignments_.find(user);
  if (it == assignments_.end()) return false;
  return std::any_of(it->second.begin(), it->second.end(), [&](const std::string& a) { return a == "*" || a == id; });
}

std::vector<std::string> AnnotationStore::assigned_images(const std::string& user) const {
  std::vector<std::string> out;
  for (const std::string& id : image_ids()) {
    if (is_assigned(user, id)) out.push_back(id);
  }
  return out;
}

std::pair<std::size_t, std::size_t> AnnotationStore::image_size(const std::string& id) {
  {
    std::lock_guard lock(table_mutex_);
    auto it = sizes_.find(id);
    if (it != sizes_.end()) return it->second;
  }
  const Image8 img = read_image(image_path(id));
  std::lock_guard lock(table_mutex_);
  return sizes_[id] = {img.width, img.height};
}

std::mutex& AnnotationStore::stream_mutex(const std::string& id, const std::string& user) {
  std::lock_guard lock(table_mutex_);
  auto& slot = stream_mutexes_[id + "/" + user];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

RecordStatus AnnotationStore::status(const std::string& id, const std::string& user) {
  const fs::path dir = tracing_dir(id);
  if (fs::exists(dir / (user + ".submitted"))) return RecordStatus::kSubmitted;
  if (fs::exists(dir / (user + ".jsonl")) && fs::file_size(dir / (user + ".jsonl")) > 0) {
    return RecordStatus::kInProgress;
  }
  return RecordStatus::kNew;
}

TracingRecord AnnotationStore::record(const std::string& id, const std::string& user) {
  TracingRecord r{id, user, status(id, user), {}, 0};
  const fs::path log = tracing_dir(id) / (user + ".jsonl");
  if (fs::exists(log)) {
    const std::string text = read_all(log);
    std::size_t start = 0;
    // A line without its newline is a torn write and is ignored.
    for (std::size_t nl; (nl = text.find('\n', start)) != std::string::npos; start = nl + 1) {
      if (nl == start) continue;
      r.strokes.push_back(stroke_from_json(json::parse(text.substr(start, nl - start))));
    }
  }
  if (r.status == RecordStatus::kSubmitted) {
    try {
      r.submitted_ms = std::stoll(read_all(tracing_dir(id) / (user + ".submitted")));
    } catch (const std::logic_error&) {
      r.submitted_ms = 0;
    }
  }
  return r;
}

StoreResult AnnotationStore::append(const std::string& id, const std::string& user,
                                    const std::vector<Stroke>& strokes, std::string& message) {
  if (!has_image(id)) {
    message = "unknown image";
    return StoreResult::kNotFound;
  }
  if (!is_assigned(user, id)) {
    message = "image not assigned to this annotator";
    return StoreResult::kForbidden;
  }
  const auto [w, h] = image_size(id);
  for (const Stroke& s : strokes) {
    if (!(s.width > 0.0 && s.width <= 1000.0)) {
      message = "brush width must lie in (0, 1000]";
      return StoreResult::kInvalid;
    }
    if (s.points.empty()) {
      message = "stroke without points";
      return StoreResult::kInvalid;
    }
    for (const StrokePoint& p : s.points) {
      if (!(p.x >= 0.0 && p.x <= static_cast<double>(w) && p.y >= 0.0 && p.y <= static_cast<double>(h))) {
        message = "point outside the " + std::to_string(w) + "x" + std::to_string(h) + " image";
        return StoreResult::kInvalid;
      }
    }
  }

  std::lock_guard lock(stream_mutex(id, user));
  if (status(id, user) == RecordStatus::kSubmitted) {
    message = "tracing already submitted";
    return StoreResult::kConflict;
  }
  const fs::path dir = tracing_dir(id);
  fs::create_directories(dir);
  const fs::path log = dir / (user + ".jsonl");

  std::string batch;
  const std::int64_t t = now_ms();
  for (Stroke s : strokes) {
    s.time_ms = t;
    batch += stroke_to_json(s).dump();
    batch += '\n';
  }
  const int fd = ::open(log.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd < 0) throw IoError("cannot open stroke log '" + log.string() + "'");
  // Drop a torn tail left by an interrupted write before appending.
  off_t end = ::lseek(fd, 0, SEEK_END);
  while (end > 0) {
    char c = 0;
    if (::pread(fd, &c, 1, end - 1) != 1 || c == '\n') break;
    --end;
  }
  bool ok = ::ftruncate(fd, end) == 0;
  std::size_t written = 0;
  while (ok && written < batch.size()) {
    const ssize_t n = ::pwrite(fd, batch.data() + written, batch.size() - written, end + static_cast<off_t>(written));
    ok = n > 0;
    if (ok) written += static_cast<std::size_t>(n);
  }
  ok = ok && ::fsync(fd) == 0;
  ::close(fd);
  if (!ok) throw IoError("failed to append to '" + log.string() + "'");
  return StoreResult::kOk;
}

StoreResult AnnotationStore::submit(const std::string& id, const std::string& user, std::string& message) {
  if (!has_image(id)) {
    message = "unknown image";
    return StoreResult::kNotFound;
  }
  if (!is_assigned(user, id)) {
    message = "image not assigned to this annotator";
    return StoreResult::kForbidden;
  }
  std::lock_guard lock(stream_mutex(id, user));
  TracingRecord r = record(id, user);
  if (r.status == RecordStatus::kSubmitted) {
    message = "tracing already submitted";
    return StoreResult::kConflict;
  }
  const bool any_draw = std::any_of(r.strokes.begin(), r.strokes.end(),
                                    [](const Stroke& s) { return s.mode == StrokeMode::kDraw && !s.degenerate(); });
  if (!any_draw) {
    message = "tracing has no draw strokes";
    return StoreResult::kInvalid;
  }
  const auto [w, h] = image_size(id);
  const Tensor mask = render_mask(r.strokes, w, h);
  if (sum(mask) == 0.0) {
    message = "rendered mask is empty";
    return StoreResult::kInvalid;
  }
  const std::vector<std::uint8_t> png = encode_png(mask_to_image(mask));
  const fs::path dir = tracing_dir(id);
  write_durable(dir / (user + ".mask.png"), std::string(png.begin(), png.end()));
  write_durable(dir / (user + ".submitted"), std::to_string(now_ms()) + "\n");
  return StoreResult::kOk;
}

std::optional<Tensor> AnnotationStore::submitted_mask(const std::string& id, const std::string& user) {
  if (!safe_name(id) || !safe_name(user) || status(id, user) != RecordStatus::kSubmitted) return std::nullopt;
  // Re-rendered from the log so the export is always a function of it.
  const TracingRecord r = record(id, user);
  const auto [w, h] = image_size(id);
  return render_mask(r.strokes, w, h);
}

std::vector<std::string> AnnotationStore::submitted_annotators(const std::string& id) {
  std::vector<std::string> out;
  const fs::path dir = tracing_dir(id);
  if (!safe_name(id) || !fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".submitted") out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace odseg
