#include <algorithm>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "odseg/annotation.hpp"
#include "odseg/image_io.hpp"
#include "test_util.hpp"

using namespace odseg;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<StrokePoint> circle(double cx, double cy, double r, int n, int from, int to) {
  std::vector<StrokePoint> pts;
  for (int i = from; i <= to; ++i) {
    const double a = 2.0 * kPi * i / n;
    pts.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return pts;
}

bool inside(const std::vector<StrokePoint>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

double segment_distance(StrokePoint p, StrokePoint a, StrokePoint b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - a.x - t * dx, p.y - a.y - t * dy);
}

/// Pixel centres inside the polygon or within half a brush of its outline.
double oracle_area(const std::vector<StrokePoint>& path, double width, std::size_t w, std::size_t h) {
  double area = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const StrokePoint c{x + 0.5, y + 0.5};
      bool on = inside(path, c.x, c.y);
      for (std::size_t i = 0; !on && i + 1 < path.size(); ++i) on = segment_distance(c, path[i], path[i + 1]) <= width / 2;
      area += on;
    }
  }
  return area;
}

Stroke draw(std::vector<StrokePoint> pts, double width = 3.0) { return {StrokeMode::kDraw, width, std::move(pts), 0}; }

void write_gray_png(const std::filesystem::path& p, std::size_t w, std::size_t h) {
  write_png(p, Image8{w, h, 1, std::vector<std::uint8_t>(w * h, 128)});
}

}  // namespace

TEST_CASE("polygon fill matches point-in-polygon") {
  const auto poly = circle(40, 40, 25, 90, 0, 89);
  Tensor canvas({80, 80, 1});
  fill_polygon(canvas, poly, 1.0f);
  double oracle = 0;
  for (std::size_t y = 0; y < 80; ++y)
    for (std::size_t x = 0; x < 80; ++x) oracle += inside(poly, x + 0.5, y + 0.5);
  CHECK(std::abs(sum(canvas) - oracle) <= 0.02 * oracle);
  CHECK(std::abs(oracle - kPi * 25 * 25) <= 0.02 * kPi * 25 * 25);
}

TEST_CASE("a closed circle in two strokes renders a filled disk") {
  const auto first = circle(50, 50, 30, 120, 0, 60);
  const auto second = circle(50, 50, 30, 120, 60, 120);
  const Tensor mask = render_mask({draw(first), draw(second)}, 100, 100);
  const auto whole = circle(50, 50, 30, 120, 0, 120);
  const double oracle = oracle_area(whole, 3.0, 100, 100);
  CHECK(std::abs(sum(mask) - oracle) <= 0.02 * oracle);
  CHECK(mask[50 * 100 + 50] == 1.0f);
  CHECK(mask[0] == 0.0f);
}

TEST_CASE("an open curve stays an outline") {
  const auto arc = circle(50, 50, 30, 120, 0, 60);
  const Tensor mask = render_mask({draw(arc)}, 100, 100);
  CHECK(mask[50 * 100 + 50] == 0.0f);
  CHECK(sum(mask) > 0.0);
}

TEST_CASE("erase clears and rendering is deterministic") {
  const auto ring = circle(20, 20, 10, 60, 0, 60);
  Stroke rub{StrokeMode::kErase, 80.0, {{0, 0}, {40, 40}, {0, 40}, {40, 0}}, 0};
  CHECK(sum(render_mask({draw(ring), rub}, 40, 40)) == 0.0);
  const Tensor a = render_mask({draw(ring)}, 40, 40);
  CHECK(a == render_mask({draw(ring)}, 40, 40));
  const Stroke dot = draw({{5, 5}, {5, 5}});
  CHECK(dot.degenerate());
  CHECK(sum(render_mask({dot}, 40, 40)) == 0.0);
}

TEST_CASE("passwords") {
  const std::string h = hash_password("hunter2", 1000);
  CHECK(h.rfind("pbkdf2-sha256$1000$", 0) == 0);
  CHECK(verify_password("hunter2", h));
  CHECK_FALSE(verify_password("hunter3", h));
  CHECK_FALSE(verify_password("hunter2", "garbage"));
  CHECK(hash_password("hunter2", 1000) != h);
  CHECK(random_token().size() == 64);
}

TEST_CASE("store lifecycle") {
  const test::TempDir dir;
  std::filesystem::create_directories(dir.path / "images");
  write_gray_png(dir.path / "images" / "a.png", 40, 40);
  write_gray_png(dir.path / "images" / "b.png", 40, 40);
  std::ofstream(dir.path / "assignments.txt") << "ann: a\nboss: *\n";
  AnnotationStore store(dir.path);
  CHECK(store.image_ids() == std::vector<std::string>{"a", "b"});
  CHECK(store.assigned_images("ann") == std::vector<std::string>{"a"});
  CHECK(store.assigned_images("boss").size() == 2);
  CHECK(store.assigned_images("nobody").empty());

  std::string msg;
  const auto ring = circle(20, 20, 10, 60, 0, 60);
  CHECK(store.append("b", "ann", {draw(ring)}, msg) == StoreResult::kForbidden);
  CHECK(store.append("zzz", "ann", {draw(ring)}, msg) == StoreResult::kNotFound);
  CHECK(store.append("a", "ann", {draw({{-5, 0}, {3, 3}})}, msg) == StoreResult::kInvalid);
  CHECK(store.status("a", "ann") == RecordStatus::kNew);
  CHECK(store.submit("a", "ann", msg) == StoreResult::kInvalid);
  CHECK(store.append("a", "ann", {draw(ring)}, msg) == StoreResult::kOk);
  CHECK(store.status("a", "ann") == RecordStatus::kInProgress);
  CHECK(store.record("a", "ann").strokes.size() == 1);
  CHECK_FALSE(store.submitted_mask("a", "ann"));
  CHECK(store.submit("a", "ann", msg) == StoreResult::kOk);
  CHECK(store.submit("a", "ann", msg) == StoreResult::kConflict);
  CHECK(store.append("a", "ann", {draw(ring)}, msg) == StoreResult::kConflict);
  CHECK(std::filesystem::exists(dir.path / "tracings" / "a" / "ann.mask.png"));
  const auto mask = store.submitted_mask("a", "ann");
  REQUIRE(mask);
  CHECK(*mask == render_mask({draw(ring)}, 40, 40));
  CHECK(store.submitted_annotators("a") == std::vector<std::string>{"ann"});

  // A fresh store sees the same state, and a torn final line is ignored.
  std::ofstream(dir.path / "tracings" / "a" / "boss.jsonl") << "{\"mode\":\"draw\",\"wid";
  AnnotationStore reopened(dir.path);
  CHECK(reopened.status("a", "ann") == RecordStatus::kSubmitted);
  CHECK(reopened.record("a", "boss").strokes.empty());
  CHECK(reopened.append("a", "boss", {draw(ring)}, msg) == StoreResult::kOk);
  CHECK(reopened.record("a", "boss").strokes.size() == 1);
}

TEST_CASE("draw then erase everything cannot be submitted") {
  const test::TempDir dir;
  std::filesystem::create_directories(dir.path / "images");
  write_gray_png(dir.path / "images" / "a.png", 40, 40);
  AnnotationStore store(dir.path);
  std::string msg;
  Stroke rub{StrokeMode::kErase, 80.0, {{0, 0}, {40, 40}, {0, 40}, {40, 0}}, 0};
  CHECK(store.append("a", "u", {draw(circle(20, 20, 10, 60, 0, 60)), rub}, msg) == StoreResult::kOk);
  CHECK(store.submit("a", "u", msg) == StoreResult::kInvalid);
  CHECK(store.status("a", "u") == RecordStatus::kInProgress);
}
