// Acceptance run: one PASS/FAIL line per criterion, exit 0 iff all pass.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "odseg/annotation.hpp"
#include "odseg/gradcheck.hpp"
#include "odseg/image_io.hpp"
#include "odseg/log.hpp"
#include "odseg/loss.hpp"
#include "odseg/metrics.hpp"
#include "odseg/model.hpp"
#include "odseg/training.hpp"
#include "test_util.hpp"

using namespace odseg;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport r = run_gradcheck(GradcheckOptions{});
  const double secs = seconds_since(t0);
  bool ok = r.all_passed() && secs < 120.0;
  double worst_layer = 0.0;
  for (const GradcheckRow& row : r.rows) {
    std::printf("    %s", GradcheckReport{{row}}.to_text().c_str());
    if (row.component == "model") continue;
    ok = ok && row.instances >= 100 && row.tolerance <= 1e-3 && row.worst_relative_error <= 1e-3;
    worst_layer = std::max(worst_layer, row.worst_relative_error);
  }
  return {ok, fmt("%zu components, worst layer/loss rel err %.2e, %.1f s", r.rows.size(), worst_layer, secs)};
}

// Binary predictions against the set distance 1 - |A and B| / |A or B|.
// Pairs whose truth is empty are excluded: the soft loss rejects them.
bool jaccard_matches(const Tensor& y, const Tensor& p, double& worst) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    inter += y[i] > 0.5f && p[i] > 0.5f;
    uni += y[i] > 0.5f || p[i] > 0.5f;
  }
  const double expected = 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
  const double err = std::abs(jaccard_loss(PixelPartition(y, p)) - expected);
  worst = std::max(worst, err);
  return err <= 1e-6;
}

Outcome jaccard_oracle() {
  std::size_t pairs = 0, bad = 0;
  double worst = 0.0;
  for (std::size_t h = 1; h <= 3; ++h) {
    for (std::size_t w = 1; w <= 3; ++w) {
      const std::size_t n = h * w, combos = std::size_t{1} << n;
      Tensor y({h, w}), p({h, w});
      for (std::size_t ym = 1; ym < combos; ++ym) {
        for (std::size_t pm = 0; pm < combos; ++pm) {
          for (std::size_t i = 0; i < n; ++i) {
            y[i] = static_cast<float>((ym >> i) & 1);
            p[i] = static_cast<float>((pm >> i) & 1);
          }
          ++pairs;
          bad += !jaccard_matches(y, p, worst);
        }
      }
    }
  }
  CounterRng rng(2024);
  for (int k = 0; k < 10000; ++k) {
    Tensor y({8, 8}), p({8, 8});
    const double dy = rng.uniform(), dp = rng.uniform();
    for (std::size_t i = 0; i < 64; ++i) {
      y[i] = rng.bernoulli(dy) ? 1.0f : 0.0f;
      p[i] = rng.bernoulli(dp) ? 1.0f : 0.0f;
    }
    if (sum(y) == 0.0) y[rng.below(64)] = 1.0f;
    ++pairs;
    bad += !jaccard_matches(y, p, worst);
  }
  return {bad == 0, fmt("%zu pairs (all <=3x3 shapes + 10^4 random 8x8), %zu mismatches, worst |diff| %.1e", pairs,
                        bad, worst)};
}

Outcome metric_identities() {
  CounterRng rng(99);
  ConfusionCounts pooled;
  std::size_t bad_counts = 0;
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const std::size_t n = 1 + rng.below(100);
    Tensor a({n}), b({n});
    const double pa = rng.uniform(), pb = rng.uniform();
    ConfusionCounts ref;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.bernoulli(pa) ? 1.0f : 0.0f;
      b[i] = rng.bernoulli(pb) ? 1.0f : 0.0f;
      ref.tp += a[i] == 1.0f && b[i] == 1.0f;
      ref.fp += a[i] == 1.0f && b[i] == 0.0f;
      ref.fn += a[i] == 0.0f && b[i] == 1.0f;
      ref.tn += a[i] == 0.0f && b[i] == 0.0f;
    }
    const ConfusionCounts c = confusion(a, b);
    bad_counts += !(c == ref);
    pooled += c;
    const Metrics m = compute_metrics(c);
    worst = std::max(worst, std::abs(m.dice - 2 * m.iou / (1 + m.iou)));
  }
  const Metrics m = compute_metrics(pooled);
  const double pooled_err = std::abs(m.dice - 2 * m.iou / (1 + m.iou));
  const Tensor a({10}, {1, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  const Tensor b({10}, {1, 1, 1, 0, 1, 1, 1, 0, 0, 0});
  const Metrics ex = compute_metrics(confusion(a, b));
  const bool worked = std::abs(ex.dice - 0.6) < 1e-12 && std::abs(ex.iou - 3.0 / 7.0) < 1e-12;
  return {bad_counts == 0 && pooled_err <= 1e-9 && worst <= 1e-9 && worked,
          fmt("10^4 pairs, %zu count mismatches, |DC-2IoU/(1+IoU)| pooled %.1e per-pair max %.1e, example DC %.4f "
              "IoU %.4f",
              bad_counts, pooled_err, worst, ex.dice, ex.iou)};
}

Outcome architecture() {
  bool ok = true;
  std::string detail;
  for (std::size_t s : {32, 64, 96, 224}) {
    const Model m = build_model(s, s, 1.0, 1);
    const Tensor out = m.predict(gaussian_init({1, s, s, 3}, 0.5f, 0.25f, s));
    std::size_t pools = 0, ups = 0;
    for (const LayerDescriptor& d : m.topology()) {
      pools += d.kind == LayerKind::kMaxPool;
      ups += d.kind == LayerKind::kUpsample;
    }
    const bool good = out.shape() == Shape{1, s, s, 1} && min_value(out) > 0.0f && max_value(out) < 1.0f &&
                      pools == 5 && ups == 5;
    ok = ok && good;
    detail += fmt("%zu:%s ", s, good ? "ok" : "bad");
  }
  const Model ref = build_model(224, 224, 1.0);
  std::size_t encoder = 0, in = 3;
  for (std::size_t b = 0; b < Model::kStages; ++b) {
    for (std::size_t i = 0; i < Model::kEncoderDepth[b]; ++i) {
      encoder += (9 * in + 1) * Model::kEncoderChannels[b];
      in = Model::kEncoderChannels[b];
    }
  }
  ok = ok && encoder == ref.encoder_parameter_count() && ref.parameter_count() == count_parameters(ref);
  detail += fmt("| params total %zu (published figure %zu), encoder %zu == formula %zu", ref.parameter_count(),
                kReportedCustomParameters, ref.encoder_parameter_count(), encoder);
  return {ok, detail};
}

struct RunDc {
  double train = 0.0;
  double test = 0.0;
  std::size_t epochs = 0;
  double seconds = 0.0;
};

RunDc synthetic_run(LossKind loss) {
  const Dataset all = generate_synthetic({88, 64, 7});
  const Dataset tr(all.begin(), all.begin() + 64), va(all.begin() + 64, all.begin() + 72),
      te(all.begin() + 72, all.end());
  TrainingConfig c;
  c.max_epochs = 200;
  c.seed = 1;
  c.loss = loss;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(build_model(64, 64, 0.25, 1), tr, va, c);
  return {timed_evaluate(r.best_model, tr).pooled.dice / 100.0, timed_evaluate(r.best_model, te).pooled.dice / 100.0,
          r.history.rows.size(), seconds_since(t0)};
}

RunDc combined_run;

Outcome end_to_end() {
  combined_run = synthetic_run(LossKind::kCombined);
  const RunDc& r = combined_run;
  return {r.train >= 0.95 && r.test >= 0.85 && r.epochs <= 200 && r.seconds < 1800,
          fmt("combined loss: train DC %.4f, test DC %.4f, %zu epochs, %.0f s", r.train, r.test, r.epochs, r.seconds)};
}

Outcome loss_ablation() {
  const RunDc bce = synthetic_run(LossKind::kBce);
  return {combined_run.test >= bce.test - 0.02,
          fmt("test DC combined %.4f vs bce %.4f (train %.4f, %zu epochs)", combined_run.test, bce.test, bce.train,
              bce.epochs)};
}

Outcome callbacks() {
  const Dataset d = generate_synthetic({3, 32, 1});
  const Dataset tr(d.begin(), d.begin() + 2), va(d.begin() + 2, d.end());
  constexpr std::size_t improving = 12;
  TrainingConfig c;
  c.batch_size = 2;
  c.max_epochs = 1000;
  Model snapshot = build_model(32, 32, 0.125, 2);
  TrainingHooks hooks;
  hooks.val_loss_override = [](std::size_t e, double) { return e <= improving ? 1.0 / static_cast<double>(e) : 5.0; };
  hooks.on_epoch_end = [&](std::size_t e, const Model& m, const HistoryRow&) {
    if (e == improving) snapshot = m;
  };
  const TrainResult r = train(build_model(32, 32, 0.125, 2), tr, va, c, hooks);
  std::size_t first_cut = 0;
  for (const HistoryRow& row : r.history.rows) {
    if (row.lr < c.learning_rate && first_cut == 0) first_cut = row.epoch - 1;  // reduced after this epoch
  }
  bool same = true;
  const auto a = r.best_model.named_parameters(), b = snapshot.named_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) same = same && a[i].tensor == b[i].tensor;
  const std::size_t stop_after = r.history.rows.size() - improving;
  return {first_cut - improving == 25 && stop_after == 100 && r.status == TrainStatus::kEarlyStopped &&
              r.history.best_epoch == improving && same,
          fmt("lr halved after %zu stagnant epochs, stopped after %zu, best epoch %zu, returned model %s",
              first_cut - improving, stop_after, r.history.best_epoch, same ? "is the val-best" : "differs")};
}

std::string strip_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::string text_of(const std::filesystem::path& p) {
  const auto b = read_file_bytes(p);
  return {b.begin(), b.end()};
}

Outcome determinism() {
  const test::TempDir a, b;
  const Dataset all = generate_synthetic({12, 64, 3});
  const Dataset tr(all.begin(), all.begin() + 10), va(all.begin() + 10, all.end());
  TrainingConfig c;
  c.max_epochs = 4;
  c.seed = 11;
  c.use_augmentation = true;
  c.checkpoint_dir = a.path;
  train(build_model(64, 64, 0.25, 11), tr, va, c);
  c.checkpoint_dir = b.path;
  train(build_model(64, 64, 0.25, 11), tr, va, c);
  const bool weights = read_file_bytes(a.path / "best.odsw") == read_file_bytes(b.path / "best.odsw");
  const bool meta = text_of(a.path / "best.odsw.meta") == text_of(b.path / "best.odsw.meta");
  const bool history =
      strip_seconds(text_of(a.path / "history.csv")) == strip_seconds(text_of(b.path / "history.csv"));
  return {weights && meta && history,
          fmt("checkpoint bytes %s, sidecar %s, history (wall-clock column excluded) %s", weights ? "equal" : "DIFFER",
              meta ? "equal" : "DIFFER", history ? "equal" : "DIFFER")};
}

Outcome weight_file() {
  const test::TempDir dir;
  const Model m = build_model(64, 64, 0.25, 5);
  save_weights(m, dir.path / "a.odsw");
  const auto bytes = read_file_bytes(dir.path / "a.odsw");
  const bool codec = encode_weights(decode_weights(bytes)) == bytes;
  Model other = build_model(64, 64, 0.25, 6);
  load_weights(other, dir.path / "a.odsw");
  save_weights(other, dir.path / "b.odsw");
  const bool round = read_file_bytes(dir.path / "b.odsw") == bytes;

  const Model donor = build_model(64, 64, 0.25, 7);
  write_weight_file(dir.path / "enc.odsw", encoder_parameters(donor));
  Model target = build_model(64, 64, 0.25, 8);
  const Model before = target;
  const LoadReport r = load_weights(target, dir.path / "enc.odsw");
  bool untouched = true, copied = true;
  for (std::size_t i = 0; i < target.layers().size(); ++i) {
    const ConvLayer& l = target.layers()[i];
    if (l.role == ConvRole::kEncoder) {
      copied = copied && l.params.kernels == donor.layers()[i].params.kernels &&
               l.params.biases == donor.layers()[i].params.biases;
    } else {
      untouched = untouched && l.params.kernels == before.layers()[i].params.kernels &&
                  l.params.biases == before.layers()[i].params.biases;
    }
  }
  return {codec && round && untouched && copied,
          fmt("codec %s, save-load-save %s, encoder-only load: %zu tensors copied %s, decoder %s",
              codec ? "bitwise" : "DIFFERS", round ? "bitwise" : "DIFFERS", r.loaded.size(), copied ? "ok" : "BAD",
              untouched ? "untouched" : "MODIFIED")};
}

Outcome portal() {
  const test::TempDir dir;
  std::filesystem::create_directories(dir.path / "data" / "images");
  for (const char* id : {"a", "b"}) {
    write_png(dir.path / "data" / "images" / (std::string(id) + ".png"),
              Image8{120, 120, 3, std::vector<std::uint8_t>(120 * 120 * 3, 70)});
  }
  std::ofstream(dir.path / "users.txt") << "ann:" << hash_password("pw1", 1000) << "\nben:"
                                        << hash_password("pw2", 1000) << "\n";
  ServiceConfig c;
  c.data_dir = dir.path / "data";
  c.users_file = dir.path / "users.txt";
  c.port = 0;
  AnnotationServer server(c);
  server.start();
  httplib::Client cli("127.0.0.1", server.port());
  auto login = [&](const char* u, const char* p) {
    auto r = cli.Post("/api/login", json{{"username", u}, {"password", p}}.dump(), "application/json");
    return r && r->status == 200 ? json::parse(r->body).at("token").get<std::string>() : std::string();
  };
  auto arc = [](double cx, double r, int from, int to) {
    json pts = json::array();
    for (int i = from; i <= to; ++i) {
      const double t = 2 * 3.14159265358979323846 * i / 180.0;
      pts.push_back({cx + r * std::cos(t), 60 + r * std::sin(t)});
    }
    return json{{"mode", "draw"}, {"width", 3.0}, {"points", pts}};
  };
  auto polygon_area = [](double cx, double r) {
    // Pixel centres within the traced circle or half a brush outside it.
    double n = 0;
    for (int y = 0; y < 120; ++y)
      for (int x = 0; x < 120; ++x) n += std::hypot(x + 0.5 - cx, y + 0.5 - 60) <= r + 1.5;
    return n;
  };
  const std::string ann = login("ann", "pw1"), ben = login("ben", "pw2");
  httplib::Headers ha{{"Authorization", "Bearer " + ann}}, hb{{"Authorization", "Bearer " + ben}};
  auto post = [&](const httplib::Headers& h, const std::string& path, const json& body) {
    auto r = cli.Post(path, h, body.dump(), "application/json");
    return r ? r->status : -1;
  };
  const int s1 = post(ha, "/api/images/a/strokes", {{"strokes", {arc(55, 35, 0, 90)}}});
  const int s2 = post(ha, "/api/images/a/strokes", {{"strokes", {arc(55, 35, 90, 180)}}});
  const int sub = post(ha, "/api/images/a/submit", json::object());
  const int again = post(ha, "/api/images/a/submit", json::object());
  bool listed_a = false;
  for (const json& e : json::parse(cli.Get("/api/images", ha)->body)) listed_a = listed_a || e.at("id") == "a";

  post(hb, "/api/images/a/strokes", {{"strokes", {arc(65, 35, 0, 180)}}});
  post(hb, "/api/images/a/submit", json::object());
  auto mask_of = [&](const std::string& path) {
    const std::string body = cli.Get(path, ha)->body;
    const Image8 img = decode_png(std::vector<std::uint8_t>(body.begin(), body.end()));
    Tensor t({img.height, img.width, 1});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] > 127 ? 1.0f : 0.0f;
    return t;
  };
  const Tensor ma = mask_of("/api/export/a?annotator=ann"), mb = mask_of("/api/export/a?annotator=ben");
  const Tensor merged = mask_of("/api/export/a/merged");
  const Tensor both[] = {ma, mb};
  const bool merge_ok = merged == merge_annotations(both);
  const double oracle = polygon_area(55, 35), area = sum(ma);
  const double rel = std::abs(area - oracle) / oracle;
  server.stop();
  return {!ann.empty() && s1 == 204 && s2 == 204 && sub == 204 && again == 409 && !listed_a && rel <= 0.02 && merge_ok,
          fmt("strokes %d/%d, submit %d, resubmit %d, listed after submit %s, area %.0f vs oracle %.0f (%.2f%%), "
              "merged export %s",
              s1, s2, sub, again, listed_a ? "yes" : "no", area, oracle, 100 * rel, merge_ok ? "matches" : "DIFFERS")};
}

}  // namespace

int main() {
  set_log_level(LogLevel::kWarn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"[PRIMARY] gradient suite", gradient_suite},
      {"[PRIMARY] jaccard oracle equivalence", jaccard_oracle},
      {"[PRIMARY] metric identities", metric_identities},
      {"[PRIMARY] architecture contract", architecture},
      {"[PRIMARY] end-to-end learning", end_to_end},
      {"[PRIMARY] loss ablation direction", loss_ablation},
      {"[PRIMARY] callback semantics", callbacks},
      {"[PRIMARY] determinism", determinism},
      {"[PRIMARY] weight file round trip", weight_file},
      {"[SECONDARY] portal workflow", portal},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}
