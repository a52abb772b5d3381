#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "odseg/errors.hpp"
#include "odseg/experiment.hpp"
#include "odseg/training.hpp"
#include "test_util.hpp"

using namespace odseg;

namespace {

TrainingConfig tiny_config() {
  TrainingConfig c;
  c.batch_size = 2;
  c.max_epochs = 400;
  c.seed = 3;
  return c;
}

Model tiny_model() { return build_model(32, 32, 0.125, 3); }

/// Strictly improving for `improving` epochs, flat afterwards.
double scripted(std::size_t epoch, std::size_t improving) {
  return epoch <= improving ? 1.0 - 0.01 * static_cast<double>(epoch) : 2.0;
}

std::string without_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST_CASE("callback state counts stagnant epochs") {
  CallbackState s(25, 100);
  CHECK(s.on_epoch_end(1.0).improved);
  for (int i = 1; i <= 24; ++i) CHECK_FALSE(s.on_epoch_end(1.0).reduce_lr);
  const auto d = s.on_epoch_end(1.0);
  CHECK(d.reduce_lr);
  CHECK_FALSE(d.stop);
  CHECK(s.epochs_without_improvement() == 25);
  CHECK(s.on_epoch_end(0.5).improved);
  CHECK(s.epochs_without_improvement() == 0);
  CHECK_THROWS_AS(CallbackState(0, 10), ParameterError);
}

TEST_CASE("scripted validation losses drive the callbacks") {
  const Dataset data = generate_synthetic({3, 32, 1});
  const Dataset train_set(data.begin(), data.begin() + 2), val_set(data.begin() + 2, data.end());
  constexpr std::size_t improving = 10;
  Model at_best = tiny_model();
  TrainingHooks hooks;
  hooks.val_loss_override = [](std::size_t epoch, double) { return scripted(epoch, improving); };
  hooks.on_epoch_end = [&](std::size_t epoch, const Model& m, const HistoryRow&) {
    if (epoch == improving) at_best = m;
  };
  const TrainResult r = train(tiny_model(), train_set, val_set, tiny_config(), hooks);

  CHECK(r.status == TrainStatus::kEarlyStopped);
  CHECK(r.history.rows.size() == improving + 100);
  CHECK(r.history.best_epoch == improving);
  const auto& rows = r.history.rows;
  CHECK(rows[improving + 25 - 1].lr == doctest::Approx(1e-4));
  CHECK(rows[improving + 25].lr == doctest::Approx(5e-5));
  CHECK(rows[improving + 50].lr == doctest::Approx(2.5e-5));
  const auto best = r.best_model.named_parameters(), expect = at_best.named_parameters();
  for (std::size_t i = 0; i < best.size(); ++i) CHECK(best[i].tensor == expect[i].tensor);
}

TEST_CASE("a non-finite loss aborts and keeps the best checkpoint") {
  const test::TempDir dir;
  const Dataset data = generate_synthetic({3, 32, 1});
  const Dataset train_set(data.begin(), data.begin() + 2), val_set(data.begin() + 2, data.end());
  TrainingConfig c = tiny_config();
  c.checkpoint_dir = dir.path;
  TrainingHooks hooks;
  hooks.val_loss_override = [](std::size_t epoch, double v) {
    return epoch == 3 ? std::numeric_limits<double>::quiet_NaN() : scripted(epoch, 2) + 0 * v;
  };
  const TrainResult r = train(tiny_model(), train_set, val_set, c, hooks);
  CHECK(r.status == TrainStatus::kAborted);
  CHECK(r.diagnostic.find("epoch 3") != std::string::npos);
  CHECK(read_checkpoint_meta(dir.path / "best.odsw").epoch == 2);
  CHECK(load_checkpoint(dir.path / "best.odsw").parameter_count() == tiny_model().parameter_count());
}

TEST_CASE("seeded training is reproducible") {
  const test::TempDir a, b;
  const Dataset data = generate_synthetic({4, 32, 5});
  const Dataset train_set(data.begin(), data.begin() + 3), val_set(data.begin() + 3, data.end());
  TrainingConfig c = tiny_config();
  c.max_epochs = 3;
  c.use_augmentation = true;
  c.checkpoint_dir = a.path;
  train(tiny_model(), train_set, val_set, c);
  c.checkpoint_dir = b.path;
  train(tiny_model(), train_set, val_set, c);
  CHECK(read_file_bytes(a.path / "best.odsw") == read_file_bytes(b.path / "best.odsw"));
  const auto text = [](const std::filesystem::path& p) {
    const auto bytes = read_file_bytes(p);
    return std::string(bytes.begin(), bytes.end());
  };
  CHECK(without_seconds(text(a.path / "history.csv")) == without_seconds(text(b.path / "history.csv")));
  CHECK(text(a.path / "best.odsw.meta") == text(b.path / "best.odsw.meta"));
}

TEST_CASE("config validation and fingerprint") {
  TrainingConfig c;
  CHECK_NOTHROW(c.validate());
  const auto h = c.hash();
  c.loss = LossKind::kBce;
  CHECK(c.hash() != h);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  TrainingConfig d;
  d.learning_rate = -1;
  CHECK_THROWS_AS(d.validate(), ParameterError);
}

TEST_CASE("experiment writes its artifacts and evaluation is repeatable") {
  const test::TempDir dir;
  const auto manifest = write_dataset(generate_synthetic({8, 32, 2}), dir.path / "data", 0.75, 2);
  ExperimentOptions o;
  o.manifest = manifest;
  o.out_dir = dir.path / "run";
  o.training = tiny_config();
  o.training.max_epochs = 2;
  o.size = 32;
  o.width_multiplier = 0.125;
  const ExperimentResult r = run_experiment(o);
  CHECK(r.train_count == 5);
  CHECK(r.val_count == 1);
  CHECK(r.test_count == 2);
  CHECK(r.evaluated);
  for (const char* f : {"best.odsw", "best.odsw.meta", "history.csv", "config.txt", "test_report.txt",
                        "test_report.csv"}) {
    CHECK(std::filesystem::exists(o.out_dir / f));
  }
  const EvalReport e1 = evaluate_manifest(o.out_dir / "best.odsw", manifest, SplitFilter::kTest);
  const EvalReport e2 = evaluate_manifest(o.out_dir / "best.odsw", manifest, SplitFilter::kTest);
  CHECK(e1.pooled_counts == e2.pooled_counts);
  CHECK(e1.pooled_counts == r.test_report.pooled_counts);

  std::filesystem::remove(o.out_dir / "best.odsw");
  CHECK_THROWS_AS(evaluate_manifest(o.out_dir / "best.odsw", manifest, SplitFilter::kTest), IoError);
}

TEST_CASE("a perfect prediction scores 100") {
  // Constant-output model: zero every kernel, push the head bias up, and
  // evaluate on an all-disc mask.
  Model m = tiny_model();
  for (ConvLayer& l : m.layers()) {
    l.params.kernels.fill(0.0f);
    l.params.biases.fill(0.0f);
  }
  m.layers().back().params.biases.fill(10.0f);
  const Dataset d = {Sample{Tensor::full({32, 32, 3}, 0.5f), Tensor::ones({32, 32, 1}), "all", {}}};
  const EvalReport r = timed_evaluate(m, d);
  CHECK(r.pooled.dice == 100.0);
  CHECK(r.mean_of_images.accuracy == 100.0);
}

TEST_CASE("predict_image keeps the source resolution") {
  const Model m = tiny_model();
  Image8 img{50, 40, 3, std::vector<std::uint8_t>(50 * 40 * 3, 90)};
  const Prediction p = predict_image(m, img);
  CHECK(p.mask.width == 50);
  CHECK(p.mask.height == 40);
  CHECK(p.overlay.channels == 3);
  const Prediction q = predict_image(m, img);
  CHECK(encode_png(p.mask) == encode_png(q.mask));
}
