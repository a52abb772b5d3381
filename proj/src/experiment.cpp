#include "odseg/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "odseg/errors.hpp"
#include "odseg/log.hpp"

namespace odseg {

namespace fs = std::filesystem;

namespace {

std::vector<ManifestRecord> select(const std::vector<ManifestRecord>& records, SplitFilter filter) {
  std::vector<ManifestRecord> out;
  for (const ManifestRecord& r : records) {
    if (filter == SplitFilter::kAll || (filter == SplitFilter::kTrain) == (r.split == SplitTag::kTrain)) {
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace

SplitFilter parse_split_filter(const std::string& name) {
  if (name == "train") return SplitFilter::kTrain;
  if (name == "test") return SplitFilter::kTest;
  if (name == "all") return SplitFilter::kAll;
  throw ParameterError("split must be train, test or all, got '" + name + "'");
}

ExperimentResult run_experiment(const ExperimentOptions& options, const TrainingHooks& hooks) {
  TrainingConfig config = options.training;
  config.checkpoint_dir = options.out_dir;
  config.use_transfer_learning = !options.tl_weights.empty();
  config.validate();
  if (!(options.val_fraction > 0.0 && options.val_fraction < 1.0)) {
    throw ParameterError("validation fraction must lie in (0, 1)");
  }

  const std::vector<ManifestRecord> records = read_manifest(options.manifest);
  const PreprocessOptions pre{options.size, options.size};
  const Dataset pool = load_and_preprocess(select(records, SplitFilter::kTrain), pre);
  const Dataset test = load_and_preprocess(select(records, SplitFilter::kTest), pre);
  if (pool.size() < 2) throw ParameterError("need at least two train-tagged records (one is held out for validation)");

  const std::vector<std::size_t> order = seeded_permutation(pool.size(), derive_seed(config.seed, 0, 2));
  const std::size_t val_count =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(pool.size() * options.val_fraction + 1e-9)));
  Dataset train_set, val_set;
  for (std::size_t i = 0; i < order.size(); ++i) (i < val_count ? val_set : train_set).push_back(pool[order[i]]);

  ModelConfig mc;
  mc.height = mc.width = options.size;
  mc.width_multiplier = options.width_multiplier;
  mc.seed = config.seed;
  Model model(mc);
  if (!options.tl_weights.empty()) {
    const LoadReport r = load_weights(model, options.tl_weights, LoadMode::kStrict);
    log_info("transfer learning: loaded " + std::to_string(r.loaded.size()) + " tensors from " +
             options.tl_weights.string());
  }

  fs::create_directories(options.out_dir);
  char hash[20];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config.hash()));
  write_text_file(options.out_dir / "config.txt",
                  config.canonical() + "\nsize=" + std::to_string(options.size) +
                      "\nwidth_multiplier=" + std::to_string(options.width_multiplier) + "\nconfig_hash=" + hash +
                      "\ntrain=" + std::to_string(train_set.size()) + "\nval=" + std::to_string(val_set.size()) +
                      "\ntest=" + std::to_string(test.size()) + "\n");

  ExperimentResult result{train(std::move(model), train_set, val_set, config, hooks), {}, false,
                          train_set.size(), val_set.size(), test.size()};
  if (result.train.status == TrainStatus::kAborted) return result;
  if (test.empty()) {
    log_warn("manifest has no test records; skipping the final evaluation");
    return result;
  }
  result.test_report = timed_evaluate(result.train.best_model, test);
  result.evaluated = true;
  write_text_file(options.out_dir / "test_report.txt", result.test_report.to_key_value());
  write_text_file(options.out_dir / "test_report.csv", result.test_report.to_csv());
  return result;
}

EvalReport evaluate_manifest(const fs::path& weights, const fs::path& manifest, SplitFilter filter) {
  const Model model = load_checkpoint(weights);
  const std::vector<ManifestRecord> records = select(read_manifest(manifest), filter);
  if (records.empty()) throw ParameterError("no manifest records match the requested split");
  const Dataset data = load_and_preprocess(records, {model.config().height, model.config().width});
  return timed_evaluate(model, data);
}

Image8 render_overlay(const Image8& image, const Tensor& mask) {
  const std::size_t h = image.height, w = image.width;
  if (mask.shape() != Shape{h, w, 1}) throw ShapeError("overlay mask must match the image size");
  Image8 out{w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, x, image.channels == 1 ? 0 : c);
    }
  }
  auto on = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w) && mask[y * w + x] > 0.5f;
  };
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (long x = 0; x < static_cast<long>(w); ++x) {
      if (!on(y, x)) continue;
      if (on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1)) continue;
      out.at(y, x, 0) = 0;
      out.at(y, x, 1) = 255;
      out.at(y, x, 2) = 0;
    }
  }
  return out;
}

Prediction predict_image(const Model& model, const Image8& image) {
  const auto start = std::chrono::steady_clock::now();
  const Tensor input = resize_bilinear(image_to_tensor(image), model.config().height, model.config().width);
  const Tensor probs = model.predict(input.reshaped({1, input.dim(0), input.dim(1), 3}));
  const Tensor mask = binarize(probs).reshaped({model.config().height, model.config().width, 1});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const Tensor full = resize_nearest(mask, image.height, image.width);
  return {mask_to_image(full), render_overlay(image, full), seconds};
}

}  // namespace odseg
