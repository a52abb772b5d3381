#pragma once

#include <filesystem>
#include <string>

#include "odseg/data.hpp"
#include "odseg/image_io.hpp"
#include "odseg/metrics.hpp"
#include "odseg/model.hpp"
#include "odseg/training.hpp"

namespace odseg {

struct ExperimentOptions {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  TrainingConfig training;  // checkpoint_dir is set to out_dir
  std::size_t size = 224;
  double width_multiplier = 1.0;
  /// Encoder-only (or full) weight file applied before training.
  std::filesystem::path tl_weights;
  /// Share of the train-tagged records held out for validation (at least one).
  double val_fraction = 0.10;
};

struct ExperimentResult {
  TrainResult train;
  EvalReport test_report;
  bool evaluated = false;
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  std::size_t test_count = 0;
};

/// Manifest -> preprocess -> train/val split -> train -> evaluate the best
/// checkpoint on the test-tagged records. Writes best.odsw(.meta),
/// history.csv, config.txt and, when test records exist,
/// test_report.txt and test_report.csv into out_dir.
ExperimentResult run_experiment(const ExperimentOptions& options, const TrainingHooks& hooks = {});

enum class SplitFilter { kTrain, kTest, kAll };
SplitFilter parse_split_filter(const std::string& name);

/// Evaluates a checkpoint on the manifest records matching `filter`,
/// resized to the checkpoint's input size.
EvalReport evaluate_manifest(const std::filesystem::path& weights, const std::filesystem::path& manifest,
                             SplitFilter filter);

struct Prediction {
  Image8 mask;     // {0,255}, source resolution
  Image8 overlay;  // source image with a green mask boundary
  double seconds = 0.0;
};

Prediction predict_image(const Model& model, const Image8& image);
/// Copy of `image` (as RGB) with the 1-pixel boundary of `mask` in pure green.
Image8 render_overlay(const Image8& image, const Tensor& mask);

}  // namespace odseg
