#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "odseg/data.hpp"
#include "odseg/tensor.hpp"

namespace odseg {

class Model;

inline constexpr float kDefaultThreshold = 0.5f;

/// >= threshold -> 1, else 0.
Tensor binarize(const Tensor& predictions, float threshold = kDefaultThreshold);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Disc (1) is the positive class. Throws ShapeError on mismatched shapes
/// and ParameterError on non-binary input.
ConfusionCounts confusion(const Tensor& predicted, const Tensor& truth);

/// Fractions in [0,1].
struct Metrics {
  double accuracy = 0.0;
  double dice = 0.0;
  double sensitivity = 0.0;
  double iou = 0.0;
};

/// Empty truth and prediction: dice = iou = sensitivity = 1. Exactly one of
/// them empty: dice = iou = 0, sensitivity 0 when truth is non-empty,
/// otherwise 1.
Metrics compute_metrics(const ConfusionCounts& counts);

struct ImageEval {
  std::string id;
  ConfusionCounts counts;
  Metrics metrics;
  double seconds = 0.0;
};

/// Aggregates are reported as percentages, both from pooled counts and as
/// the mean over images.
struct EvalReport {
  std::vector<ImageEval> images;
  ConfusionCounts pooled_counts;
  Metrics pooled;         // percent
  Metrics mean_of_images;  // percent
  double mean_seconds = 0.0;

  /// "key=value" lines.
  std::string to_key_value() const;
  /// Header "id,tp,fp,tn,fn,acc,dc,sen,iou,seconds" plus one row per image.
  std::string to_csv() const;
};

EvalReport timed_evaluate(const Model& model, const Dataset& dataset, float threshold = kDefaultThreshold);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace odseg
