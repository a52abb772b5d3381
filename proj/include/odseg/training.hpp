#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "odseg/data.hpp"
#include "odseg/loss.hpp"
#include "odseg/metrics.hpp"
#include "odseg/model.hpp"

namespace odseg {

struct TrainingConfig {
  std::size_t batch_size = 4;
  double learning_rate = 1e-4;
  std::size_t plateau_patience = 25;
  double plateau_factor = 0.5;
  std::size_t early_stop_patience = 100;
  std::size_t max_epochs = 1000;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kCombined;
  bool use_transfer_learning = false;
  bool use_augmentation = false;
  AugmentationConfig augmentation;
  /// When set, best.odsw, best.odsw.meta and history.csv are written here.
  std::filesystem::path checkpoint_dir;

  void validate() const;
  /// Stable "key=value;" rendering of every field that affects results.
  std::string canonical() const;
  std::uint64_t hash() const;
};

struct HistoryRow {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;  // learning rate used during this epoch
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<HistoryRow> rows;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;

  /// Header epoch,train_loss,val_loss,lr,seconds.
  std::string to_csv() const;
};

/// Checkpoint / learning-rate plateau / early-stopping bookkeeping. An
/// improvement is any strictly smaller validation loss; it resets both
/// counters. A learning-rate reduction resets only the plateau counter.
class CallbackState {
 public:
  CallbackState(std::size_t plateau_patience, std::size_t early_stop_patience);

  struct Decision {
    bool improved = false;
    bool reduce_lr = false;
    bool stop = false;
  };

  Decision on_epoch_end(double val_loss);

  double best() const noexcept { return best_; }
  std::size_t epochs_without_improvement() const noexcept { return stale_; }

 private:
  std::size_t plateau_patience_;
  std::size_t early_stop_patience_;
  double best_;
  std::size_t stale_ = 0;
  std::size_t plateau_wait_ = 0;
};

struct TrainingHooks {
  /// Replaces the measured validation loss (scripted callback tests).
  std::function<double(std::size_t epoch, double measured)> val_loss_override;
  std::function<void(std::size_t epoch, const Model& model, const HistoryRow& row)> on_epoch_end;
};

enum class TrainStatus { kMaxEpochs, kEarlyStopped, kAborted };

struct TrainResult {
  Model best_model;
  TrainingHistory history;
  TrainStatus status = TrainStatus::kMaxEpochs;
  std::string diagnostic;
};

/// Mini-batch NAdam training; returns the validation-best model, not the
/// last one. A non-finite loss or gradient aborts the run (status kAborted)
/// with the best checkpoint left intact.
TrainResult train(Model model, const Dataset& train_set, const Dataset& val_set, const TrainingConfig& config,
                  const TrainingHooks& hooks = {});

/// Mean per-batch loss over `dataset` without augmentation.
double dataset_loss(const Model& model, const Dataset& dataset, LossKind loss, std::size_t batch_size);

struct CheckpointMeta {
  std::size_t epoch = 0;
  double val_loss = 0.0;
  std::uint64_t config_hash = 0;
  ModelConfig model;
  LossKind loss = LossKind::kCombined;

  std::string to_text() const;
  static CheckpointMeta parse(const std::string& text);
};

std::filesystem::path meta_path(const std::filesystem::path& weights);
void write_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& weights);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& weights);
/// Rebuilds the architecture from the sidecar and loads weights strictly.
Model load_checkpoint(const std::filesystem::path& weights);

EvalReport evaluate_checkpoint(const std::filesystem::path& weights, const Dataset& dataset);

std::uint64_t fnv1a64(const std::string& text);

}  // namespace odseg
