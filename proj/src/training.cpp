#include "odseg/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "odseg/errors.hpp"
#include "odseg/log.hpp"
#include "odseg/optimizer.hpp"
#include "odseg/rng.hpp"

namespace odseg {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void TrainingConfig::validate() const {
  if (batch_size == 0) throw ParameterError("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be > 0");
  if (plateau_patience == 0 || early_stop_patience == 0) throw ParameterError("patience values must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ParameterError("plateau factor must lie in (0,1)");
  if (max_epochs == 0) throw ParameterError("max epochs must be >= 1");
  augmentation.validate();
}

std::string TrainingConfig::canonical() const {
  std::ostringstream os;
  os << "batch_size=" << batch_size << ";lr=" << format_double(learning_rate) << ";plateau_patience=" << plateau_patience
     << ";plateau_factor=" << format_double(plateau_factor) << ";early_stop_patience=" << early_stop_patience
     << ";max_epochs=" << max_epochs << ";seed=" << seed << ";loss=" << to_string(loss)
     << ";tl=" << use_transfer_learning << ";augment=" << use_augmentation;
  if (use_augmentation) {
    os << ";aug_p=" << format_double(augmentation.probability)
       << ";aug_shift=" << format_double(augmentation.shift_fraction)
       << ";aug_rot=" << format_double(augmentation.max_rotation_degrees) << ";aug_flags="
       << augmentation.horizontal_shift << augmentation.vertical_shift << augmentation.rotation
       << augmentation.horizontal_flip << augmentation.vertical_flip;
  }
  return os.str();
}

std::uint64_t TrainingConfig::hash() const { return fnv1a64(canonical()); }

std::string TrainingHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,lr,seconds\n";
  char buf[160];
  for (const HistoryRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.4f\n", r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds);
    os << buf;
  }
  return os.str();
}

CallbackState::CallbackState(std::size_t plateau_patience, std::size_t early_stop_patience)
    : plateau_patience_(plateau_patience),
      early_stop_patience_(early_stop_patience),
      best_(std::numeric_limits<double>::infinity()) {
  if (plateau_patience == 0 || early_stop_patience == 0) throw ParameterError("patience values must be positive");
}

CallbackState::Decision CallbackState::on_epoch_end(double val_loss) {
  Decision d;
  if (val_loss < best_) {
    best_ = val_loss;
    stale_ = 0;
    plateau_wait_ = 0;
    d.improved = true;
    return d;
  }
  ++stale_;
  ++plateau_wait_;
  if (plateau_wait_ >= plateau_patience_) {
    d.reduce_lr = true;
    plateau_wait_ = 0;
  }
  d.stop = stale_ >= early_stop_patience_;
  return d;
}

double dataset_loss(const Model& model, const Dataset& dataset, LossKind loss, std::size_t batch_size) {
  if (dataset.empty()) throw ParameterError("dataset_loss: empty dataset");
  double total = 0.0;
  std::size_t batches = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i) idx.push_back(i);
    auto [images, masks] = make_batch(dataset, idx);
    const Tensor pred = model.predict(images);
    const Tensor labels = masks.reshaped(pred.shape());
    total += loss_value(loss, PixelPartition(labels, pred), DegenerateLabels::kSmooth);
    ++batches;
  }
  return total / static_cast<double>(batches);
}

std::string CheckpointMeta::to_text() const {
  std::ostringstream os;
  os << "epoch=" << epoch << "\nval_loss=" << format_double(val_loss) << "\nconfig_hash=" << hex64(config_hash)
     << "\nheight=" << model.height << "\nwidth=" << model.width
     << "\nwidth_multiplier=" << format_double(model.width_multiplier) << "\nloss=" << to_string(loss) << '\n';
  return os.str();
}

CheckpointMeta CheckpointMeta::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("checkpoint metadata lacks '") + key + "'");
    return it->second;
  };
  CheckpointMeta m;
  try {
    m.epoch = std::stoul(need("epoch"));
    m.val_loss = std::stod(need("val_loss"));
    m.config_hash = std::stoull(need("config_hash"), nullptr, 16);
    m.model.height = std::stoul(need("height"));
    m.model.width = std::stoul(need("width"));
    m.model.width_multiplier = std::stod(need("width_multiplier"));
  } catch (const std::logic_error&) {
    throw FormatError("malformed checkpoint metadata");
  }
  m.loss = parse_loss_kind(need("loss"));
  return m;
}

fs::path meta_path(const fs::path& weights) {
  fs::path p = weights;
  p += ".meta";
  return p;
}

void write_checkpoint(const Model& model, const CheckpointMeta& meta, const fs::path& weights) {
  // Write to temporaries and rename so an interrupted save never clobbers
  // the previous checkpoint.
  fs::path tmp_weights = weights;
  tmp_weights += ".tmp";
  fs::path tmp_meta = meta_path(weights);
  tmp_meta += ".tmp";
  save_weights(model, tmp_weights);
  write_text_file(tmp_meta, meta.to_text());
  fs::rename(tmp_weights, weights);
  fs::rename(tmp_meta, meta_path(weights));
}

CheckpointMeta read_checkpoint_meta(const fs::path& weights) {
  const fs::path mp = meta_path(weights);
  std::ifstream in(mp);
  if (!in) throw IoError("cannot open checkpoint metadata '" + mp.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return CheckpointMeta::parse(ss.str());
}

Model load_checkpoint(const fs::path& weights) {
  if (!fs::exists(weights)) throw IoError("checkpoint '" + weights.string() + "' not found");
  const CheckpointMeta meta = read_checkpoint_meta(weights);
  Model model(meta.model);
  load_weights(model, weights, LoadMode::kStrict);
  return model;
}

EvalReport evaluate_checkpoint(const fs::path& weights, const Dataset& dataset) {
  const Model model = load_checkpoint(weights);
  return timed_evaluate(model, dataset);
}

TrainResult train(Model model, const Dataset& train_set, const Dataset& val_set, const TrainingConfig& config,
                  const TrainingHooks& hooks) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw ParameterError("train: training and validation sets must be non-empty");
  const ModelConfig& mc = model.config();
  for (const Dataset* ds : {&train_set, &val_set}) {
    for (const Sample& s : *ds) {
      if (s.image.shape() != Shape{mc.height, mc.width, 3}) {
        throw ShapeError("train: sample '" + s.source_id + "' has shape " + shape_to_string(s.image.shape()) +
                         ", model expects " + std::to_string(mc.height) + "x" + std::to_string(mc.width));
      }
    }
  }
  if (!config.checkpoint_dir.empty()) fs::create_directories(config.checkpoint_dir);

  NadamConfig nc;
  nc.learning_rate = config.learning_rate;
  Nadam optimizer(nc);
  CallbackState callbacks(config.plateau_patience, config.early_stop_patience);
  TrainResult result{model, {}, TrainStatus::kMaxEpochs, {}};
  const std::uint64_t config_hash = config.hash();
  std::vector<Tensor*> params = model.parameter_tensors();
  bool warned_degenerate = false;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    HistoryRow row;
    row.epoch = epoch;
    row.lr = optimizer.learning_rate();

    const std::vector<std::size_t> order = seeded_permutation(train_set.size(), derive_seed(config.seed, epoch, 1));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    bool failed = false;
    for (std::size_t first = 0; first < order.size() && !failed; first += config.batch_size) {
      const std::size_t last = std::min(order.size(), first + config.batch_size);
      std::vector<Tensor> images, masks;
      for (std::size_t i = first; i < last; ++i) {
        const std::size_t idx = order[i];
        if (config.use_augmentation) {
          CounterRng rng(derive_seed(config.seed, idx, epoch));
          Sample s = augment(train_set[idx], config.augmentation, rng);
          images.push_back(std::move(s.image));
          masks.push_back(std::move(s.mask));
        } else {
          images.push_back(train_set[idx].image);
          masks.push_back(train_set[idx].mask);
        }
      }
      const Tensor batch = stack(images);
      const Tensor labels = stack(masks);

      ForwardPass pass = model.forward(batch);
      const Tensor flat_labels = labels.reshaped(pass.output.shape());
      const PixelPartition part(flat_labels, pass.output);
      if (part.disc_count() == 0 && !warned_degenerate && config.loss != LossKind::kBce) {
        log_warn("batch without disc pixels; using the smooth background-only Jaccard term");
        warned_degenerate = true;
      }
      const double loss = loss_value(config.loss, part, DegenerateLabels::kSmooth);
      if (!std::isfinite(loss)) {
        result.diagnostic = "non-finite training loss at epoch " + std::to_string(epoch);
        failed = true;
        break;
      }
      const Tensor grad = loss_grad(config.loss, part, DegenerateLabels::kSmooth);
      const GradientStore grads = model.backward(pass, grad);
      try {
        optimizer.step(params, Model::gradient_tensors(grads));
      } catch (const NonFiniteError& e) {
        result.diagnostic = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        failed = true;
        break;
      }
      loss_sum += loss;
      ++batches;
    }

    if (!failed) {
      row.train_loss = loss_sum / static_cast<double>(batches);
      row.val_loss = dataset_loss(model, val_set, config.loss, config.batch_size);
      if (hooks.val_loss_override) row.val_loss = hooks.val_loss_override(epoch, row.val_loss);
      if (!std::isfinite(row.val_loss)) {
        result.diagnostic = "non-finite validation loss at epoch " + std::to_string(epoch);
        failed = true;
      }
    }
    if (failed) {
      log(LogLevel::kError, "training aborted: " + result.diagnostic);
      result.status = TrainStatus::kAborted;
      return result;
    }

    const CallbackState::Decision d = callbacks.on_epoch_end(row.val_loss);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.rows.push_back(row);
    if (d.improved) {
      result.best_model = model;
      result.history.best_epoch = epoch;
      result.history.best_val_loss = row.val_loss;
      if (!config.checkpoint_dir.empty()) {
        write_checkpoint(model, {epoch, row.val_loss, config_hash, model.config(), config.loss},
                         config.checkpoint_dir / "best.odsw");
      }
    }
    if (!config.checkpoint_dir.empty()) {
      write_text_file(config.checkpoint_dir / "history.csv", result.history.to_csv());
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model, row);
    if (d.reduce_lr) {
      optimizer.set_learning_rate(optimizer.learning_rate() * config.plateau_factor);
      log_info("epoch " + std::to_string(epoch) + ": learning rate reduced to " +
               format_double(optimizer.learning_rate()));
    }
    if (d.stop) {
      result.status = TrainStatus::kEarlyStopped;
      log_info("early stop after epoch " + std::to_string(epoch));
      break;
    }
  }
  return result;
}

}  // namespace odseg
