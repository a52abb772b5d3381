#include "odseg/odseg.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "odseg/annotation.hpp"
#include "odseg/convert.hpp"
#include "odseg/errors.hpp"
#include "odseg/experiment.hpp"
#include "odseg/gradcheck.hpp"
#include "odseg/log.hpp"
#include "odseg/training.hpp"

struct odseg_model {
  odseg::Model model;
};

struct odseg_server {
  odseg::AnnotationServer server;
};

namespace {

thread_local std::string g_last_error;

odseg_status fail(odseg_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
odseg_status guarded(F&& body) {
  try {
    return body();
  } catch (const odseg::ShapeError& e) {
    return fail(ODSEG_ERR_SHAPE, e.what());
  } catch (const odseg::ParameterError& e) {
    return fail(ODSEG_ERR_PARAM, e.what());
  } catch (const odseg::FormatError& e) {
    return fail(ODSEG_ERR_FORMAT, e.what());
  } catch (const odseg::IoError& e) {
    return fail(ODSEG_ERR_IO, e.what());
  } catch (const odseg::DegenerateLabelError& e) {
    return fail(ODSEG_ERR_DEGENERATE, e.what());
  } catch (const odseg::NonFiniteError& e) {
    return fail(ODSEG_ERR_NONFINITE, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(ODSEG_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(ODSEG_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(ODSEG_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(ODSEG_ERR_INTERNAL, "unknown error");
  }
}

#define REQUIRE(ptr)                                                             \
  do {                                                                           \
    if (!(ptr)) return fail(ODSEG_ERR_NULL, "argument '" #ptr "' is NULL");     \
  } while (0)

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

odseg_metrics to_c(const odseg::Metrics& m) { return {m.accuracy, m.dice, m.sensitivity, m.iou}; }

odseg::TrainingConfig training_config(const odseg_train_options& o) {
  odseg::TrainingConfig c;
  c.batch_size = o.batch_size;
  c.learning_rate = o.learning_rate;
  c.plateau_patience = o.plateau_patience;
  c.plateau_factor = o.plateau_factor;
  c.early_stop_patience = o.early_stop_patience;
  c.max_epochs = o.max_epochs;
  c.seed = o.seed;
  c.loss = odseg::parse_loss_kind(o.loss ? o.loss : "combined");
  c.use_transfer_learning = o.tl_weights && *o.tl_weights;
  c.use_augmentation = o.augment != 0;
  return c;
}

std::string experiment_canonical(const odseg_train_options& o) {
  return training_config(o).canonical() + ";size=" + std::to_string(o.size) +
         ";width=" + std::to_string(o.width_multiplier) + ";val_fraction=" + std::to_string(o.val_fraction);
}

}  // namespace

extern "C" {

const char* odseg_version(void) { return ODSEG_VERSION; }

const char* odseg_last_error(void) { return g_last_error.c_str(); }

const char* odseg_status_name(odseg_status status) {
  switch (status) {
    case ODSEG_OK: return "ok";
    case ODSEG_ERR_SHAPE: return "shape error";
    case ODSEG_ERR_PARAM: return "parameter error";
    case ODSEG_ERR_FORMAT: return "format error";
    case ODSEG_ERR_IO: return "i/o error";
    case ODSEG_ERR_DEGENERATE: return "degenerate labels";
    case ODSEG_ERR_NONFINITE: return "non-finite value";
    case ODSEG_ERR_GRADCHECK: return "gradient check failed";
    case ODSEG_ERR_NULL: return "null argument";
    case ODSEG_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void odseg_string_free(char* s) { std::free(s); }

uint64_t odseg_hash_string(const char* text) { return odseg::fnv1a64(text ? text : ""); }

void odseg_set_log_callback(odseg_log_fn fn, void* user) {
  if (!fn) {
    odseg::set_log_sink([](odseg::LogLevel level, const std::string& message) {
      static const char* names[] = {"debug", "info", "warn", "error"};
      std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(level)], message.c_str());
    });
    return;
  }
  odseg::set_log_sink([fn, user](odseg::LogLevel level, const std::string& message) {
    fn(static_cast<int>(level), message.c_str(), user);
  });
}

void odseg_set_log_level(int level) {
  odseg::set_log_level(static_cast<odseg::LogLevel>(std::clamp(level, 0, 3)));
}

// ---- Model

odseg_status odseg_model_create(size_t height, size_t width, double width_multiplier, uint64_t seed,
                                odseg_model** out) {
  REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    *out = new odseg_model{odseg::build_model(height, width, width_multiplier, seed)};
    return ODSEG_OK;
  });
}

odseg_status odseg_model_open_checkpoint(const char* weights_path, odseg_model** out) {
  REQUIRE(weights_path);
  REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    *out = new odseg_model{odseg::load_checkpoint(weights_path)};
    return ODSEG_OK;
  });
}

void odseg_model_destroy(odseg_model* model) { delete model; }

odseg_status odseg_model_input_size(const odseg_model* model, size_t* height, size_t* width) {
  REQUIRE(model);
  if (height) *height = model->model.config().height;
  if (width) *width = model->model.config().width;
  return ODSEG_OK;
}

odseg_status odseg_model_parameter_count(const odseg_model* model, size_t* total, size_t* encoder) {
  REQUIRE(model);
  if (total) *total = model->model.parameter_count();
  if (encoder) *encoder = model->model.encoder_parameter_count();
  return ODSEG_OK;
}

odseg_status odseg_model_save(const odseg_model* model, const char* path) {
  REQUIRE(model);
  REQUIRE(path);
  return guarded([&] {
    odseg::save_weights(model->model, path);
    return ODSEG_OK;
  });
}

odseg_status odseg_model_save_encoder(const odseg_model* model, const char* path) {
  REQUIRE(model);
  REQUIRE(path);
  return guarded([&] {
    odseg::write_weight_file(path, odseg::encoder_parameters(model->model));
    return ODSEG_OK;
  });
}

odseg_status odseg_model_load(odseg_model* model, const char* path, int strict, size_t* loaded, size_t* skipped) {
  REQUIRE(model);
  REQUIRE(path);
  return guarded([&] {
    const odseg::LoadReport r =
        odseg::load_weights(model->model, path, strict ? odseg::LoadMode::kStrict : odseg::LoadMode::kLenient);
    if (loaded) *loaded = r.loaded.size();
    if (skipped) *skipped = r.skipped.size();
    return ODSEG_OK;
  });
}

odseg_status odseg_model_predict(const odseg_model* model, const float* images, size_t batch, size_t height,
                                 size_t width, float* out) {
  REQUIRE(model);
  REQUIRE(images);
  REQUIRE(out);
  return guarded([&] {
    const odseg::ModelConfig& mc = model->model.config();
    if (batch == 0 || height != mc.height || width != mc.width) {
      return fail(ODSEG_ERR_SHAPE, "predict: expected [B>0, " + std::to_string(mc.height) + ", " +
                                       std::to_string(mc.width) + ", 3], got [" + std::to_string(batch) + ", " +
                                       std::to_string(height) + ", " + std::to_string(width) + ", 3]");
    }
    const std::size_t n = batch * height * width * 3;
    odseg::Tensor input({batch, height, width, 3}, std::vector<float>(images, images + n));
    const odseg::Tensor probs = model->model.predict(input);
    std::memcpy(out, probs.data(), probs.size() * sizeof(float));
    return ODSEG_OK;
  });
}

// ---- Pipelines

void odseg_train_options_init(odseg_train_options* o) {
  if (!o) return;
  const odseg::TrainingConfig d;
  *o = odseg_train_options{};
  o->loss = "combined";
  o->seed = 0;
  o->width_multiplier = 1.0;
  o->size = 224;
  o->batch_size = d.batch_size;
  o->learning_rate = d.learning_rate;
  o->max_epochs = d.max_epochs;
  o->plateau_patience = d.plateau_patience;
  o->plateau_factor = d.plateau_factor;
  o->early_stop_patience = d.early_stop_patience;
  o->val_fraction = 0.10;
}

odseg_status odseg_train_options_fingerprint(const odseg_train_options* options, char** canonical,
                                             uint64_t* hash) {
  REQUIRE(options);
  return guarded([&] {
    const std::string text = experiment_canonical(*options);
    if (hash) *hash = odseg::fnv1a64(text);
    if (canonical) *canonical = copy_string(text);
    return ODSEG_OK;
  });
}

odseg_status odseg_train(const odseg_train_options* options, odseg_epoch_fn on_epoch, void* user,
                         odseg_train_summary* summary) {
  REQUIRE(options);
  REQUIRE(options->manifest);
  REQUIRE(options->out_dir);
  return guarded([&] {
    odseg::ExperimentOptions eo;
    eo.manifest = options->manifest;
    eo.out_dir = options->out_dir;
    eo.training = training_config(*options);
    eo.size = options->size;
    eo.width_multiplier = options->width_multiplier;
    if (options->tl_weights) eo.tl_weights = options->tl_weights;
    eo.val_fraction = options->val_fraction;
    odseg::TrainingHooks hooks;
    if (on_epoch) {
      hooks.on_epoch_end = [&](std::size_t epoch, const odseg::Model&, const odseg::HistoryRow& r) {
        on_epoch(epoch, r.train_loss, r.val_loss, r.lr, r.seconds, user);
      };
    }
    const odseg::ExperimentResult r = odseg::run_experiment(eo, hooks);
    if (summary) {
      *summary = odseg_train_summary{};
      summary->epochs_run = r.train.history.rows.size();
      summary->best_epoch = r.train.history.best_epoch;
      summary->best_val_loss = r.train.history.best_val_loss;
      summary->early_stopped = r.train.status == odseg::TrainStatus::kEarlyStopped;
      summary->evaluated = r.evaluated;
      summary->test_pooled = to_c(r.test_report.pooled);
      summary->test_mean = to_c(r.test_report.mean_of_images);
      summary->test_mean_seconds = r.test_report.mean_seconds;
      summary->train_count = r.train_count;
      summary->val_count = r.val_count;
      summary->test_count = r.test_count;
    }
    if (r.train.status == odseg::TrainStatus::kAborted) return fail(ODSEG_ERR_NONFINITE, r.train.diagnostic);
    return ODSEG_OK;
  });
}

odseg_status odseg_evaluate(const char* weights_path, const char* manifest, const char* split,
                            const char* report_dir, odseg_eval_summary* summary) {
  REQUIRE(weights_path);
  REQUIRE(manifest);
  return guarded([&] {
    const odseg::EvalReport r =
        odseg::evaluate_manifest(weights_path, manifest, odseg::parse_split_filter(split ? split : "test"));
    if (report_dir) {
      std::filesystem::create_directories(report_dir);
      odseg::write_text_file(std::filesystem::path(report_dir) / "eval_report.txt", r.to_key_value());
      odseg::write_text_file(std::filesystem::path(report_dir) / "eval_report.csv", r.to_csv());
    }
    if (summary) *summary = {r.images.size(), to_c(r.pooled), to_c(r.mean_of_images), r.mean_seconds};
    return ODSEG_OK;
  });
}

odseg_status odseg_predict_file(const char* weights_path, const char* image_path, const char* out_mask,
                                const char* out_overlay, double* seconds) {
  REQUIRE(weights_path);
  REQUIRE(image_path);
  REQUIRE(out_mask);
  return guarded([&] {
    const odseg::Model model = odseg::load_checkpoint(weights_path);
    const odseg::Prediction p = odseg::predict_image(model, odseg::read_image(image_path));
    odseg::write_png(out_mask, p.mask);
    if (out_overlay) odseg::write_png(out_overlay, p.overlay);
    if (seconds) *seconds = p.seconds;
    return ODSEG_OK;
  });
}

void odseg_gradcheck_options_init(odseg_gradcheck_options* o) {
  if (!o) return;
  const odseg::GradcheckOptions d;
  *o = {d.seed, d.instances, d.model_size, d.model_parameters, d.include_model, nullptr};
}

odseg_status odseg_gradcheck(const odseg_gradcheck_options* options, char** report) {
  REQUIRE(options);
  return guarded([&] {
    odseg::GradcheckOptions go;
    go.seed = options->seed;
    go.instances = options->instances;
    go.model_size = options->model_size;
    go.model_parameters = options->model_parameters;
    go.include_model = options->include_model != 0;
    if (options->corrupt_component) go.corrupt_component = options->corrupt_component;
    const odseg::GradcheckReport r = odseg::run_gradcheck(go);
    if (report) *report = copy_string(r.to_text());
    if (!r.all_passed()) return fail(ODSEG_ERR_GRADCHECK, "one or more gradient checks exceeded tolerance");
    return ODSEG_OK;
  });
}

odseg_status odseg_synth(size_t count, size_t size, uint64_t seed, const char* out_dir) {
  REQUIRE(out_dir);
  return guarded([&] {
    if (count < 2) return fail(ODSEG_ERR_PARAM, "synth needs at least two samples");
    const odseg::Dataset data = odseg::generate_synthetic({count, size, seed});
    odseg::write_dataset(data, out_dir, 0.75, seed);
    return ODSEG_OK;
  });
}

odseg_status odseg_weights_convert(const char* source, const char* mapping, const char* out, size_t* converted) {
  REQUIRE(source);
  REQUIRE(mapping);
  REQUIRE(out);
  return guarded([&] {
    const auto tensors = odseg::convert_weights(source, odseg::read_mapping(mapping));
    odseg::write_weight_file(out, tensors);
    if (converted) *converted = tensors.size();
    return ODSEG_OK;
  });
}

// ---- Annotation service

void odseg_server_options_init(odseg_server_options* o) {
  if (!o) return;
  const odseg::ServiceConfig d;
  *o = {nullptr, nullptr, nullptr, nullptr, d.port, static_cast<long>(d.session_ttl.count()), d.max_failed_logins,
        static_cast<long>(d.lockout.count())};
}

odseg_status odseg_server_create(const odseg_server_options* options, odseg_server** out) {
  REQUIRE(options);
  REQUIRE(options->data_dir);
  REQUIRE(options->users_file);
  REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    if (options->port < 0 || options->port > 65535) return fail(ODSEG_ERR_PARAM, "port must lie in [0, 65535]");
    if (options->session_ttl_seconds <= 0 || options->lockout_seconds < 0 || options->max_failed_logins == 0) {
      return fail(ODSEG_ERR_PARAM, "session TTL, lockout and failure limit must be positive");
    }
    odseg::ServiceConfig c;
    c.data_dir = options->data_dir;
    c.users_file = options->users_file;
    if (options->static_dir) c.static_dir = options->static_dir;
    if (options->host) c.host = options->host;
    c.port = options->port;
    c.session_ttl = std::chrono::seconds(options->session_ttl_seconds);
    c.max_failed_logins = options->max_failed_logins;
    c.lockout = std::chrono::seconds(options->lockout_seconds);
    *out = new odseg_server{odseg::AnnotationServer(std::move(c))};
    return ODSEG_OK;
  });
}

odseg_status odseg_server_start(odseg_server* server) {
  REQUIRE(server);
  return guarded([&] {
    server->server.start();
    return ODSEG_OK;
  });
}

int odseg_server_port(const odseg_server* server) { return server ? server->server.port() : 0; }

void odseg_server_stop(odseg_server* server) {
  if (server) server->server.stop();
}

void odseg_server_destroy(odseg_server* server) { delete server; }

odseg_status odseg_hash_password(const char* password, uint32_t iterations, char** encoded) {
  REQUIRE(password);
  REQUIRE(encoded);
  return guarded([&] {
    *encoded = copy_string(odseg::hash_password(password, iterations));
    return ODSEG_OK;
  });
}

}  // extern "C"
