/* C interface to the optic-disc segmentation toolkit.
 *
 * Every function that can fail returns an odseg_status. On failure the
 * calling thread's message is available from odseg_last_error() until the
 * next failing call on that thread. Strings returned through char** out
 * parameters are owned by the caller and released with odseg_string_free.
 */
#ifndef ODSEG_ODSEG_H
#define ODSEG_ODSEG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ODSEG_API __declspec(dllexport)
#else
#define ODSEG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum odseg_status {
  ODSEG_OK = 0,
  ODSEG_ERR_SHAPE = 1,
  ODSEG_ERR_PARAM = 2,
  ODSEG_ERR_FORMAT = 3,
  ODSEG_ERR_IO = 4,
  ODSEG_ERR_DEGENERATE = 5,
  ODSEG_ERR_NONFINITE = 6,
  ODSEG_ERR_GRADCHECK = 7, /* a gradient check exceeded its tolerance */
  ODSEG_ERR_NULL = 8,      /* required pointer argument was NULL */
  ODSEG_ERR_INTERNAL = 9
} odseg_status;

ODSEG_API const char* odseg_version(void);
ODSEG_API const char* odseg_last_error(void);
ODSEG_API const char* odseg_status_name(odseg_status status);
ODSEG_API void odseg_string_free(char* s);

/* FNV-1a 64 of a string; used for configuration fingerprints. */
ODSEG_API uint64_t odseg_hash_string(const char* text);

/* Logging. Levels: 0 debug, 1 info, 2 warn, 3 error. A NULL callback
 * restores the default stderr sink. */
typedef void (*odseg_log_fn)(int level, const char* message, void* user);
ODSEG_API void odseg_set_log_callback(odseg_log_fn fn, void* user);
ODSEG_API void odseg_set_log_level(int level);

/* ---- Model ------------------------------------------------------------ */

typedef struct odseg_model odseg_model;

/* height and width: positive multiples of 32; width_multiplier in (0, 1]. */
ODSEG_API odseg_status odseg_model_create(size_t height, size_t width, double width_multiplier, uint64_t seed,
                                          odseg_model** out);
/* Architecture from the checkpoint sidecar, weights loaded strictly. */
ODSEG_API odseg_status odseg_model_open_checkpoint(const char* weights_path, odseg_model** out);
ODSEG_API void odseg_model_destroy(odseg_model* model);

ODSEG_API odseg_status odseg_model_input_size(const odseg_model* model, size_t* height, size_t* width);
ODSEG_API odseg_status odseg_model_parameter_count(const odseg_model* model, size_t* total, size_t* encoder);
ODSEG_API odseg_status odseg_model_save(const odseg_model* model, const char* path);
/* Encoder tensors only: the transfer-learning payload. */
ODSEG_API odseg_status odseg_model_save_encoder(const odseg_model* model, const char* path);
/* strict != 0: unknown names or shape mismatches fail and nothing changes.
 * Tensors absent from the file keep their values. loaded/skipped may be NULL. */
ODSEG_API odseg_status odseg_model_load(odseg_model* model, const char* path, int strict, size_t* loaded,
                                        size_t* skipped);
/* images: [batch, height, width, 3] floats in [0,1], height/width equal to the
 * model input size. out: [batch, height, width] probabilities. */
ODSEG_API odseg_status odseg_model_predict(const odseg_model* model, const float* images, size_t batch,
                                           size_t height, size_t width, float* out);

/* ---- Pipelines --------------------------------------------------------- */

typedef struct odseg_train_options {
  const char* manifest;
  const char* out_dir;
  const char* loss;       /* "bce", "jaccard" or "combined" */
  const char* tl_weights; /* NULL: no transfer learning */
  int augment;
  uint64_t seed;
  double width_multiplier;
  size_t size;
  size_t batch_size;
  double learning_rate;
  size_t max_epochs;
  size_t plateau_patience;
  double plateau_factor;
  size_t early_stop_patience;
  double val_fraction;
} odseg_train_options;

/* Fills the defaults: combined loss, 224x224, width 1, batch 4, lr 1e-4,
 * plateau 25 x0.5, early stop 100, 1000 epochs, val fraction 0.1. */
ODSEG_API void odseg_train_options_init(odseg_train_options* options);
/* Canonical text of every result-affecting option and its hash. */
ODSEG_API odseg_status odseg_train_options_fingerprint(const odseg_train_options* options, char** canonical,
                                                       uint64_t* hash);

typedef struct odseg_metrics {
  double accuracy; /* percent */
  double dice;
  double sensitivity;
  double iou;
} odseg_metrics;

typedef struct odseg_train_summary {
  size_t epochs_run;
  size_t best_epoch;
  double best_val_loss;
  int early_stopped;
  int evaluated; /* test metrics below are valid */
  odseg_metrics test_pooled;
  odseg_metrics test_mean;
  double test_mean_seconds;
  size_t train_count;
  size_t val_count;
  size_t test_count;
} odseg_train_summary;

typedef void (*odseg_epoch_fn)(size_t epoch, double train_loss, double val_loss, double lr, double seconds,
                               void* user);

/* Non-finite losses end the run with ODSEG_ERR_NONFINITE; the best
 * checkpoint written so far stays in out_dir. */
ODSEG_API odseg_status odseg_train(const odseg_train_options* options, odseg_epoch_fn on_epoch, void* user,
                                   odseg_train_summary* summary);

typedef struct odseg_eval_summary {
  size_t images;
  odseg_metrics pooled;
  odseg_metrics mean;
  double mean_seconds;
} odseg_eval_summary;

/* split: "train", "test" or "all". report_dir may be NULL; otherwise
 * eval_report.txt and eval_report.csv are written there. */
ODSEG_API odseg_status odseg_evaluate(const char* weights_path, const char* manifest, const char* split,
                                      const char* report_dir, odseg_eval_summary* summary);

/* out_overlay may be NULL. seconds (may be NULL) receives the
 * resize + forward + binarize time. */
ODSEG_API odseg_status odseg_predict_file(const char* weights_path, const char* image_path, const char* out_mask,
                                          const char* out_overlay, double* seconds);

typedef struct odseg_gradcheck_options {
  uint64_t seed;
  size_t instances;        /* per component */
  size_t model_size;       /* end-to-end check input size, multiple of 32 */
  size_t model_parameters; /* sampled parameters in the end-to-end check */
  int include_model;
  const char* corrupt_component; /* test hook; NULL for none */
} odseg_gradcheck_options;

ODSEG_API void odseg_gradcheck_options_init(odseg_gradcheck_options* options);
/* report receives one line per component. Returns ODSEG_ERR_GRADCHECK when
 * any component fails; the report is still filled. */
ODSEG_API odseg_status odseg_gradcheck(const odseg_gradcheck_options* options, char** report);

/* Writes count synthetic image/mask pairs and manifest.tsv (a quarter
 * tagged test). */
ODSEG_API odseg_status odseg_synth(size_t count, size_t size, uint64_t seed, const char* out_dir);

/* source: weight file or directory of .npy files; mapping: text file of
 * "external internal [oihw|hwio]" lines. */
ODSEG_API odseg_status odseg_weights_convert(const char* source, const char* mapping, const char* out,
                                             size_t* converted);

/* ---- Annotation service ------------------------------------------------ */

typedef struct odseg_server odseg_server;

typedef struct odseg_server_options {
  const char* data_dir;
  const char* users_file;
  const char* static_dir; /* NULL or missing: no UI mount */
  const char* host;       /* NULL: 127.0.0.1 */
  int port;               /* 0: any free port */
  long session_ttl_seconds;
  size_t max_failed_logins;
  long lockout_seconds;
} odseg_server_options;

ODSEG_API void odseg_server_options_init(odseg_server_options* options);
ODSEG_API odseg_status odseg_server_create(const odseg_server_options* options, odseg_server** out);
/* Binds and serves on a background thread; ODSEG_ERR_IO when the port is taken. */
ODSEG_API odseg_status odseg_server_start(odseg_server* server);
ODSEG_API int odseg_server_port(const odseg_server* server);
ODSEG_API void odseg_server_stop(odseg_server* server);
ODSEG_API void odseg_server_destroy(odseg_server* server);

/* "pbkdf2-sha256$iterations$salt$hash" for a users-file line. */
ODSEG_API odseg_status odseg_hash_password(const char* password, uint32_t iterations, char** encoded);

#ifdef __cplusplus
}
#endif

#endif /* ODSEG_ODSEG_H */
