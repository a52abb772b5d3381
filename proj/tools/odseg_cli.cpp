// Command-line front end. Talks to the toolkit only through odseg.h.
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "odseg/odseg.h"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

int report(odseg_status status) {
  if (status == ODSEG_OK) return 0;
  std::fprintf(stderr, "error: %s: %s\n", odseg_status_name(status), odseg_last_error());
  return 1;
}

void banner(const std::string& command, std::uint64_t seed, std::uint64_t config_hash) {
  std::fprintf(stderr, "odseg %s | %s | seed=%llu | config_hash=%016llx\n", odseg_version(), command.c_str(),
               static_cast<unsigned long long>(seed), static_cast<unsigned long long>(config_hash));
}

void print_metrics(const char* label, const odseg_metrics& m) {
  std::printf("%s acc=%.4f dc=%.4f sen=%.4f iou=%.4f\n", label, m.accuracy, m.dice, m.sensitivity, m.iou);
}

struct TrainArgs {
  std::string manifest, out_dir, loss = "combined", tl_weights;
  bool augment = false, quiet = false;
  std::uint64_t seed = 0;
  double width = 1.0, lr = 1e-4, val_fraction = 0.10;
  std::size_t size = 224, batch = 4, max_epochs = 1000, plateau = 25, early_stop = 100;
};

int run_train(const TrainArgs& a) {
  odseg_train_options o;
  odseg_train_options_init(&o);
  o.manifest = a.manifest.c_str();
  o.out_dir = a.out_dir.c_str();
  o.loss = a.loss.c_str();
  o.tl_weights = a.tl_weights.empty() ? nullptr : a.tl_weights.c_str();
  o.augment = a.augment;
  o.seed = a.seed;
  o.width_multiplier = a.width;
  o.size = a.size;
  o.batch_size = a.batch;
  o.learning_rate = a.lr;
  o.max_epochs = a.max_epochs;
  o.plateau_patience = a.plateau;
  o.early_stop_patience = a.early_stop;
  o.val_fraction = a.val_fraction;

  std::uint64_t hash = 0;
  if (odseg_status s = odseg_train_options_fingerprint(&o, nullptr, &hash); s != ODSEG_OK) return report(s);
  banner("train", a.seed, hash);

  odseg_epoch_fn progress = nullptr;
  if (!a.quiet) {
    progress = [](std::size_t epoch, double tl, double vl, double lr, double seconds, void*) {
      std::printf("epoch %zu train_loss=%.6f val_loss=%.6f lr=%.3g seconds=%.2f\n", epoch, tl, vl, lr, seconds);
      std::fflush(stdout);
    };
  }
  odseg_train_summary s{};
  const odseg_status status = odseg_train(&o, progress, nullptr, &s);
  if (status != ODSEG_OK) return report(status);
  std::printf("epochs=%zu best_epoch=%zu best_val_loss=%.6f early_stopped=%d train=%zu val=%zu test=%zu\n",
              s.epochs_run, s.best_epoch, s.best_val_loss, s.early_stopped, s.train_count, s.val_count,
              s.test_count);
  if (s.evaluated) {
    print_metrics("test pooled", s.test_pooled);
    print_metrics("test mean", s.test_mean);
    std::printf("test mean_seconds=%.4f\n", s.test_mean_seconds);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optic-disc segmentation toolkit"};
  app.set_version_flag("--version", std::string(odseg_version()));
  app.set_config("--config", "", "INI/TOML file with option values (flags take precedence)");
  app.require_subcommand(1);
  int verbosity = 1;
  app.add_option("--log-level", verbosity, "0 debug, 1 info, 2 warn, 3 error")->check(CLI::Range(0, 3));

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train on a manifest and evaluate on its test split");
  train->add_option("--manifest", ta.manifest, "Manifest file")->required()->check(CLI::ExistingFile);
  train->add_option("--out-dir", ta.out_dir, "Directory for checkpoints, history and reports")->required();
  train->add_option("--loss", ta.loss, "bce, jaccard or combined")
      ->check(CLI::IsMember({"bce", "jaccard", "combined"}));
  train->add_option("--tl-weights", ta.tl_weights, "Encoder weight file for transfer learning")
      ->check(CLI::ExistingFile);
  train->add_flag("--augment", ta.augment, "Enable image augmentation");
  train->add_option("--seed", ta.seed, "Random seed");
  train->add_option("--width", ta.width, "Channel width multiplier in (0, 1]");
  train->add_option("--size", ta.size, "Input size (multiple of 32)");
  train->add_option("--batch-size", ta.batch, "Mini-batch size");
  train->add_option("--lr", ta.lr, "Initial learning rate");
  train->add_option("--max-epochs", ta.max_epochs, "Epoch ceiling");
  train->add_option("--plateau-patience", ta.plateau, "Epochs without improvement before halving the lr");
  train->add_option("--early-stop-patience", ta.early_stop, "Epochs without improvement before stopping");
  train->add_option("--val-fraction", ta.val_fraction, "Share of train records held out for validation");
  train->add_flag("--quiet", ta.quiet, "No per-epoch lines");

  std::string weights, manifest, split = "test", report_dir;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  eval->add_option("--weights", weights, "Checkpoint (.odsw with .meta sidecar)")->required();
  eval->add_option("--manifest", manifest, "Manifest file")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  eval->add_option("--report-dir", report_dir, "Write eval_report.txt/.csv here");

  std::string image, out_mask, out_overlay;
  auto* predict = app.add_subcommand("predict", "Segment one image");
  predict->add_option("--weights", weights, "Checkpoint")->required();
  predict->add_option("--image", image, "Input PNG or PGM")->required();
  predict->add_option("--out-mask", out_mask, "Binary mask PNG")->required();
  predict->add_option("--out-overlay", out_overlay, "Input with the mask boundary in green");

  odseg_gradcheck_options go;
  odseg_gradcheck_options_init(&go);
  bool no_model = false;
  std::string corrupt;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--seed", go.seed, "Random seed");
  gradcheck->add_option("--size", go.model_size, "Input size of the end-to-end model check");
  gradcheck->add_option("--instances", go.instances, "Random instances per component");
  gradcheck->add_flag("--no-model", no_model, "Skip the end-to-end model check");
  gradcheck->add_option("--corrupt", corrupt, "Perturb one component's gradient (detector test)")
      ->group("");

  std::size_t n = 16, size = 64;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "Write a synthetic fundus-like dataset");
  synth->add_option("--n", n, "Number of samples");
  synth->add_option("--size", size, "Image size in pixels");
  synth->add_option("--out-dir", out_dir, "Output directory")->required();
  synth->add_option("--seed", seed, "Random seed");

  std::string in, mapping, out;
  auto* convert = app.add_subcommand("weights-convert", "Map external tensors onto model tensor names");
  convert->add_option("--in", in, "Weight file or directory of .npy files")->required()->check(CLI::ExistingPath);
  convert->add_option("--mapping", mapping, "Mapping file")->required()->check(CLI::ExistingFile);
  convert->add_option("--out", out, "Output weight file")->required();

  odseg_server_options so;
  odseg_server_options_init(&so);
  std::string data_dir, users_file, static_dir, host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the annotation service");
  serve->add_option("--port", port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--data-dir", data_dir, "Directory with images/ and tracings/")->required();
  serve->add_option("--users-file", users_file, "username:hash lines")->required()->check(CLI::ExistingFile);
  serve->add_option("--static-dir", static_dir, "UI bundle served at /");
  serve->add_option("--session-ttl", so.session_ttl_seconds, "Session lifetime in seconds");

  std::string password;
  std::uint32_t iterations = 200000;
  auto* hashpw = app.add_subcommand("hash-password", "Print a users-file hash for a password read from stdin");
  hashpw->add_option("--iterations", iterations, "PBKDF2 iterations");

  CLI11_PARSE(app, argc, argv);
  odseg_set_log_level(verbosity);

  if (*train) return run_train(ta);

  if (*eval) {
    banner("eval", 0, odseg_hash_string((weights + "|" + manifest + "|" + split).c_str()));
    odseg_eval_summary s{};
    const odseg_status st = odseg_evaluate(weights.c_str(), manifest.c_str(), split.c_str(),
                                           report_dir.empty() ? nullptr : report_dir.c_str(), &s);
    if (st != ODSEG_OK) return report(st);
    std::printf("images=%zu mean_seconds=%.4f\n", s.images, s.mean_seconds);
    print_metrics("pooled", s.pooled);
    print_metrics("mean", s.mean);
    return 0;
  }

  if (*predict) {
    banner("predict", 0, odseg_hash_string((weights + "|" + image).c_str()));
    double seconds = 0.0;
    const odseg_status st = odseg_predict_file(weights.c_str(), image.c_str(), out_mask.c_str(),
                                               out_overlay.empty() ? nullptr : out_overlay.c_str(), &seconds);
    if (st != ODSEG_OK) return report(st);
    std::printf("seconds=%.4f\n", seconds);
    return 0;
  }

  if (*gradcheck) {
    go.include_model = !no_model;
    if (!corrupt.empty()) go.corrupt_component = corrupt.c_str();
    std::ostringstream canon;
    canon << "instances=" << go.instances << ";size=" << go.model_size << ";model=" << go.include_model;
    banner("gradcheck", go.seed, odseg_hash_string(canon.str().c_str()));
    char* text = nullptr;
    const odseg_status st = odseg_gradcheck(&go, &text);
    if (text) {
      std::fputs(text, stdout);
      odseg_string_free(text);
    }
    return report(st);
  }

  if (*synth) {
    banner("synth", seed, odseg_hash_string(("n=" + std::to_string(n) + ";size=" + std::to_string(size)).c_str()));
    const odseg_status st = odseg_synth(n, size, seed, out_dir.c_str());
    if (st != ODSEG_OK) return report(st);
    std::printf("wrote %zu samples to %s\n", n, out_dir.c_str());
    return 0;
  }

  if (*convert) {
    banner("weights-convert", 0, odseg_hash_string((in + "|" + mapping).c_str()));
    std::size_t count = 0;
    const odseg_status st = odseg_weights_convert(in.c_str(), mapping.c_str(), out.c_str(), &count);
    if (st != ODSEG_OK) return report(st);
    std::printf("converted %zu tensors to %s\n", count, out.c_str());
    return 0;
  }

  if (*serve) {
    banner("serve", 0, odseg_hash_string((data_dir + "|" + users_file).c_str()));
    so.data_dir = data_dir.c_str();
    so.users_file = users_file.c_str();
    so.static_dir = static_dir.empty() ? nullptr : static_dir.c_str();
    so.host = host.c_str();
    so.port = port;
    odseg_server* server = nullptr;
    if (odseg_status st = odseg_server_create(&so, &server); st != ODSEG_OK) return report(st);
    if (odseg_status st = odseg_server_start(server); st != ODSEG_OK) {
      odseg_server_destroy(server);
      return report(st);
    }
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::printf("listening on http://%s:%d\n", host.c_str(), odseg_server_port(server));
    std::fflush(stdout);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
    odseg_server_stop(server);
    odseg_server_destroy(server);
    return 0;
  }

  if (*hashpw) {
    if (!std::getline(std::cin, password) || password.empty()) {
      std::fprintf(stderr, "error: expected a password on stdin\n");
      return 1;
    }
    char* encoded = nullptr;
    if (odseg_status st = odseg_hash_password(password.c_str(), iterations, &encoded); st != ODSEG_OK) {
      return report(st);
    }
    std::printf("%s\n", encoded);
    odseg_string_free(encoded);
    return 0;
  }
  return 0;
}
