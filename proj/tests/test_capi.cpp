#include <cstring>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "odseg/odseg.h"
#include "test_util.hpp"

TEST_CASE("status names and version") {
  CHECK(std::strlen(odseg_version()) > 0);
  CHECK(std::strcmp(odseg_status_name(ODSEG_OK), "ok") == 0);
  CHECK(std::strcmp(odseg_status_name(ODSEG_ERR_SHAPE), "shape error") == 0);
  CHECK(odseg_hash_string("abc") == odseg_hash_string("abc"));
  CHECK(odseg_hash_string(nullptr) == odseg_hash_string(""));
}

TEST_CASE("null arguments are reported") {
  odseg_model* m = nullptr;
  CHECK(odseg_model_create(32, 32, 0.125, 0, nullptr) == ODSEG_ERR_NULL);
  CHECK(std::strstr(odseg_last_error(), "out") != nullptr);
  CHECK(odseg_model_save(nullptr, "x") == ODSEG_ERR_NULL);
  CHECK(odseg_train(nullptr, nullptr, nullptr, nullptr) == ODSEG_ERR_NULL);
  CHECK(odseg_server_create(nullptr, nullptr) == ODSEG_ERR_NULL);
  CHECK(odseg_model_open_checkpoint(nullptr, &m) == ODSEG_ERR_NULL);
  odseg_model_destroy(nullptr);
  odseg_server_destroy(nullptr);
  odseg_string_free(nullptr);
}

TEST_CASE("errors map onto codes") {
  odseg_model* m = nullptr;
  CHECK(odseg_model_create(48, 48, 0.125, 0, &m) == ODSEG_ERR_SHAPE);
  CHECK(m == nullptr);
  CHECK(std::strlen(odseg_last_error()) > 0);
  CHECK(odseg_model_open_checkpoint("/nonexistent/best.odsw", &m) == ODSEG_ERR_IO);
  CHECK(odseg_synth(1, 32, 0, "/tmp") == ODSEG_ERR_PARAM);
  odseg_train_options o;
  odseg_train_options_init(&o);
  o.manifest = "/nonexistent/manifest.tsv";
  o.out_dir = "/tmp/x";
  o.loss = "dice";
  CHECK(odseg_train(&o, nullptr, nullptr, nullptr) == ODSEG_ERR_PARAM);
}

TEST_CASE("model round trip through the C API") {
  const test::TempDir dir;
  odseg_model *a = nullptr, *b = nullptr;
  REQUIRE(odseg_model_create(32, 32, 0.125, 1, &a) == ODSEG_OK);
  REQUIRE(odseg_model_create(32, 32, 0.125, 2, &b) == ODSEG_OK);
  size_t total = 0, encoder = 0, h = 0, w = 0;
  CHECK(odseg_model_parameter_count(a, &total, &encoder) == ODSEG_OK);
  CHECK(encoder < total);
  CHECK(odseg_model_input_size(a, &h, &w) == ODSEG_OK);
  CHECK(h == 32);

  std::vector<float> img(32 * 32 * 3, 0.4f), pa(32 * 32), pb(32 * 32);
  CHECK(odseg_model_predict(a, img.data(), 1, 32, 32, pa.data()) == ODSEG_OK);
  CHECK(odseg_model_predict(a, img.data(), 1, 64, 64, pa.data()) == ODSEG_ERR_SHAPE);
  const std::string path = (dir.path / "a.odsw").string();
  CHECK(odseg_model_save(a, path.c_str()) == ODSEG_OK);
  size_t loaded = 0, skipped = 9;
  CHECK(odseg_model_load(b, path.c_str(), 1, &loaded, &skipped) == ODSEG_OK);
  CHECK(skipped == 0);
  CHECK(loaded > 0);
  CHECK(odseg_model_predict(b, img.data(), 1, 32, 32, pb.data()) == ODSEG_OK);
  CHECK(pa == pb);

  const std::string enc = (dir.path / "enc.odsw").string();
  CHECK(odseg_model_save_encoder(a, enc.c_str()) == ODSEG_OK);
  odseg_model* wide = nullptr;
  REQUIRE(odseg_model_create(32, 32, 0.25, 0, &wide) == ODSEG_OK);
  CHECK(odseg_model_load(wide, enc.c_str(), 1, nullptr, nullptr) == ODSEG_ERR_SHAPE);
  odseg_model_destroy(wide);
  odseg_model_destroy(a);
  odseg_model_destroy(b);
}

TEST_CASE("gradcheck and log callback") {
  static int messages = 0;
  odseg_set_log_callback([](int, const char*, void*) { ++messages; }, nullptr);
  odseg_gradcheck_options g;
  odseg_gradcheck_options_init(&g);
  g.instances = 5;
  g.include_model = 0;
  char* report = nullptr;
  CHECK(odseg_gradcheck(&g, &report) == ODSEG_OK);
  REQUIRE(report != nullptr);
  CHECK(std::strstr(report, "conv") != nullptr);
  odseg_string_free(report);
  g.corrupt_component = "relu";
  report = nullptr;
  CHECK(odseg_gradcheck(&g, &report) == ODSEG_ERR_GRADCHECK);
  CHECK(std::strstr(report, "FAIL") != nullptr);
  odseg_string_free(report);
  odseg_set_log_callback(nullptr, nullptr);
}

TEST_CASE("train, evaluate and predict through the C API") {
  const test::TempDir dir;
  const std::string data = (dir.path / "data").string(), run = (dir.path / "run").string();
  REQUIRE(odseg_synth(8, 32, 4, data.c_str()) == ODSEG_OK);
  const std::string manifest = data + "/manifest.tsv";
  odseg_train_options o;
  odseg_train_options_init(&o);
  o.manifest = manifest.c_str();
  o.out_dir = run.c_str();
  o.size = 32;
  o.width_multiplier = 0.125;
  o.max_epochs = 2;
  char* canonical = nullptr;
  uint64_t hash = 0;
  CHECK(odseg_train_options_fingerprint(&o, &canonical, &hash) == ODSEG_OK);
  CHECK(std::strstr(canonical, "loss=combined") != nullptr);
  odseg_string_free(canonical);

  static int epochs = 0;
  odseg_train_summary s{};
  REQUIRE(odseg_train(&o, [](size_t, double, double, double, double, void*) { ++epochs; }, nullptr, &s) == ODSEG_OK);
  CHECK(epochs == 2);
  CHECK(s.epochs_run == 2);
  CHECK(s.evaluated);
  CHECK(s.test_count == 2);

  const std::string weights = run + "/best.odsw";
  odseg_eval_summary e{};
  CHECK(odseg_evaluate(weights.c_str(), manifest.c_str(), "test", run.c_str(), &e) == ODSEG_OK);
  CHECK(e.images == 2);
  CHECK(e.pooled.dice == doctest::Approx(s.test_pooled.dice));
  CHECK(std::filesystem::exists(run + "/eval_report.csv"));
  CHECK(odseg_evaluate(weights.c_str(), manifest.c_str(), "sideways", nullptr, nullptr) == ODSEG_ERR_PARAM);

  double seconds = -1;
  const std::string mask = run + "/m.png";
  CHECK(odseg_predict_file(weights.c_str(), (data + "/images/synth_0000.png").c_str(), mask.c_str(), nullptr,
                           &seconds) == ODSEG_OK);
  CHECK(seconds >= 0.0);
  CHECK(odseg_predict_file(weights.c_str(), data.c_str(), mask.c_str(), nullptr, nullptr) == ODSEG_ERR_IO);
}

TEST_CASE("server lifecycle through the C API") {
  const test::TempDir dir;
  std::filesystem::create_directories(dir.path / "images");
  char* hash = nullptr;
  REQUIRE(odseg_hash_password("pw", 1000, &hash) == ODSEG_OK);
  {
    std::FILE* f = std::fopen((dir.path / "users.txt").c_str(), "w");
    std::fprintf(f, "u:%s\n", hash);
    std::fclose(f);
  }
  odseg_string_free(hash);
  const std::string data = dir.path.string(), users = (dir.path / "users.txt").string();
  odseg_server_options o;
  odseg_server_options_init(&o);
  o.data_dir = data.c_str();
  o.users_file = users.c_str();
  o.port = 0;
  odseg_server* s = nullptr;
  REQUIRE(odseg_server_create(&o, &s) == ODSEG_OK);
  REQUIRE(odseg_server_start(s) == ODSEG_OK);
  CHECK(odseg_server_port(s) > 0);
  o.port = odseg_server_port(s);
  odseg_server* t = nullptr;
  REQUIRE(odseg_server_create(&o, &t) == ODSEG_OK);
  CHECK(odseg_server_start(t) == ODSEG_ERR_IO);
  odseg_server_destroy(t);
  odseg_server_stop(s);
  odseg_server_destroy(s);
  o.port = 70000;
  CHECK(odseg_server_create(&o, &s) == ODSEG_ERR_PARAM);
}
