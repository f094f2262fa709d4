#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fairfader/experiment.hpp"
#include "fairfader/serialize.hpp"

using namespace fairfader;
namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

fs::path temp_dir(const char* tag) {
  auto dir = fs::temp_directory_path() / (std::string("fairfader_cli_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ordered_json tiny_config_json(const fs::path& out_dir) {
  ordered_json j;
  j["seed"] = 5;
  j["out_dir"] = out_dir.string();
  j["arch"] = {{"input_channels", 1}, {"input_size", 8},      {"depth", 2},
               {"base_channels", 4},  {"num_attrs", 5},       {"leaky_slope", 0.2},
               {"dropout_rate", 0.3}, {"classifier_stride", 1}};
  j["train"] = {{"lambda_e", 0.05}, {"lambda_warmup_steps", 10}, {"eta", 0.01},
                {"batch_size", 8},  {"epochs", 2},               {"eval_every", 10}};
  j["clf_train"] = {{"eta", 0.02}, {"batch_size", 8}, {"epochs", 2}};
  j["split"] = {{"n_test_per_race", 4}, {"val_fraction", 0.15}};
  j["synth"] = {{"n_samples", 300},
                {"image_size", 8},
                {"num_classes", 5},
                {"class_fractions", {0.4, 0.2, 0.2, 0.1, 0.1}},
                {"gender_balance", 0.5},
                {"nuisance_correlation", 0.3},
                {"noise_std", 0.02}};
  return j;
}

fs::path write_config(const fs::path& dir, const ordered_json& j) {
  const auto path = dir / "config.json";
  std::ofstream os(path);
  os << j.dump(2);
  return path;
}

}  // namespace

TEST_CASE("config loading is strict about unknown keys") {
  auto dir = temp_dir("strict");
  auto j = tiny_config_json(dir / "out");
  j["trian"] = ordered_json::object();  // typo must be rejected
  auto path = write_config(dir, j);
  try {
    load_experiment_config(path);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("trian") != std::string::npos);
  }

  auto j2 = tiny_config_json(dir / "out");
  j2["arch"]["depht"] = 3;
  CHECK_THROWS_AS(load_experiment_config(write_config(dir, j2)), std::invalid_argument);

  auto j3 = tiny_config_json(dir / "out");
  CHECK_NOTHROW(load_experiment_config(write_config(dir, j3)));
}

TEST_CASE("config requires exactly one data source") {
  auto dir = temp_dir("source");
  auto j = tiny_config_json(dir / "out");
  j.erase("synth");
  CHECK_THROWS_AS(load_experiment_config(write_config(dir, j)), std::invalid_argument);

  auto j2 = tiny_config_json(dir / "out");
  j2["dataset"] = {{"path", (dir / "imgs").string()}, {"target_size", 8}};
  CHECK_THROWS_AS(load_experiment_config(write_config(dir, j2)), std::invalid_argument);
}

TEST_CASE("gen-synth writes a dataset and reruns identically") {
  auto dir = temp_dir("gen");
  auto cfg = load_experiment_config(write_config(dir, tiny_config_json(dir / "out")));
  cmd_gen_synth(cfg);
  const auto manifest = cfg.out_dir / "data" / "manifest.json";
  REQUIRE(fs::exists(manifest));
  const auto h1 = file_hash_hex(manifest);
  const auto raws = cfg.out_dir / "data";
  size_t n_raw = 0;
  for (const auto& e : fs::directory_iterator(raws))
    if (e.path().extension() == ".raw") n_raw++;
  CHECK(n_raw == 300);

  cmd_gen_synth(cfg);
  CHECK(file_hash_hex(manifest) == h1);
}

TEST_CASE("gen-synth rejects invalid fractions before any work") {
  auto dir = temp_dir("gen_bad");
  auto j = tiny_config_json(dir / "out");
  j["synth"]["class_fractions"] = {0.9, 0.2, 0.1, 0.1, 0.1};
  try {
    load_experiment_config(write_config(dir, j));
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("class_fractions") != std::string::npos);
  }
}

TEST_CASE("train commands write artifacts; lambda-0 fader matches the AE loss column") {
  auto dir = temp_dir("train");
  auto j = tiny_config_json(dir / "out");
  j["train"]["lambda_e"] = 0.0;
  auto cfg = load_experiment_config(write_config(dir, j));
  cmd_gen_synth(cfg);
  cmd_train_fader(cfg);
  cmd_train_ae(cfg);

  REQUIRE(fs::exists(cfg.out_dir / "fader" / "loss.csv"));
  REQUIRE(fs::exists(cfg.out_dir / "fader" / "selected.json"));
  REQUIRE(fs::exists(cfg.out_dir / "fader" / "encoder_selected.ffm"));
  REQUIRE(fs::exists(cfg.out_dir / "ae" / "loss.csv"));

  auto fader_series = read_loss_csv(cfg.out_dir / "fader" / "loss.csv");
  auto ae_series = read_loss_csv(cfg.out_dir / "ae" / "loss.csv");
  REQUIRE(fader_series.size() == ae_series.size());
  for (size_t i = 0; i < fader_series.size(); ++i) {
    CHECK(fader_series[i].step == ae_series[i].step);
    CHECK(fader_series[i].l_ae == ae_series[i].l_ae);
  }

  // checkpoints carry the dis_val_accuracy the selection used
  std::ifstream sel(cfg.out_dir / "fader" / "selected.json");
  ordered_json sj;
  sel >> sj;
  CHECK(sj.contains("dis_val_accuracy"));
  CHECK(sj.at("step").get<int64_t>() >= 0);
}

TEST_CASE("resume continues the loss CSV without step gaps") {
  auto dir = temp_dir("resume");
  auto cfg = load_experiment_config(write_config(dir, tiny_config_json(dir / "out")));
  cmd_gen_synth(cfg);
  cmd_train_fader(cfg);
  const auto run_dir = cfg.out_dir / "fader";
  auto full_series = read_loss_csv(run_dir / "loss.csv");
  const auto full_hash = file_hash_hex(run_dir / "loss.csv");

  // simulate an interrupted run: keep only checkpoints at steps <= 10 and
  // truncate the CSV to match
  auto metas = list_checkpoints(run_dir);
  REQUIRE(metas.size() >= 3);
  for (const auto& m : metas)
    if (m.step > 10) fs::remove_all(m.dir);
  std::vector<LossRecord> head;
  for (const auto& r : full_series)
    if (r.step <= 10) head.push_back(r);
  write_loss_csv(head, run_dir / "loss.csv");
  fs::remove(run_dir / "selected.json");

  cmd_train_fader(cfg, /*resume=*/true);
  auto resumed = read_loss_csv(run_dir / "loss.csv");
  REQUIRE(resumed.size() == full_series.size());
  for (size_t i = 0; i < resumed.size(); ++i) {
    CHECK(resumed[i].step == (int64_t)i + 1);
    CHECK(resumed[i].l_ae == full_series[i].l_ae);
  }
  CHECK(file_hash_hex(run_dir / "loss.csv") == full_hash);
  CHECK(fs::exists(run_dir / "selected.json"));
}

TEST_CASE("classifier training and evaluation round-trip with determinism") {
  auto dir = temp_dir("clf_eval");
  auto cfg = load_experiment_config(write_config(dir, tiny_config_json(dir / "out")));
  cmd_gen_synth(cfg);
  cmd_train_fader(cfg);
  cmd_train_ae(cfg);

  const auto fader_enc = cfg.out_dir / "fader" / "encoder_selected.ffm";
  const auto ae_enc = cfg.out_dir / "ae" / "encoder_selected.ffm";
  cmd_train_clf(cfg, fader_enc, false, "fader_cnn");
  cmd_train_clf(cfg, ae_enc, false, "simple_cnn");
  cmd_train_clf(cfg, ae_enc, true, "simple_cnn_wl");
  REQUIRE(fs::exists(cfg.out_dir / "fader_cnn.ffm"));
  REQUIRE(fs::exists(cfg.out_dir / "simple_cnn_wl.ffm"));

  // model file round-trips through load
  auto clf = load_classifier(cfg.out_dir / "fader_cnn.ffm");
  CHECK(param_count(clf) > 0);

  cmd_eval(cfg, cfg.out_dir / "fader_cnn.ffm", fader_enc, "test");
  const auto report_path = cfg.out_dir / "eval_fader_cnn_test" / "report.json";
  REQUIRE(fs::exists(report_path));
  auto report = load_report(report_path);

  // balanced test split: overall equals the mean of per-class accuracies
  double mean = 0;
  for (double a : report.per_class_accuracy) mean += a;
  mean /= (double)report.per_class_accuracy.size();
  CHECK(report.overall_accuracy == doctest::Approx(mean).epsilon(1e-9));

  // rerun is byte-identical
  const auto h1 = file_hash_hex(report_path);
  cmd_eval(cfg, cfg.out_dir / "fader_cnn.ffm", fader_enc, "test");
  CHECK(file_hash_hex(report_path) == h1);

  // missing encoder and shape mismatch are configuration errors
  CHECK_THROWS_AS(cmd_train_clf(cfg, cfg.out_dir / "nope.ffm", false, ""), std::invalid_argument);
  try {
    cmd_eval(cfg, fader_enc, fader_enc, "test");  // an encoder is not a classifier
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument&) {
  }
}

TEST_CASE("weighted flag logs weights and uniform data keeps them near one") {
  auto dir = temp_dir("weighted");
  auto j = tiny_config_json(dir / "out");
  j["synth"]["class_fractions"] = {0.2, 0.2, 0.2, 0.2, 0.2};
  auto cfg = load_experiment_config(write_config(dir, j));
  cmd_gen_synth(cfg);
  cmd_train_ae(cfg);
  cmd_train_clf(cfg, cfg.out_dir / "ae" / "encoder_selected.ffm", true, "wl");
  std::ifstream is(cfg.out_dir / "wl.json");
  ordered_json mj;
  is >> mj;
  REQUIRE(mj.contains("class_weights"));
  for (const auto& w : mj["class_weights"]) {
    CHECK(w.get<double>() > 0.7);
    CHECK(w.get<double>() < 1.4);
  }
}
