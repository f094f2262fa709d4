#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fairfader/eval.hpp"
#include "fairfader/rng.hpp"
#include "fairfader/serialize.hpp"

using namespace fairfader;
namespace fs = std::filesystem;

namespace {

std::vector<PredictionRecord> synthetic_preds(const std::vector<int64_t>& correct,
                                              const std::vector<int64_t>& total) {
  std::vector<PredictionRecord> out;
  int id = 0;
  for (size_t race = 0; race < total.size(); ++race)
    for (int64_t i = 0; i < total[race]; ++i) {
      const bool ok = i < correct[race];
      out.push_back(PredictionRecord{std::to_string(id++), ok ? 1 : 0, 1, (int)race});
    }
  return out;
}

}  // namespace

TEST_CASE("stratified accuracy: perfect, split, and binomial band") {
  auto perfect = synthetic_preds({10, 10, 10}, {10, 10, 10});
  auto [per_class, overall] = stratified_accuracy(perfect, 3);
  for (double a : per_class) CHECK(a == 100.0);
  CHECK(overall == 100.0);

  auto half = synthetic_preds({10, 0}, {10, 10});
  auto [pc2, ov2] = stratified_accuracy(half, 2);
  CHECK(pc2[0] == 100.0);
  CHECK(pc2[1] == 0.0);
  CHECK(ov2 == 50.0);

  // random predictions on balanced labels: each class lands in [40,60]
  std::mt19937 rng(31);
  std::vector<PredictionRecord> random_preds;
  std::uniform_int_distribution<int> coin(0, 1);
  for (int race = 0; race < 3; ++race)
    for (int i = 0; i < 1000; ++i)
      random_preds.push_back(
          PredictionRecord{std::to_string(race * 1000 + i), coin(rng), coin(rng), race});
  auto [pc3, ov3] = stratified_accuracy(random_preds, 3);
  for (double a : pc3) {
    CHECK(a > 40.0);
    CHECK(a < 60.0);
  }

  try {
    stratified_accuracy(synthetic_preds({5, 5}, {5, 5}), 3);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
  }
}

TEST_CASE("accuracy_variance reproduces the published class-wise variances") {
  CHECK(accuracy_variance({92.41, 91.56, 84.07, 90.93, 88.61}) ==
        doctest::Approx(11.26).epsilon(0.001));
  CHECK(accuracy_variance({89.84, 90.25, 83.64, 92.02, 88.27}) ==
        doctest::Approx(10.11).epsilon(0.001));
  CHECK(accuracy_variance({85.65, 86.08, 80.90, 87.66, 83.86}) ==
        doctest::Approx(6.66).epsilon(0.002));
  CHECK(accuracy_variance({70.0, 70.0, 70.0}) == 0.0);
  CHECK_THROWS_AS(accuracy_variance({50.0}), std::invalid_argument);
}

TEST_CASE("accuracy_variance invariances") {
  const std::vector<double> a = {92.41, 91.56, 84.07, 90.93, 88.61};
  const double base = accuracy_variance(a);

  std::vector<double> permuted = {84.07, 92.41, 88.61, 91.56, 90.93};
  CHECK(accuracy_variance(permuted) == doctest::Approx(base).epsilon(1e-12));

  std::vector<double> shifted;
  for (double v : a) shifted.push_back(v + 3.5);
  CHECK(accuracy_variance(shifted) == doctest::Approx(base).epsilon(1e-9));

  std::vector<double> scaled;
  for (double v : a) scaled.push_back(2.0 * v);
  CHECK(accuracy_variance(scaled) == doctest::Approx(4.0 * base).epsilon(1e-9));
}

TEST_CASE("overall accuracy equals the per-class mean under equal counts") {
  // FaderCNN row: All classes 84.83 is the mean of its class rows
  const std::vector<double> fader = {85.65, 86.08, 80.90, 87.66, 83.86};
  double mean = 0;
  for (double v : fader) mean += v;
  mean /= 5.0;
  CHECK(mean == doctest::Approx(84.83).epsilon(1e-6));

  auto preds = synthetic_preds({100, 70, 40}, {100, 100, 100});
  auto [pc, overall] = stratified_accuracy(preds, 3);
  CHECK(overall == doctest::Approx((pc[0] + pc[1] + pc[2]) / 3.0).epsilon(1e-9));
}

TEST_CASE("discriminator accuracy: hardwired, chance, and untrained bands") {
  ArchSpec spec;
  spec.input_channels = 1;
  spec.input_size = 8;
  spec.depth = 2;
  spec.base_channels = 4;
  spec.num_attrs = 5;
  spec.latent_channels = 8;
  std::mt19937 rng(32);
  auto dis = build_discriminator(spec, rng);

  // hard-wire the head to always produce class 0
  std::fill(dis.fc2_w->values.begin(), dis.fc2_w->values.end(), 0.0f);
  dis.fc2_b->values = {10.0f, 0.0f, 0.0f, 0.0f, 0.0f};

  auto z = uniform<float>({1000, 8, 2, 2}, -1.f, 1.f, rng);
  std::vector<int> zeros_labels(1000, 0);
  CHECK(discriminator_accuracy(dis, z, zeros_labels) == 100.0);

  std::vector<int> uniform_labels(1000);
  for (int i = 0; i < 1000; ++i) uniform_labels[(size_t)i] = i % 5;
  CHECK(discriminator_accuracy(dis, z, uniform_labels) == doctest::Approx(20.0).epsilon(0.01));

  auto fresh = build_discriminator(spec, rng);
  const double acc = discriminator_accuracy(fresh, z, uniform_labels);
  CHECK(acc > 12.0);
  CHECK(acc < 28.0);

  CHECK_THROWS_AS(discriminator_accuracy(fresh, z, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("emit_report writes canonical rounded JSON with raw values") {
  auto dir = fs::temp_directory_path() / "fairfader_eval_report";
  fs::remove_all(dir);
  fs::create_directories(dir);

  EvalReport r;
  r.per_class_accuracy = {85.65, 86.08, 80.90, 87.66, 83.86};
  r.overall_accuracy = 84.83;
  r.variance = accuracy_variance(r.per_class_accuracy);
  r.counts = {474, 474, 474, 474, 474};
  r.model_id = "fader_cnn";
  emit_report(r, dir / "report.json");

  std::ifstream is(dir / "report.json");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"variance\": 6.66") != std::string::npos);

  auto back = load_report(dir / "report.json");
  CHECK(back.variance == r.variance);
  CHECK(back.per_class_accuracy == r.per_class_accuracy);
  CHECK(back.overall_accuracy == r.overall_accuracy);

  emit_report(r, dir / "report2.json");
  CHECK(file_hash_hex(dir / "report.json") == file_hash_hex(dir / "report2.json"));
}

TEST_CASE("prediction CSV round-trips") {
  auto dir = fs::temp_directory_path() / "fairfader_eval_csv";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto preds = synthetic_preds({3, 2}, {4, 3});
  write_predictions_csv(preds, dir / "p.csv");
  auto back = read_predictions_csv(dir / "p.csv");
  REQUIRE(back.size() == preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    CHECK(back[i].source_id == preds[i].source_id);
    CHECK(back[i].predicted_gender == preds[i].predicted_gender);
    CHECK(back[i].true_gender == preds[i].true_gender);
    CHECK(back[i].race == preds[i].race);
  }
}

TEST_CASE("feeding the published accuracies through the report path") {
  // per-class accuracies with two decimals are realized exactly at n=10000
  std::vector<int64_t> correct = {9241, 9156, 8407, 9093, 8861};
  std::vector<int64_t> total(5, 10000);
  auto preds = synthetic_preds(correct, total);
  auto report = make_eval_report(preds, 5, "simple_cnn_fixture");
  CHECK(report.per_class_accuracy[0] == doctest::Approx(92.41).epsilon(1e-9));
  CHECK(report.variance == doctest::Approx(11.26).epsilon(0.001));
}
