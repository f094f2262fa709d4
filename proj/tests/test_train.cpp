#include <doctest.h>

#include <cmath>

#include "fairfader/data.hpp"
#include "fairfader/eval.hpp"
#include "fairfader/rng.hpp"
#include "fairfader/train.hpp"

using namespace fairfader;

namespace {

ArchSpec tiny_spec(int num_attrs = 3) {
  ArchSpec s;
  s.input_channels = 1;
  s.input_size = 8;
  s.depth = 2;
  s.base_channels = 4;
  s.num_attrs = num_attrs;
  s.latent_channels = 8;
  return s;
}

DatasetSplit tiny_dataset(uint64_t seed, int n = 160, int num_classes = 3) {
  SynthConfig cfg;
  cfg.n_samples = n;
  cfg.image_size = 8;
  cfg.num_classes = num_classes;
  cfg.class_fractions.assign((size_t)num_classes, 1.0 / num_classes);
  cfg.nuisance_correlation = 0.0;
  cfg.noise_std = 0.05;
  cfg.seed = seed;
  auto records = gen_synthetic(cfg);
  return make_splits(records, 4, 0.15, seed);
}

template <typename M>
std::vector<std::vector<float>> snap(const M& m) {
  std::vector<std::vector<float>> out;
  for (const auto& nt : named_tensors(m)) out.push_back(nt.values);
  return out;
}

Batch fixed_batch(const DatasetSplit& data, size_t n) {
  std::vector<size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), (size_t)0);
  return make_batch(data.train, order, 0, n);
}

}  // namespace

TEST_CASE("class_weights: uniform, paper fractions, symmetry, errors") {
  auto uniform5 = class_weights({0.2, 0.2, 0.2, 0.2, 0.2});
  for (double w : uniform5) CHECK(w == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<double> paper = {0.88, 0.04, 0.035, 0.03, 0.015};
  auto w = class_weights(paper);
  // independent brute-force arithmetic
  double mean_inv = 0;
  for (double f : paper) mean_inv += 1.0 / f;
  mean_inv /= 5.0;
  for (size_t k = 0; k < 5; ++k)
    CHECK(w[k] == doctest::Approx((1.0 / paper[k]) / mean_inv).epsilon(1e-9));
  double mean = 0;
  for (double v : w) mean += v;
  CHECK(std::abs(mean / 5.0 - 1.0) < 1e-9);
  // inverse ordering: the rarest class carries the largest weight
  CHECK(w[4] > w[1]);
  CHECK(w[1] > w[0]);

  CHECK(class_weights({0.5, 0.5}) == std::vector<double>{1.0, 1.0});

  CHECK_THROWS_AS(class_weights({1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(class_weights({0.5, 0.4}), std::invalid_argument);

  // permutation equivariance
  auto wp = class_weights({0.04, 0.88, 0.015, 0.03, 0.035});
  CHECK(wp[0] == doctest::Approx(w[1]).epsilon(1e-12));
  CHECK(wp[1] == doctest::Approx(w[0]).epsilon(1e-12));
  CHECK(wp[2] == doctest::Approx(w[4]).epsilon(1e-12));
}

TEST_CASE("lambda schedule is continuous, nondecreasing, exact at warmup") {
  TrainConfig cfg;
  cfg.lambda_e = 0.5;
  cfg.lambda_warmup_steps = 40;
  double prev = -1;
  for (int64_t t = 0; t <= 100; ++t) {
    const double lam = cfg.lambda_at(t, 100);
    CHECK(lam >= prev);
    CHECK(lam <= 0.5 + 1e-12);
    prev = lam;
  }
  CHECK(cfg.lambda_at(0, 100) == 0.0);
  CHECK(cfg.lambda_at(40, 100) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cfg.lambda_at(100, 100) == doctest::Approx(0.5).epsilon(1e-12));

  TrainConfig dflt;
  dflt.lambda_e = 1.0;
  CHECK(dflt.lambda_at(20, 100) == doctest::Approx(1.0));  // 20% default warmup
}

TEST_CASE("dis_step trains only the discriminator") {
  auto data = tiny_dataset(31);
  auto spec = tiny_spec();
  auto enc_rng = sub_rng(1, "enc");
  auto dec_rng = sub_rng(1, "dec");
  auto dis_rng = sub_rng(1, "dis");
  auto enc = build_encoder(spec, enc_rng);
  auto dec = build_decoder(spec, dec_rng, true);
  auto dis = build_discriminator(spec, dis_rng);
  Batch batch = fixed_batch(data, 8);

  const auto enc_before = snap(enc);
  const auto dec_before = snap(dec);
  dis_step(enc, dis, batch, 0.01);
  CHECK(snap(enc) == enc_before);
  CHECK(snap(dec) == dec_before);

  const auto dis_before = snap(dis);
  dis_step(enc, dis, batch, 0.0);
  // eta 0 leaves parameters untouched; batchnorm running stats still move
  auto dis_after = snap(dis);
  auto names = named_tensors(dis);
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i].name.find("running") != std::string::npos) continue;
    CHECK(dis_after[i] == dis_before[i]);
  }
}

TEST_CASE("repeated dis steps on a fixed batch beat chance") {
  auto data = tiny_dataset(32);
  auto spec = tiny_spec();
  auto enc_rng = sub_rng(2, "enc");
  auto dis_rng = sub_rng(2, "dis");
  auto enc = build_encoder(spec, enc_rng);
  auto dis = build_discriminator(spec, dis_rng);
  Batch batch = fixed_batch(data, 12);
  double loss = 0;
  for (int i = 0; i < 200; ++i) loss = dis_step(enc, dis, batch, 0.02);
  CHECK(loss < -std::log(1.0 / 3.0));  // chance for K=3
}

TEST_CASE("encdec_step freezes the discriminator and reduces to an AE step at lambda 0") {
  auto data = tiny_dataset(33);
  auto spec = tiny_spec();
  auto enc_rng = sub_rng(3, "enc");
  auto dec_rng = sub_rng(3, "dec");
  auto dis_rng = sub_rng(3, "dis");
  auto enc = build_encoder(spec, enc_rng);
  auto dec = build_decoder(spec, dec_rng, true);
  auto dis = build_discriminator(spec, dis_rng);
  Batch batch = fixed_batch(data, 8);

  // lambda > 0: theta_dis bit-identical before/after
  auto enc2 = deep_copy(enc);
  auto dec2 = deep_copy(dec);
  const auto dis_before = snap(dis);
  encdec_step(enc2, dec2, &dis, batch, 0.01, 0.5);
  CHECK(snap(dis) == dis_before);

  // lambda = 0: update equals the no-discriminator autoencoder step
  auto enc_a = deep_copy(enc);
  auto dec_a = deep_copy(dec);
  auto enc_b = deep_copy(enc);
  auto dec_b = deep_copy(dec);
  auto l_a = encdec_step(enc_a, dec_a, &dis, batch, 0.01, 0.0);
  auto l_b = encdec_step(enc_b, dec_b, nullptr, batch, 0.01, 0.0);
  CHECK(l_a.l_ae == l_b.l_ae);
  CHECK(snap(enc_a) == snap(enc_b));
  CHECK(snap(dec_a) == snap(dec_b));
}

TEST_CASE("overfitting one batch drives reconstruction loss down by 90 percent") {
  auto data = tiny_dataset(34);
  auto spec = tiny_spec();
  auto enc_rng = sub_rng(4, "enc");
  auto dec_rng = sub_rng(4, "dec");
  auto enc = build_encoder(spec, enc_rng);
  auto dec = build_decoder(spec, dec_rng, true);
  Batch batch = fixed_batch(data, 8);
  double first = 0, last = 0;
  for (int i = 0; i < 500; ++i) {
    auto l = encdec_step(enc, dec, nullptr, batch, 0.02, 0.0);
    if (i == 0) first = l.l_ae;
    last = l.l_ae;
  }
  CHECK(last <= 0.1 * first);
}

TEST_CASE("train_fader is deterministic and its lambda-0 runs match the vanilla AE") {
  auto data = tiny_dataset(35);
  auto spec = tiny_spec();
  TrainConfig cfg;
  cfg.lambda_e = 0.0;
  cfg.eta = 0.01;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.seed = 77;
  cfg.eval_every = 8;

  auto fader1 = train_fader(data, spec, cfg);
  auto fader2 = train_fader(data, spec, cfg);
  REQUIRE(fader1.series.size() == fader2.series.size());
  for (size_t i = 0; i < fader1.series.size(); ++i) {
    CHECK(fader1.series[i].l_ae == fader2.series[i].l_ae);
    CHECK(fader1.series[i].l_dis == fader2.series[i].l_dis);
    CHECK(fader1.series[i].l_total == fader2.series[i].l_total);
  }

  auto ae = train_vanilla_ae(data, spec, cfg);
  REQUIRE(ae.series.size() == fader1.series.size());
  for (size_t i = 0; i < ae.series.size(); ++i)
    CHECK(ae.series[i].l_ae == fader1.series[i].l_ae);

  // identical encoder/decoder parameter trajectories, buffers included
  const auto& fader_last = fader1.checkpoints.back();
  const auto& ae_last = ae.checkpoints.back();
  CHECK(snap(fader_last.enc) == snap(ae_last.enc));
  CHECK(snap(fader_last.dec) == snap(ae_last.dec));
}

TEST_CASE("vanilla AE decoder takes no attribute planes and its loss trends down") {
  auto data = tiny_dataset(36, 240);
  auto spec = tiny_spec();
  TrainConfig cfg;
  cfg.eta = 0.02;
  cfg.batch_size = 8;
  cfg.epochs = 4;
  cfg.seed = 5;
  cfg.eval_every = 20;
  auto result = train_vanilla_ae(data, spec, cfg);
  CHECK(result.checkpoints.back().dec.attr_planes == 0);
  CHECK(result.checkpoints.back().dec.blocks[0].w->shape[0] == spec.latent_channels);

  // 20-step moving average of the loss declines over the run
  const auto& s = result.series;
  REQUIRE(s.size() >= 40);
  auto window = [&](size_t start) {
    double acc = 0;
    for (size_t i = start; i < start + 20; ++i) acc += s[i].l_ae;
    return acc / 20.0;
  };
  double prev = window(0);
  for (size_t start = 20; start + 20 <= s.size(); start += 20) {
    const double cur = window(start);
    CHECK(cur <= prev + 1e-3);
    prev = cur;
  }
}

TEST_CASE("checkpoint selection obeys the gate-then-minimum rule") {
  auto data = tiny_dataset(37);
  auto spec = tiny_spec();
  TrainConfig cfg;
  cfg.lambda_e = 0.05;
  cfg.eta = 0.01;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.seed = 9;
  cfg.eval_every = 6;
  auto result = train_fader(data, spec, cfg);
  REQUIRE(result.selected < result.checkpoints.size());
  double best_ae = result.checkpoints[0].val_l_ae;
  for (const auto& c : result.checkpoints) best_ae = std::min(best_ae, c.val_l_ae);
  const auto& sel = result.checkpoints[result.selected];
  CHECK(sel.val_l_ae <= best_ae * 1.25 + 1e-12);
  for (size_t i = result.selected + 1; i < result.checkpoints.size(); ++i) {
    const auto& c = result.checkpoints[i];
    if (c.val_l_ae <= best_ae * 1.25)
      CHECK(sel.record.dis_val_accuracy <= c.record.dis_val_accuracy + 1e-9);
  }
}

TEST_CASE("classifier training: weight-of-one reduction and frozen encoder") {
  auto data = tiny_dataset(38, 240);
  auto spec = tiny_spec();
  auto enc_rng = sub_rng(6, "enc");
  auto enc = build_encoder(spec, enc_rng);
  const auto enc_before = snap(enc);
  auto latents = encode_all(enc, data.train);
  CHECK(snap(enc) == enc_before);

  TrainConfig cfg;
  cfg.eta = 0.02;
  cfg.batch_size = 16;
  cfg.epochs = 2;
  cfg.seed = 10;
  const std::vector<double> ones(spec.num_attrs, 1.0);
  auto clf_w = train_classifier(latents, spec, cfg, &ones);
  auto clf_u = train_classifier(latents, spec, cfg, nullptr);
  CHECK(snap(clf_w) == snap(clf_u));

  const std::vector<double> short_w = {1.0, 2.0};
  CHECK_THROWS_AS(train_classifier(latents, spec, cfg, &short_w), std::invalid_argument);
}

TEST_CASE("classifier separates linearly separable toy latents") {
  // channel 0 carries the label sign, everything else is noise
  std::mt19937 rng(40);
  const int64_t n = 64;
  auto spec = tiny_spec();
  LatentSet data;
  data.z = uniform<float>({n, 8, 2, 2}, -0.2f, 0.2f, rng);
  for (int64_t i = 0; i < n; ++i) {
    const int label = (int)(i % 2);
    data.gender.push_back(label);
    data.race.push_back((int)(i % 3));
    for (int64_t j = 0; j < 4; ++j)
      data.z->values[(size_t)(i * 32 + j)] = label ? 1.0f : -1.0f;
  }
  TrainConfig cfg;
  cfg.eta = 0.05;
  cfg.batch_size = 16;
  cfg.epochs = 125;  // 4 steps per epoch -> 500 steps
  cfg.seed = 11;
  auto clf = train_classifier(data, spec, cfg);
  auto pred = argmax_rows(classify(clf, data.z));
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i)
    if (pred[(size_t)i] == data.gender[(size_t)i]) correct++;
  CHECK((double)correct / (double)n >= 0.99);
}

TEST_CASE("loss CSV round-trips") {
  std::vector<LossRecord> series = {{1, 0.5, 1.2, 1.6, 0.5002, 20.0},
                                    {2, 0.45, 1.1, 1.59, 0.4503, 20.0}};
  auto path = std::filesystem::temp_directory_path() / "fairfader_loss_test.csv";
  write_loss_csv(series, path);
  auto back = read_loss_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].step == 1);
  CHECK(back[1].l_ae == doctest::Approx(0.45).epsilon(1e-9));
}
