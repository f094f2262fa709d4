#include "fairfader/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "fairfader/gradcheck.hpp"
#include "fairfader/rng.hpp"
#include "fairfader/serialize.hpp"

namespace fairfader {

using ordered_json = nlohmann::ordered_json;

namespace {

// Strict object view: every key must be consumed, unknown keys are rejected.
class StrictObj {
 public:
  StrictObj(const ordered_json& j, std::string where) : j_(j), where_(std::move(where)) {
    FF_CHECK_ARG(j_.is_object(), "config: %s must be a JSON object", where_.c_str());
  }
  bool has(const char* key) const { return j_.contains(key); }
  const ordered_json& child(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }
  template <typename T>
  T get(const char* key, T fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail_invalid(strfmt("config: %s.%s has the wrong type", where_.c_str(), key));
    }
  }
  template <typename T>
  T require(const char* key) {
    FF_CHECK_ARG(j_.contains(key), "config: %s is missing required key '%s'", where_.c_str(), key);
    return get<T>(key, T{});
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      FF_CHECK_ARG(used_.count(it.key()), "config: unknown key '%s' in %s", it.key().c_str(),
                   where_.c_str());
  }

 private:
  const ordered_json& j_;
  std::string where_;
  std::set<std::string> used_;
};

TrainConfig parse_train(const ordered_json& j, const std::string& where, uint64_t seed) {
  StrictObj o(j, where);
  TrainConfig tc;
  tc.lambda_e = o.get("lambda_e", tc.lambda_e);
  tc.lambda_warmup_steps = o.get("lambda_warmup_steps", tc.lambda_warmup_steps);
  tc.eta = o.get("eta", tc.eta);
  tc.batch_size = o.get("batch_size", tc.batch_size);
  tc.epochs = o.get("epochs", tc.epochs);
  tc.eval_every = o.get("eval_every", tc.eval_every);
  tc.recon_gate = o.get("recon_gate", tc.recon_gate);
  o.finish();
  tc.seed = seed;
  tc.validate();
  return tc;
}

ordered_json train_json(const TrainConfig& tc) {
  ordered_json j;
  j["lambda_e"] = tc.lambda_e;
  j["lambda_warmup_steps"] = tc.lambda_warmup_steps;
  j["eta"] = tc.eta;
  j["batch_size"] = tc.batch_size;
  j["epochs"] = tc.epochs;
  j["eval_every"] = tc.eval_every;
  j["recon_gate"] = tc.recon_gate;
  return j;
}

void persist_config(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  const std::string text = cfg.canonical_json();
  std::ofstream os(cfg.out_dir / "config.json", std::ios::trunc);
  os << text;
  std::ofstream hs(cfg.out_dir / "config.hash", std::ios::trunc);
  hs << cfg.content_hash() << '\n';
  if (!os || !hs) throw std::runtime_error("failed to persist config under " + cfg.out_dir.string());
}

}  // namespace

void ExperimentConfig::validate() const {
  FF_CHECK_ARG(!out_dir.empty(), "config: out_dir must be set");
  arch.validate();
  train.validate();
  clf_train.validate();
  FF_CHECK_ARG(split.n_test_per_race >= 0, "config: split.n_test_per_race must be >= 0");
  FF_CHECK_ARG(split.val_fraction >= 0.0 && split.val_fraction < 1.0,
               "config: split.val_fraction must lie in [0,1)");
  FF_CHECK_ARG(synth.has_value() != dataset.has_value(),
               "config: exactly one of 'synth' and 'dataset' must be given");
  if (synth) synth->validate();
  if (dataset) FF_CHECK_ARG(dataset->target_size >= 8, "config: dataset.target_size must be >= 8");
}

std::string ExperimentConfig::canonical_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir.string();
  ordered_json a;
  a["input_channels"] = arch.input_channels;
  a["input_size"] = arch.input_size;
  a["depth"] = arch.depth;
  a["base_channels"] = arch.base_channels;
  a["num_attrs"] = arch.num_attrs;
  a["leaky_slope"] = arch.leaky_slope;
  a["dropout_rate"] = arch.dropout_rate;
  a["classifier_stride"] = arch.classifier_stride;
  j["arch"] = a;
  j["train"] = train_json(train);
  j["clf_train"] = train_json(clf_train);
  ordered_json sp;
  sp["n_test_per_race"] = split.n_test_per_race;
  sp["val_fraction"] = split.val_fraction;
  j["split"] = sp;
  if (synth) {
    ordered_json s;
    s["n_samples"] = synth->n_samples;
    s["image_size"] = synth->image_size;
    s["num_classes"] = synth->num_classes;
    s["class_fractions"] = synth->class_fractions;
    s["gender_balance"] = synth->gender_balance;
    s["nuisance_correlation"] = synth->nuisance_correlation;
    s["noise_std"] = synth->noise_std;
    j["synth"] = s;
  }
  if (dataset) {
    ordered_json d;
    d["path"] = dataset->path.string();
    d["target_size"] = dataset->target_size;
    j["dataset"] = d;
  }
  return j.dump(2) + "\n";
}

std::string ExperimentConfig::content_hash() const {
  const std::string text = canonical_json();
  return bytes_hash_hex(text.data(), text.size());
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::optional<uint64_t> seed_override,
                                        std::optional<std::filesystem::path> out_override) {
  std::ifstream is(path);
  if (!is) fail_invalid("config file not found: " + path.string());
  ordered_json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    fail_invalid("config parse failure in " + path.string() + ": " + e.what());
  }

  StrictObj o(j, "config");
  ExperimentConfig cfg;
  cfg.seed = o.get<uint64_t>("seed", 1);
  if (seed_override) cfg.seed = *seed_override;
  cfg.out_dir = o.require<std::string>("out_dir");
  if (out_override) cfg.out_dir = *out_override;

  if (o.has("arch")) {
    StrictObj a(o.child("arch"), "config.arch");
    cfg.arch.input_channels = a.get("input_channels", cfg.arch.input_channels);
    cfg.arch.input_size = a.get("input_size", cfg.arch.input_size);
    cfg.arch.depth = a.get("depth", cfg.arch.depth);
    cfg.arch.base_channels = a.get("base_channels", cfg.arch.base_channels);
    cfg.arch.num_attrs = a.get("num_attrs", cfg.arch.num_attrs);
    cfg.arch.leaky_slope = a.get("leaky_slope", cfg.arch.leaky_slope);
    cfg.arch.dropout_rate = a.get("dropout_rate", cfg.arch.dropout_rate);
    cfg.arch.classifier_stride = a.get("classifier_stride", cfg.arch.classifier_stride);
    a.finish();
    cfg.arch.latent_channels = cfg.arch.base_channels << (cfg.arch.depth - 1);
  }
  if (o.has("train")) cfg.train = parse_train(o.child("train"), "config.train", cfg.seed);
  cfg.train.seed = cfg.seed;
  if (o.has("clf_train"))
    cfg.clf_train = parse_train(o.child("clf_train"), "config.clf_train", cfg.seed);
  cfg.clf_train.seed = cfg.seed;
  if (o.has("split")) {
    StrictObj s(o.child("split"), "config.split");
    cfg.split.n_test_per_race = s.get("n_test_per_race", cfg.split.n_test_per_race);
    cfg.split.val_fraction = s.get("val_fraction", cfg.split.val_fraction);
    s.finish();
  }
  if (o.has("synth")) {
    StrictObj s(o.child("synth"), "config.synth");
    SynthConfig sc;
    sc.n_samples = s.get("n_samples", sc.n_samples);
    sc.image_size = s.get("image_size", sc.image_size);
    sc.num_classes = s.get("num_classes", sc.num_classes);
    sc.class_fractions = s.get("class_fractions", sc.class_fractions);
    sc.gender_balance = s.get("gender_balance", sc.gender_balance);
    sc.nuisance_correlation = s.get("nuisance_correlation", sc.nuisance_correlation);
    sc.noise_std = s.get("noise_std", sc.noise_std);
    s.finish();
    sc.seed = cfg.seed;
    cfg.synth = sc;
  }
  if (o.has("dataset")) {
    StrictObj d(o.child("dataset"), "config.dataset");
    DatasetParams dp;
    dp.path = d.require<std::string>("path");
    dp.target_size = d.get("target_size", dp.target_size);
    d.finish();
    cfg.dataset = dp;
  }
  o.finish();
  cfg.validate();
  return cfg;
}

std::vector<SampleRecord> load_configured_records(const ExperimentConfig& cfg) {
  if (cfg.synth) {
    const auto data_dir = cfg.out_dir / "data";
    if (!std::filesystem::exists(data_dir / "manifest.json"))
      fail_invalid("no generated dataset under " + data_dir.string() + "; run gen-synth first");
    return load_raw_dataset(data_dir).records;
  }
  auto result = load_dataset(cfg.dataset->path, cfg.dataset->target_size);
  if (!result.errors.empty()) {
    std::cerr << result.errors.size() << " dataset item(s) failed to load:\n";
    for (size_t i = 0; i < std::min<size_t>(result.errors.size(), 10); ++i)
      std::cerr << "  " << result.errors[i].file << ": " << result.errors[i].message << '\n';
    if (result.errors.size() > 10) std::cerr << "  ...\n";
  }
  return result.records;
}

DatasetSplit load_or_make_splits(const ExperimentConfig& cfg,
                                 const std::vector<SampleRecord>& records) {
  const auto manifest = cfg.out_dir / "splits.json";
  if (std::filesystem::exists(manifest)) return apply_split_manifest(records, manifest);
  DatasetSplit split = make_splits(records, cfg.split.n_test_per_race, cfg.split.val_fraction,
                                   cfg.seed);
  std::filesystem::create_directories(cfg.out_dir);
  write_split_manifest(split, manifest);
  return split;
}

// ---- checkpoint persistence ----

std::filesystem::path checkpoint_dir(const std::filesystem::path& run_dir, int64_t step) {
  return run_dir / "checkpoints" / strfmt("ckpt_%06lld", (long long)step);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& run_dir) {
  const auto dir = checkpoint_dir(run_dir, ckpt.step);
  std::filesystem::create_directories(dir);
  save_model(ckpt.enc, dir / "enc.ffm");
  save_model(ckpt.dec, dir / "dec.ffm");
  if (ckpt.dis) save_model(*ckpt.dis, dir / "dis.ffm");
  ordered_json j;
  j["step"] = ckpt.step;
  j["val_l_ae"] = ckpt.val_l_ae;
  j["dis_val_accuracy"] = ckpt.record.dis_val_accuracy;
  ordered_json losses;
  losses["l_ae"] = ckpt.record.l_ae;
  losses["l_dis"] = ckpt.record.l_dis;
  losses["l_adv"] = ckpt.record.l_adv;
  losses["l_total"] = ckpt.record.l_total;
  j["losses"] = losses;
  j["config_hash"] = ckpt.config_hash;
  std::ofstream os(dir / "checkpoint.json", std::ios::trunc);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed for checkpoint under " + dir.string());
}

std::vector<CheckpointMeta> list_checkpoints(const std::filesystem::path& run_dir) {
  std::vector<CheckpointMeta> metas;
  const auto root = run_dir / "checkpoints";
  if (!std::filesystem::is_directory(root)) return metas;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const auto file = entry.path() / "checkpoint.json";
    if (!std::filesystem::exists(file)) continue;
    std::ifstream is(file);
    ordered_json j;
    is >> j;
    CheckpointMeta m;
    m.step = j.at("step").get<int64_t>();
    m.val_l_ae = j.at("val_l_ae").get<double>();
    m.dis_val_accuracy = j.at("dis_val_accuracy").get<double>();
    m.record = LossRecord{m.step,
                          j.at("losses").at("l_ae").get<double>(),
                          j.at("losses").at("l_dis").get<double>(),
                          j.at("losses").at("l_adv").get<double>(),
                          j.at("losses").at("l_total").get<double>(),
                          m.dis_val_accuracy};
    m.config_hash = j.at("config_hash").get<std::string>();
    m.dir = entry.path();
    metas.push_back(std::move(m));
  }
  std::sort(metas.begin(), metas.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  return metas;
}

namespace {

Checkpoint load_full_checkpoint(const CheckpointMeta& meta, bool adversarial) {
  Checkpoint c;
  c.step = meta.step;
  c.enc = load_encoder(meta.dir / "enc.ffm");
  c.dec = load_decoder(meta.dir / "dec.ffm");
  if (adversarial) c.dis = load_discriminator(meta.dir / "dis.ffm");
  c.record = meta.record;
  c.val_l_ae = meta.val_l_ae;
  c.config_hash = meta.config_hash;
  return c;
}

size_t select_from_metas(const std::vector<CheckpointMeta>& metas, double recon_gate,
                         bool adversarial) {
  FF_CHECK_ARG(!metas.empty(), "no checkpoints to select from");
  double best_ae = metas[0].val_l_ae;
  for (const auto& m : metas) best_ae = std::min(best_ae, m.val_l_ae);
  const double gate = best_ae * (1.0 + recon_gate);
  size_t sel = metas.size();
  for (size_t i = 0; i < metas.size(); ++i) {
    if (metas[i].val_l_ae > gate) continue;
    if (sel == metas.size()) {
      sel = i;
      continue;
    }
    if (adversarial ? metas[i].dis_val_accuracy < metas[sel].dis_val_accuracy
                    : metas[i].val_l_ae < metas[sel].val_l_ae)
      sel = i;
  }
  return sel;
}

void write_selected(const std::filesystem::path& run_dir, const CheckpointMeta& meta) {
  ordered_json j;
  j["step"] = meta.step;
  j["dir"] = meta.dir.filename().string();
  j["val_l_ae"] = meta.val_l_ae;
  j["dis_val_accuracy"] = meta.dis_val_accuracy;
  j["config_hash"] = meta.config_hash;
  std::ofstream os(run_dir / "selected.json", std::ios::trunc);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed for selected.json");
}

// Shared by train-fader and train-ae: runs (or resumes) training, persists
// checkpoints, the loss CSV, the selection marker, and the selected models
// under stable names.
void run_train_command(const ExperimentConfig& cfg, bool adversarial, bool resume) {
  persist_config(cfg);
  auto records = load_configured_records(cfg);
  auto split = load_or_make_splits(cfg, records);
  const auto run_dir = cfg.out_dir / (adversarial ? "fader" : "ae");
  std::filesystem::create_directories(run_dir);

  TrainResult result;
  std::vector<LossRecord> series;
  auto existing = list_checkpoints(run_dir);
  if (resume && !existing.empty()) {
    const auto& last = existing.back();
    FF_CHECK_ARG(last.config_hash == cfg.train.content_hash(),
                 "resume: existing run used a different train config");
    Checkpoint from = load_full_checkpoint(last, adversarial);
    result = adversarial ? resume_fader(split, cfg.arch, cfg.train, from)
                         : resume_vanilla_ae(split, cfg.arch, cfg.train, from);
    series = read_loss_csv(run_dir / "loss.csv");
    while (!series.empty() && series.back().step > last.step) series.pop_back();
    series.insert(series.end(), result.series.begin(), result.series.end());
  } else {
    result = adversarial ? train_fader(split, cfg.arch, cfg.train)
                         : train_vanilla_ae(split, cfg.arch, cfg.train);
    series = result.series;
  }

  for (const auto& c : result.checkpoints) save_checkpoint(c, run_dir);
  write_loss_csv(series, run_dir / "loss.csv");

  auto metas = list_checkpoints(run_dir);
  const size_t sel = select_from_metas(metas, cfg.train.recon_gate, adversarial);
  write_selected(run_dir, metas[sel]);
  Checkpoint selected = load_full_checkpoint(metas[sel], adversarial);
  save_model(selected.enc, run_dir / "encoder_selected.ffm");
  save_model(selected.dec, run_dir / "decoder_selected.ffm");
  if (selected.dis) save_model(*selected.dis, run_dir / "discriminator_selected.ffm");

  std::cout << (adversarial ? "train-fader" : "train-ae") << ": selected step " << metas[sel].step
            << " val_l_ae=" << metas[sel].val_l_ae;
  if (adversarial) std::cout << " dis_val_accuracy=" << metas[sel].dis_val_accuracy;
  std::cout << '\n';
}

std::string classifier_default_name(const std::filesystem::path& encoder_path, bool weighted) {
  if (weighted) return "simple_cnn_wl";
  const std::string p = encoder_path.string();
  return p.find("fader") != std::string::npos ? "fader_cnn" : "simple_cnn";
}

EvalReport eval_pipeline(EncoderModel& enc, ClassifierModel& clf,
                         const std::vector<SampleRecord>& records, const std::string& model_id,
                         const std::filesystem::path& out_dir) {
  auto latents = encode_all(enc, records);
  std::vector<PredictionRecord> preds;
  const int64_t N = latents.z->shape[0];
  const int64_t chunk = 64;
  const int64_t sample = latents.z->numel() / N;
  for (int64_t at = 0; at < N; at += chunk) {
    const int64_t n = std::min(chunk, N - at);
    auto zb = zeros<float>({n, latents.z->shape[1], latents.z->shape[2], latents.z->shape[3]});
    std::copy(latents.z->data() + at * sample, latents.z->data() + (at + n) * sample, zb->data());
    auto pred = argmax_rows(classify(clf, zb));
    for (int64_t i = 0; i < n; ++i) {
      const auto& rec = records[(size_t)(at + i)];
      preds.push_back(PredictionRecord{rec.source_id, pred[(size_t)i], rec.gender, rec.race});
    }
  }
  EvalReport report = make_eval_report(preds, enc.spec.num_attrs, model_id);
  std::filesystem::create_directories(out_dir);
  write_predictions_csv(preds, out_dir / "predictions.csv");
  emit_report(report, out_dir / "report.json");
  return report;
}

}  // namespace

void cmd_gen_synth(const ExperimentConfig& cfg) {
  FF_CHECK_ARG(cfg.synth.has_value(), "gen-synth needs a 'synth' section in the config");
  persist_config(cfg);
  auto records = gen_synthetic(*cfg.synth);
  write_raw_dataset(records, cfg.out_dir / "data");
  std::cout << "gen-synth: wrote " << records.size() << " samples to "
            << (cfg.out_dir / "data").string() << '\n';
}

void cmd_train_fader(const ExperimentConfig& cfg, bool resume) {
  run_train_command(cfg, true, resume);
}

void cmd_train_ae(const ExperimentConfig& cfg, bool resume) {
  run_train_command(cfg, false, resume);
}

void cmd_train_clf(const ExperimentConfig& cfg, const std::filesystem::path& encoder_path,
                   bool weighted, const std::string& model_name) {
  FF_CHECK_ARG(std::filesystem::exists(encoder_path), "encoder checkpoint not found: %s",
               encoder_path.string().c_str());
  persist_config(cfg);
  EncoderModel enc = load_encoder(encoder_path);
  auto records = load_configured_records(cfg);
  auto split = load_or_make_splits(cfg, records);

  std::optional<std::vector<double>> weights;
  if (weighted) {
    weights = class_weights(race_fractions(split.train, enc.spec.num_attrs));
    std::cout << "train-clf: inverse-frequency class weights:";
    for (double w : *weights) std::cout << ' ' << w;
    std::cout << '\n';
  }

  auto latents = encode_all(enc, split.train);
  ClassifierModel clf =
      train_classifier(latents, enc.spec, cfg.clf_train, weights ? &*weights : nullptr);

  const std::string name =
      model_name.empty() ? classifier_default_name(encoder_path, weighted) : model_name;
  const auto model_path = cfg.out_dir / (name + ".ffm");
  save_model(clf, model_path);

  // train-split accuracy for the metrics record
  auto probs = classify(clf, latents.z);
  auto pred = argmax_rows(probs);
  int64_t correct = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == latents.gender[i]) correct++;
  ordered_json j;
  j["model"] = name;
  j["encoder"] = encoder_path.string();
  j["weighted"] = weighted;
  if (weights) j["class_weights"] = *weights;
  j["train_accuracy"] = 100.0 * (double)correct / (double)pred.size();
  j["config_hash"] = cfg.content_hash();
  std::ofstream os(cfg.out_dir / (name + ".json"), std::ios::trunc);
  os << j.dump(2) << '\n';
  std::cout << "train-clf: wrote " << model_path.string() << " train_accuracy="
            << j["train_accuracy"].get<double>() << '\n';
}

void cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& classifier_path,
              const std::filesystem::path& encoder_path, const std::string& split_name) {
  FF_CHECK_ARG(std::filesystem::exists(classifier_path), "classifier model not found: %s",
               classifier_path.string().c_str());
  FF_CHECK_ARG(std::filesystem::exists(encoder_path), "encoder checkpoint not found: %s",
               encoder_path.string().c_str());
  persist_config(cfg);
  EncoderModel enc = load_encoder(encoder_path);
  ClassifierModel clf = load_classifier(classifier_path);
  if (enc.spec.latent_channels != clf.spec.latent_channels ||
      enc.spec.latent_extent() != clf.spec.latent_extent())
    fail_invalid("eval: encoder and classifier latent shapes do not match\nencoder:\n" +
                 enc.spec.canonical_text("encoder", 0) + "classifier:\n" +
                 clf.spec.canonical_text("classifier", 0));

  auto records = load_configured_records(cfg);
  auto split = load_or_make_splits(cfg, records);
  const std::vector<SampleRecord>* chosen = nullptr;
  if (split_name == "test")
    chosen = &split.test;
  else if (split_name == "validation")
    chosen = &split.validation;
  else if (split_name == "train")
    chosen = &split.train;
  else
    fail_invalid("eval: unknown split '" + split_name + "' (train|validation|test)");
  FF_CHECK_ARG(!chosen->empty(), "eval: split '%s' is empty", split_name.c_str());

  const std::string model_id = classifier_path.stem().string();
  const auto out_dir = cfg.out_dir / ("eval_" + model_id + "_" + split_name);
  EvalReport report = eval_pipeline(enc, clf, *chosen, model_id, out_dir);
  std::cout << "eval " << model_id << " on " << split_name << ": overall="
            << report.overall_accuracy << " variance=" << report.variance << " per-class=[";
  for (size_t k = 0; k < report.per_class_accuracy.size(); ++k)
    std::cout << (k ? " " : "") << report.per_class_accuracy[k];
  std::cout << "]\n";
}

void cmd_grad_check(uint64_t seed, int instances) {
  auto results = run_gradcheck_suite(seed, instances);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-36s max_rel_err=%.3e tol=%.0e instances=%d %s\n", r.op.c_str(), r.max_rel_err,
                r.tol, r.instances, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) throw std::runtime_error("grad-check: at least one kernel failed");
}

void cmd_run_experiment(const ExperimentConfig& cfg) {
  if (cfg.synth && !std::filesystem::exists(cfg.out_dir / "data" / "manifest.json"))
    cmd_gen_synth(cfg);
  cmd_train_fader(cfg);
  cmd_train_ae(cfg);

  const auto fader_enc_path = cfg.out_dir / "fader" / "encoder_selected.ffm";
  const auto ae_enc_path = cfg.out_dir / "ae" / "encoder_selected.ffm";
  cmd_train_clf(cfg, fader_enc_path, false, "fader_cnn");
  cmd_train_clf(cfg, ae_enc_path, false, "simple_cnn");
  cmd_train_clf(cfg, ae_enc_path, true, "simple_cnn_wl");

  cmd_eval(cfg, cfg.out_dir / "fader_cnn.ffm", fader_enc_path, "test");
  cmd_eval(cfg, cfg.out_dir / "simple_cnn.ffm", ae_enc_path, "test");
  cmd_eval(cfg, cfg.out_dir / "simple_cnn_wl.ffm", ae_enc_path, "test");

  // Probe: how much race information the vanilla-AE latent space retains.
  auto records = load_configured_records(cfg);
  auto split = load_or_make_splits(cfg, records);
  EncoderModel ae_enc = load_encoder(ae_enc_path);
  auto train_latents = encode_all(ae_enc, split.train);
  auto weights = class_weights(race_fractions(split.train, cfg.arch.num_attrs));
  DiscriminatorModel probe =
      train_probe_discriminator(train_latents, cfg.arch, cfg.clf_train, &weights);
  auto val_latents = encode_all(ae_enc, split.validation);
  const double probe_acc =
      discriminator_balanced_accuracy(probe, val_latents.z, val_latents.race, cfg.arch.num_attrs);

  ordered_json summary;
  summary["config_hash"] = cfg.content_hash();
  {
    std::ifstream is(cfg.out_dir / "fader" / "selected.json");
    ordered_json sel;
    is >> sel;
    summary["fader_selected"] = sel;
  }
  summary["probe_dis_balanced_accuracy_val"] = probe_acc;
  ordered_json variances;
  for (const char* name : {"fader_cnn", "simple_cnn", "simple_cnn_wl"}) {
    EvalReport r = load_report(cfg.out_dir / (std::string("eval_") + name + "_test") / "report.json");
    variances[name] = r.variance;
  }
  summary["test_variances"] = variances;
  std::ofstream os(cfg.out_dir / "summary.json", std::ios::trunc);
  os << summary.dump(2) << '\n';
  std::cout << "run-experiment: probe_dis=" << probe_acc << " variances fader_cnn="
            << variances["fader_cnn"].get<double>()
            << " simple_cnn=" << variances["simple_cnn"].get<double>()
            << " simple_cnn_wl=" << variances["simple_cnn_wl"].get<double>() << '\n';
}

}  // namespace fairfader
