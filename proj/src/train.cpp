#include "fairfader/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fairfader/eval.hpp"
#include "fairfader/rng.hpp"
#include "fairfader/serialize.hpp"

namespace fairfader {

namespace {

// Temporarily drops requires_grad so backward flows through a network
// without accumulating into its parameters.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<TensorPtr> params) : params_(std::move(params)) {
    saved_.reserve(params_.size());
    for (auto& p : params_) {
      saved_.push_back(p->requires_grad);
      p->requires_grad = false;
    }
  }
  ~FreezeGuard() {
    for (size_t i = 0; i < params_.size(); ++i) params_[i]->requires_grad = saved_[i];
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<TensorPtr> params_;
  std::vector<bool> saved_;
};

std::vector<TensorPtr> enc_dec_params(EncoderModel& enc, DecoderModel& dec) {
  auto ps = params(enc);
  auto pd = params(dec);
  ps.insert(ps.end(), pd.begin(), pd.end());
  return ps;
}

}  // namespace

void TrainConfig::validate() const {
  FF_CHECK_ARG(lambda_e >= 0.0, "train config: lambda_e must be >= 0, got %g", lambda_e);
  FF_CHECK_ARG(eta > 0.0, "train config: eta must be > 0, got %g", eta);
  FF_CHECK_ARG(batch_size >= 2, "train config: batch_size must be >= 2, got %d", batch_size);
  FF_CHECK_ARG(epochs >= 1, "train config: epochs must be >= 1, got %d", epochs);
  FF_CHECK_ARG(eval_every >= 1, "train config: eval_every must be >= 1, got %lld",
               (long long)eval_every);
  FF_CHECK_ARG(recon_gate >= 0.0, "train config: recon_gate must be >= 0, got %g", recon_gate);
}

int64_t TrainConfig::warmup_steps(int64_t total_steps) const {
  if (lambda_warmup_steps >= 0) return lambda_warmup_steps;
  return std::max<int64_t>(1, total_steps / 5);
}

double TrainConfig::lambda_at(int64_t step, int64_t total_steps) const {
  const int64_t w = warmup_steps(total_steps);
  if (w == 0) return lambda_e;
  return lambda_e * std::min(1.0, (double)step / (double)w);
}

std::string TrainConfig::content_hash() const {
  std::ostringstream os;
  os << lambda_e << '|' << lambda_warmup_steps << '|' << eta << '|' << batch_size << '|' << epochs
     << '|' << seed << '|' << eval_every << '|' << recon_gate;
  const std::string s = os.str();
  return bytes_hash_hex(s.data(), s.size());
}

Batch make_batch(const std::vector<SampleRecord>& records, const std::vector<size_t>& order,
                 size_t begin, size_t end) {
  FF_CHECK_ARG(begin < end && end <= order.size(), "make_batch: empty or out-of-range batch");
  const auto& first = *records.at(order[begin]).image;
  const int64_t sample = first.numel();
  Batch b;
  b.x = zeros<float>({(int64_t)(end - begin), first.shape[0], first.shape[1], first.shape[2]});
  for (size_t i = begin; i < end; ++i) {
    const auto& rec = records.at(order[i]);
    FF_CHECK_ARG(rec.image->shape == first.shape, "make_batch: sample '%s' has shape %s, expected %s",
                 rec.source_id.c_str(), shape_str(rec.image->shape).c_str(),
                 shape_str(first.shape).c_str());
    std::copy(rec.image->data(), rec.image->data() + sample,
              b.x->data() + (int64_t)(i - begin) * sample);
    b.attr.push_back(rec.race);
    b.gender.push_back(rec.gender);
  }
  return b;
}

double dis_step(EncoderModel& enc, DiscriminatorModel& dis, const Batch& batch, double eta) {
  FF_CHECK_ARG(batch.x && batch.x->shape[0] > 0, "dis_step: empty batch");
  // E(x) as a constant: eval-mode encode, no tape, so the encoder sees no
  // gradient and no running-stat update.
  auto z = encode(enc, batch.x, Mode::Eval, nullptr);
  Graph g;
  auto logits = discriminate_logits(dis, z, Mode::Train, &g);
  auto loss = softmax_nll<float>(&g, logits, batch.attr);
  g.backward(loss);
  sgd_step(params(dis), eta);
  return (double)loss->values[0];
}

EncDecLosses encdec_step(EncoderModel& enc, DecoderModel& dec, DiscriminatorModel* dis,
                         const Batch& batch, double eta, double lambda_eff) {
  FF_CHECK_ARG(batch.x && batch.x->shape[0] > 0, "encdec_step: empty batch");
  FF_CHECK_ARG(lambda_eff >= 0.0, "encdec_step: lambda_eff must be >= 0, got %g", lambda_eff);
  Graph g;
  auto z = encode(enc, batch.x, Mode::Train, &g);
  auto xr = decode(dec, z, batch.attr, Mode::Train, &g);
  auto l_ae = mse_loss<float>(&g, xr, batch.x);

  EncDecLosses out;
  out.l_ae = (double)l_ae->values[0];
  if (dis && lambda_eff > 0.0) {
    // Frozen discriminator: gradient flows through it into the latent only.
    FreezeGuard guard(params(*dis));
    auto logits = discriminate_logits(*dis, z, Mode::Eval, &g);
    auto l_fool = softmax_xent_uniform<float>(&g, logits);
    out.l_adv = (double)l_fool->values[0];
    auto total = add<float>(&g, l_ae, scale<float>(&g, l_fool, (float)lambda_eff));
    out.l_total = (double)total->values[0];
    g.backward(total);
  } else {
    if (dis) {
      // Logged but kept off the tape: the update is exactly an autoencoder
      // step at lambda 0.
      auto logits = discriminate_logits(*dis, z, Mode::Eval, nullptr);
      auto l_fool = softmax_xent_uniform<float>(nullptr, logits);
      out.l_adv = (double)l_fool->values[0];
    }
    out.l_total = out.l_ae;
    g.backward(l_ae);
  }
  sgd_step(enc_dec_params(enc, dec), eta);
  return out;
}

namespace {

double validation_l_ae(EncoderModel& enc, DecoderModel& dec,
                       const std::vector<SampleRecord>& val) {
  std::vector<size_t> order(val.size());
  std::iota(order.begin(), order.end(), (size_t)0);
  double sse = 0;
  int64_t elems = 0;
  const size_t chunk = 64;
  for (size_t at = 0; at < val.size(); at += chunk) {
    const size_t end = std::min(at + chunk, val.size());
    Batch b = make_batch(val, order, at, end);
    auto z = encode(enc, b.x, Mode::Eval, nullptr);
    auto xr = decode(dec, z, b.attr, Mode::Eval, nullptr);
    for (size_t i = 0; i < xr->values.size(); ++i) {
      const double d = (double)xr->values[i] - (double)b.x->values[i];
      sse += d * d;
    }
    elems += xr->numel();
  }
  return sse / (double)elems;
}

}  // namespace

LatentSet encode_all(EncoderModel& enc, const std::vector<SampleRecord>& records, int batch_size) {
  FF_CHECK_ARG(!records.empty(), "encode_all: empty record list");
  FF_CHECK_ARG(batch_size >= 1, "encode_all: batch_size must be >= 1");
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), (size_t)0);
  LatentSet set;
  const int64_t C = enc.spec.latent_channels;
  const int64_t s = enc.spec.latent_extent();
  set.z = zeros<float>({(int64_t)records.size(), C, s, s});
  const int64_t sample = C * s * s;
  for (size_t at = 0; at < records.size(); at += (size_t)batch_size) {
    const size_t end = std::min(at + (size_t)batch_size, records.size());
    Batch b = make_batch(records, order, at, end);
    auto z = encode(enc, b.x, Mode::Eval, nullptr);
    std::copy(z->data(), z->data() + z->numel(), set.z->data() + (int64_t)at * sample);
  }
  for (const auto& r : records) {
    set.gender.push_back(r.gender);
    set.race.push_back(r.race);
  }
  return set;
}

namespace {

TrainResult run_training(const DatasetSplit& dataset, const ArchSpec& spec, const TrainConfig& cfg,
                         bool adversarial, const Checkpoint* resume) {
  cfg.validate();
  spec.validate();
  FF_CHECK_ARG(!dataset.train.empty(), "training: empty train split");
  FF_CHECK_ARG(!dataset.validation.empty(), "training: empty validation split");
  FF_CHECK_ARG((int64_t)dataset.train.size() >= cfg.batch_size,
               "training: train split smaller than one batch (%zu < %d)", dataset.train.size(),
               cfg.batch_size);
  for (const auto& r : dataset.train)
    FF_CHECK_ARG(r.race >= 0 && r.race < spec.num_attrs,
                 "training: sample '%s' has race %d outside [0,%d)", r.source_id.c_str(), r.race,
                 spec.num_attrs);

  auto enc_rng = sub_rng(cfg.seed, "enc");
  auto dec_rng = sub_rng(cfg.seed, "dec");
  EncoderModel enc = build_encoder(spec, enc_rng);
  // At lambda_e == 0 the adversarial run degenerates to the vanilla
  // autoencoder (the discriminator trains but nothing feeds back), so the
  // decoder is built unconditioned and the two trainers share trajectories.
  DecoderModel dec = build_decoder(spec, dec_rng, adversarial && cfg.lambda_e > 0.0);
  std::optional<DiscriminatorModel> dis;
  if (adversarial) {
    auto dis_rng = sub_rng(cfg.seed, "dis");
    dis = build_discriminator(spec, dis_rng);
  }
  int64_t resume_step = -1;
  if (resume) {
    FF_CHECK_ARG(resume->config_hash == cfg.content_hash(),
                 "resume: checkpoint was produced under a different train config");
    FF_CHECK_ARG(adversarial == resume->dis.has_value(),
                 "resume: checkpoint regime does not match this trainer");
    enc = deep_copy(resume->enc);
    dec = deep_copy(resume->dec);
    if (adversarial) dis = deep_copy(*resume->dis);
    resume_step = resume->step;
  }

  const int64_t steps_per_epoch = (int64_t)dataset.train.size() / cfg.batch_size;
  const int64_t total = steps_per_epoch * cfg.epochs;
  auto batch_rng = sub_rng(cfg.seed, "batches");
  std::vector<size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), (size_t)0);

  TrainResult result;
  const std::string cfg_hash = cfg.content_hash();
  double run_ae = 0, run_dis = 0, run_adv = 0, run_total = 0;
  int64_t run_n = 0;
  double last_val_acc = 0;

  auto evaluate = [&](int64_t t) {
    Checkpoint c;
    c.step = t;
    c.val_l_ae = validation_l_ae(enc, dec, dataset.validation);
    if (adversarial) {
      auto val_latents = encode_all(enc, dataset.validation);
      last_val_acc =
          discriminator_balanced_accuracy(*dis, val_latents.z, val_latents.race, spec.num_attrs);
    }
    c.enc = deep_copy(enc);
    c.dec = deep_copy(dec);
    if (adversarial) c.dis = deep_copy(*dis);
    c.record = LossRecord{t,
                          run_n ? run_ae / (double)run_n : 0.0,
                          run_n ? run_dis / (double)run_n : 0.0,
                          run_n ? run_adv / (double)run_n : 0.0,
                          run_n ? run_total / (double)run_n : 0.0,
                          last_val_acc};
    c.config_hash = cfg_hash;
    result.checkpoints.push_back(std::move(c));
    run_ae = run_dis = run_adv = run_total = 0;
    run_n = 0;
  };

  if (resume)
    last_val_acc = resume->record.dis_val_accuracy;
  else
    evaluate(0);
  int64_t t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      ++t;
      if (t <= resume_step) continue;  // replayed epochs keep the batch order aligned
      const size_t begin = (size_t)(s * cfg.batch_size);
      Batch batch = make_batch(dataset.train, order, begin, begin + (size_t)cfg.batch_size);
      double l_dis = 0;
      if (adversarial) l_dis = dis_step(enc, *dis, batch, cfg.eta);
      const double lam = adversarial ? cfg.lambda_at(t, total) : 0.0;
      EncDecLosses el =
          encdec_step(enc, dec, adversarial ? &*dis : nullptr, batch, cfg.eta, lam);
      run_ae += el.l_ae;
      run_dis += l_dis;
      run_adv += el.l_adv;
      run_total += el.l_total;
      run_n++;
      if (t % cfg.eval_every == 0 || t == total) evaluate(t);
      result.series.push_back(LossRecord{t, el.l_ae, l_dis, el.l_adv, el.l_total, last_val_acc});
    }
  }

  if (result.checkpoints.empty()) {
    result.selected = 0;
    return result;
  }
  // Selection: among checkpoints whose validation reconstruction is within
  // recon_gate of the best seen, the one where the discriminator does worst
  // (plain best-reconstruction for the autoencoder).
  double best_ae = result.checkpoints[0].val_l_ae;
  for (const auto& c : result.checkpoints) best_ae = std::min(best_ae, c.val_l_ae);
  const double gate = best_ae * (1.0 + cfg.recon_gate);
  size_t sel = result.checkpoints.size();
  for (size_t i = 0; i < result.checkpoints.size(); ++i) {
    const auto& c = result.checkpoints[i];
    if (c.val_l_ae > gate) continue;
    if (sel == result.checkpoints.size()) {
      sel = i;
      continue;
    }
    const auto& cur = result.checkpoints[sel];
    if (adversarial ? c.record.dis_val_accuracy < cur.record.dis_val_accuracy
                    : c.val_l_ae < cur.val_l_ae)
      sel = i;
  }
  result.selected = sel;
  return result;
}

}  // namespace

TrainResult train_fader(const DatasetSplit& dataset, const ArchSpec& spec, const TrainConfig& cfg) {
  return run_training(dataset, spec, cfg, true, nullptr);
}

TrainResult train_vanilla_ae(const DatasetSplit& dataset, const ArchSpec& spec,
                             const TrainConfig& cfg) {
  return run_training(dataset, spec, cfg, false, nullptr);
}

TrainResult resume_fader(const DatasetSplit& dataset, const ArchSpec& spec, const TrainConfig& cfg,
                         const Checkpoint& from) {
  return run_training(dataset, spec, cfg, true, &from);
}

TrainResult resume_vanilla_ae(const DatasetSplit& dataset, const ArchSpec& spec,
                              const TrainConfig& cfg, const Checkpoint& from) {
  return run_training(dataset, spec, cfg, false, &from);
}

std::vector<double> class_weights(const std::vector<double>& freqs) {
  FF_CHECK_ARG(freqs.size() >= 1, "class_weights: empty frequency vector");
  double sum = 0;
  for (double f : freqs) {
    FF_CHECK_ARG(f > 0.0, "class_weights: frequencies must be positive, got %g", f);
    sum += f;
  }
  FF_CHECK_ARG(std::abs(sum - 1.0) <= 1e-6, "class_weights: frequencies sum to %.9g, expected 1",
               sum);
  std::vector<double> w(freqs.size());
  double mean_inv = 0;
  for (size_t k = 0; k < freqs.size(); ++k) {
    w[k] = 1.0 / freqs[k];
    mean_inv += w[k];
  }
  mean_inv /= (double)freqs.size();
  double mean_w = 0;
  for (auto& v : w) {
    v /= mean_inv;
    mean_w += v;
  }
  // squeeze out residual rounding so the mean is exactly 1
  mean_w /= (double)w.size();
  for (auto& v : w) v /= mean_w;
  return w;
}

namespace {

struct LatentBatch {
  TensorPtr z;
  std::vector<int> labels;
  std::vector<float> weights;
};

LatentBatch slice_latents(const LatentSet& data, const std::vector<size_t>& order, size_t begin,
                          size_t end, const std::vector<int>& labels,
                          const std::vector<float>* sample_weights) {
  const int64_t sample = data.z->numel() / data.z->shape[0];
  LatentBatch b;
  b.z = zeros<float>(
      {(int64_t)(end - begin), data.z->shape[1], data.z->shape[2], data.z->shape[3]});
  for (size_t i = begin; i < end; ++i) {
    std::copy(data.z->data() + (int64_t)order[i] * sample,
              data.z->data() + (int64_t)(order[i] + 1) * sample,
              b.z->data() + (int64_t)(i - begin) * sample);
    b.labels.push_back(labels[order[i]]);
    if (sample_weights) b.weights.push_back((*sample_weights)[order[i]]);
  }
  return b;
}

std::vector<float> per_sample_weights(const LatentSet& data, const ArchSpec& spec,
                                      const std::vector<double>* race_class_weights) {
  std::vector<float> w;
  if (!race_class_weights) return w;
  FF_CHECK_ARG((int)race_class_weights->size() == spec.num_attrs,
               "per-class weight vector has %zu entries, expected K=%d", race_class_weights->size(),
               spec.num_attrs);
  w.reserve(data.race.size());
  for (int r : data.race) {
    FF_CHECK_ARG(r >= 0 && r < spec.num_attrs, "latent sample race %d outside [0,%d)", r,
                 spec.num_attrs);
    w.push_back((float)(*race_class_weights)[(size_t)r]);
  }
  return w;
}

}  // namespace

ClassifierModel train_classifier(const LatentSet& data, const ArchSpec& spec,
                                 const TrainConfig& cfg,
                                 const std::vector<double>* race_class_weights) {
  cfg.validate();
  const int64_t n = data.z->shape[0];
  FF_CHECK_ARG(n >= cfg.batch_size, "train_classifier: %lld latents for batch size %d",
               (long long)n, cfg.batch_size);
  FF_CHECK_ARG((int64_t)data.gender.size() == n, "train_classifier: label count mismatch");
  const std::vector<float> weights = per_sample_weights(data, spec, race_class_weights);

  auto clf_rng = sub_rng(cfg.seed, "clf");
  ClassifierModel clf = build_classifier(spec, clf_rng);
  auto drop_rng = sub_rng(cfg.seed, "dropout");
  auto batch_rng = sub_rng(cfg.seed, "batches");
  std::vector<size_t> order((size_t)n);
  std::iota(order.begin(), order.end(), (size_t)0);

  const int64_t steps_per_epoch = n / cfg.batch_size;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      const size_t begin = (size_t)(s * cfg.batch_size);
      LatentBatch b = slice_latents(data, order, begin, begin + (size_t)cfg.batch_size,
                                    data.gender, weights.empty() ? nullptr : &weights);
      Graph g;
      auto logits = classify_logits(clf, b.z, Mode::Train, &g, &drop_rng);
      auto loss = softmax_nll<float>(&g, logits, b.labels, b.weights.empty() ? nullptr : &b.weights);
      g.backward(loss);
      sgd_step(params(clf), cfg.eta);
    }
  }
  return clf;
}

DiscriminatorModel train_probe_discriminator(const LatentSet& data, const ArchSpec& spec,
                                             const TrainConfig& cfg,
                                             const std::vector<double>* race_class_weights) {
  cfg.validate();
  const int64_t n = data.z->shape[0];
  FF_CHECK_ARG(n >= cfg.batch_size, "train_probe_discriminator: %lld latents for batch size %d",
               (long long)n, cfg.batch_size);
  const std::vector<float> weights = per_sample_weights(data, spec, race_class_weights);

  auto dis_rng = sub_rng(cfg.seed, "dis");
  DiscriminatorModel dis = build_discriminator(spec, dis_rng);
  auto batch_rng = sub_rng(cfg.seed, "batches");
  std::vector<size_t> order((size_t)n);
  std::iota(order.begin(), order.end(), (size_t)0);

  const int64_t steps_per_epoch = n / cfg.batch_size;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      const size_t begin = (size_t)(s * cfg.batch_size);
      LatentBatch b = slice_latents(data, order, begin, begin + (size_t)cfg.batch_size, data.race,
                                    weights.empty() ? nullptr : &weights);
      Graph g;
      auto logits = discriminate_logits(dis, b.z, Mode::Train, &g);
      auto loss = softmax_nll<float>(&g, logits, b.labels, b.weights.empty() ? nullptr : &b.weights);
      g.backward(loss);
      sgd_step(params(dis), cfg.eta);
    }
  }
  return dis;
}

void write_loss_csv(const std::vector<LossRecord>& series, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  os << "step,l_ae,l_dis,l_adv,l_total,dis_val_acc\n";
  char buf[256];
  for (const auto& r : series) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n", (long long)r.step, r.l_ae,
                  r.l_dis, r.l_adv, r.l_total, r.dis_val_accuracy);
    os << buf;
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open loss CSV " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "step,l_ae,l_dis,l_adv,l_total,dis_val_acc")
    throw FormatError("loss CSV header mismatch in " + path.string());
  std::vector<LossRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    LossRecord r;
    long long step;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf", &step, &r.l_ae, &r.l_dis, &r.l_adv,
                    &r.l_total, &r.dis_val_accuracy) != 6)
      throw FormatError("loss CSV row unparseable: " + line);
    r.step = step;
    out.push_back(r);
  }
  return out;
}

}  // namespace fairfader
