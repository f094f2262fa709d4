#pragma once

// Training regimes: alternating discriminator / encoder-decoder adversarial
// updates, vanilla autoencoder training, and latent-space classifier and
// probe-discriminator training with optional inverse-frequency loss weights.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fairfader/data.hpp"
#include "fairfader/nets.hpp"

namespace fairfader {

struct TrainConfig {
  double lambda_e = 1e-4;
  int64_t lambda_warmup_steps = -1;  // <0: 20% of the planned total steps
  double eta = 2e-3;
  int batch_size = 32;
  int epochs = 1;
  uint64_t seed = 0;
  int64_t eval_every = 50;
  double recon_gate = 0.25;  // checkpoint gate: val L_ae within 25% of best

  void validate() const;
  int64_t warmup_steps(int64_t total_steps) const;
  // Effective lambda at optimization step t (1-based); continuous,
  // nondecreasing, reaches lambda_e exactly at the warmup step.
  double lambda_at(int64_t step, int64_t total_steps) const;
  std::string content_hash() const;
};

struct LossRecord {
  int64_t step = 0;
  double l_ae = 0.0;
  double l_dis = 0.0;
  double l_adv = 0.0;
  double l_total = 0.0;
  double dis_val_accuracy = 0.0;  // percent, balanced over attribute classes
};

struct Checkpoint {
  int64_t step = 0;
  EncoderModel enc;
  DecoderModel dec;
  std::optional<DiscriminatorModel> dis;
  LossRecord record;  // loss means since the previous evaluation
  double val_l_ae = 0.0;
  std::string config_hash;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  size_t selected = 0;
  std::vector<LossRecord> series;  // one row per optimization step
};

struct Batch {
  TensorPtr x;             // [B,C,S,S]
  std::vector<int> attr;   // race
  std::vector<int> gender;
};

Batch make_batch(const std::vector<SampleRecord>& records, const std::vector<size_t>& order,
                 size_t begin, size_t end);

// One discriminator update: L_dis on E(x) treated as constant, sgd on
// theta_dis only. Returns the loss value.
double dis_step(EncoderModel& enc, DiscriminatorModel& dis, const Batch& batch, double eta);

struct EncDecLosses {
  double l_ae = 0.0;
  double l_adv = 0.0;
  double l_total = 0.0;
};

// One encoder-decoder update: L_ae plus lambda_eff times the uniform-target
// fooling term, discriminator frozen. Pass dis=nullptr for plain autoencoder
// training.
EncDecLosses encdec_step(EncoderModel& enc, DecoderModel& dec, DiscriminatorModel* dis,
                         const Batch& batch, double eta, double lambda_eff);

// Alternating adversarial training; checkpoint selection picks the minimum
// validation discriminator accuracy among checkpoints whose validation L_ae
// is within recon_gate of the best seen.
TrainResult train_fader(const DatasetSplit& dataset, const ArchSpec& spec, const TrainConfig& cfg);

// lambda_E = 0, no discriminator, decoder built without attribute planes.
// Selection picks the minimum validation L_ae.
TrainResult train_vanilla_ae(const DatasetSplit& dataset, const ArchSpec& spec,
                             const TrainConfig& cfg);

// Continue a run from one of its checkpoints (config hash must match). The
// result covers steps after from.step only and splices bit-exactly onto the
// original series when the checkpoint sits on an evaluation boundary.
TrainResult resume_fader(const DatasetSplit& dataset, const ArchSpec& spec, const TrainConfig& cfg,
                         const Checkpoint& from);
TrainResult resume_vanilla_ae(const DatasetSplit& dataset, const ArchSpec& spec,
                              const TrainConfig& cfg, const Checkpoint& from);

// w_k = (1/freq_k) / mean_j(1/freq_j); mean exactly 1.
std::vector<double> class_weights(const std::vector<double>& freqs);

struct LatentSet {
  TensorPtr z;  // [N,C,s,s]
  std::vector<int> gender;
  std::vector<int> race;
};

// Eval-mode latents of every record under a frozen encoder.
LatentSet encode_all(EncoderModel& enc, const std::vector<SampleRecord>& records,
                     int batch_size = 64);

// Gender classifier on frozen latents; optional per-race-class loss weights
// (length must equal spec.num_attrs).
ClassifierModel train_classifier(const LatentSet& data, const ArchSpec& spec,
                                 const TrainConfig& cfg,
                                 const std::vector<double>* race_class_weights = nullptr);

// Race probe on frozen latents, optionally class-weighted; measures how much
// attribute information a latent space retains.
DiscriminatorModel train_probe_discriminator(const LatentSet& data, const ArchSpec& spec,
                                             const TrainConfig& cfg,
                                             const std::vector<double>* race_class_weights = nullptr);

// CSV columns: step,l_ae,l_dis,l_adv,l_total,dis_val_acc (header included).
void write_loss_csv(const std::vector<LossRecord>& series, const std::filesystem::path& path);
std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);

}  // namespace fairfader
