#pragma once

// Experiment configuration (strict JSON schema) and the command layer behind
// the CLI. Commands throw; the CLI maps std::invalid_argument to exit code 2
// and other failures to 1.

#include <filesystem>
#include <optional>
#include <string>

#include "fairfader/data.hpp"
#include "fairfader/eval.hpp"
#include "fairfader/nets.hpp"
#include "fairfader/train.hpp"

namespace fairfader {

struct SplitParams {
  int n_test_per_race = 40;
  double val_fraction = 0.1;
};

struct DatasetParams {
  std::filesystem::path path;  // directory of UTKFace-convention images
  int target_size = 256;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::filesystem::path out_dir;
  ArchSpec arch;
  TrainConfig train;      // fader / autoencoder training
  TrainConfig clf_train;  // classifier and probe training
  SplitParams split;
  std::optional<SynthConfig> synth;      // exactly one of synth / dataset
  std::optional<DatasetParams> dataset;

  void validate() const;
  std::string canonical_json() const;
  std::string content_hash() const;
};

// Strict parse: unknown keys anywhere are rejected. `seed_override` and
// `out_override` apply the CLI flags.
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::optional<uint64_t> seed_override = {},
                                        std::optional<std::filesystem::path> out_override = {});

// ---- commands ----

void cmd_gen_synth(const ExperimentConfig& cfg);
void cmd_train_fader(const ExperimentConfig& cfg, bool resume = false);
void cmd_train_ae(const ExperimentConfig& cfg, bool resume = false);
void cmd_train_clf(const ExperimentConfig& cfg, const std::filesystem::path& encoder_path,
                   bool weighted, const std::string& model_name);
void cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& classifier_path,
              const std::filesystem::path& encoder_path, const std::string& split_name);
// Prints one line per op; throws std::runtime_error if any op fails.
void cmd_grad_check(uint64_t seed, int instances);
void cmd_run_experiment(const ExperimentConfig& cfg);

// ---- shared helpers (also used by tests) ----

// Loads the configured dataset (synthetic raw dir or image dir).
std::vector<SampleRecord> load_configured_records(const ExperimentConfig& cfg);
// Splits via out_dir/splits.json when present, else computes and writes it.
DatasetSplit load_or_make_splits(const ExperimentConfig& cfg,
                                 const std::vector<SampleRecord>& records);

std::filesystem::path checkpoint_dir(const std::filesystem::path& run_dir, int64_t step);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& run_dir);

struct CheckpointMeta {
  int64_t step = 0;
  double val_l_ae = 0.0;
  double dis_val_accuracy = 0.0;
  LossRecord record;
  std::string config_hash;
  std::filesystem::path dir;
};
std::vector<CheckpointMeta> list_checkpoints(const std::filesystem::path& run_dir);

}  // namespace fairfader
