#pragma once

// Stratified evaluation and the variance-as-bias metric, plus discriminator
// accuracy measurement on latents.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fairfader/nets.hpp"

namespace fairfader {

struct PredictionRecord {
  std::string source_id;
  int predicted_gender = 0;
  int true_gender = 0;
  int race = 0;
};

struct EvalReport {
  std::vector<double> per_class_accuracy;  // percent
  double overall_accuracy = 0.0;           // percent, pooled
  double variance = 0.0;                   // sample variance of per-class accuracies
  std::vector<int64_t> counts;
  std::string model_id;
};

// Per-class percent correct and pooled percent correct. Every class in
// [0,num_classes) must be present.
std::pair<std::vector<double>, double> stratified_accuracy(
    const std::vector<PredictionRecord>& preds, int num_classes);

// Unbiased sample variance: sum((a_k - mean)^2) / (K - 1).
double accuracy_variance(const std::vector<double>& per_class);

EvalReport make_eval_report(const std::vector<PredictionRecord>& preds, int num_classes,
                            const std::string& model_id);

// Pooled percent of latents whose discriminator argmax equals the race label
// (eval mode). latents: [N,C,s,s].
double discriminator_accuracy(DiscriminatorModel& dis, const TensorPtr& latents,
                              const std::vector<int>& races);

// Macro average of per-race accuracies; chance is 100/K on any race mix.
double discriminator_balanced_accuracy(DiscriminatorModel& dis, const TensorPtr& latents,
                                       const std::vector<int>& races, int num_classes);

// Canonical JSON with 2-decimal presentation fields plus full-precision
// values under "raw". Byte-identical across emissions of the same report.
void emit_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

// CSV columns: source_id,pred,truth,race (header included).
void write_predictions_csv(const std::vector<PredictionRecord>& preds,
                           const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path);

}  // namespace fairfader
