#pragma once

// Dataset ingestion (UTKFace-convention directories), the split protocol, the
// raw-tensor dataset format, and the synthetic biased-image generator used
// for desk-scale experiments.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fairfader/tensor.hpp"

namespace fairfader {

constexpr int kNumRaces = 5;

// gender: 0 = male, 1 = female. race: 0..4 = White, Black, Asian, Indian,
// Others, following the dataset's published ordering.
struct SampleRecord {
  TensorPtr image;  // [C,H,W], values in [-1,1]
  int gender = 0;
  int race = 0;
  std::optional<int> age;
  std::string source_id;
};

struct UtkAttrs {
  int age;
  int gender;
  int race;
};

// Filenames follow `[age]_[gender]_[race]_[tag].ext`. Throws ParseError
// (carrying the name) on malformed input.
UtkAttrs parse_utk_filename(const std::string& name);

struct ItemError {
  std::string file;
  std::string message;
};

struct LoadResult {
  std::vector<SampleRecord> records;  // ordered by source_id
  std::vector<ItemError> errors;     // malformed names / undecodable files
  std::string manifest_hash;
};

// Loads every PNG/JPEG in `dir`, resizes (bilinear) to target_size x
// target_size RGB and normalizes to [-1,1]. Item failures are collected,
// not fatal.
LoadResult load_dataset(const std::filesystem::path& dir, int target_size);

struct DatasetSplit {
  std::vector<SampleRecord> train, validation, test;
  uint64_t seed = 0;
  std::string manifest_hash;
};

// Per-race uniform draw of n_test_per_race into test; of the remainder,
// val_fraction into validation; the rest trains. Splits are disjoint by
// source_id.
DatasetSplit make_splits(const std::vector<SampleRecord>& records, int n_test_per_race,
                         double val_fraction, uint64_t seed);

struct SynthConfig {
  int n_samples = 5000;
  int image_size = 32;  // power of two
  int num_classes = kNumRaces;
  std::vector<double> class_fractions = {0.88, 0.04, 0.035, 0.03, 0.015};
  double gender_balance = 0.5;        // P(gender = 1)
  double nuisance_correlation = 0.6;  // rho: P(confound | minority race)
  double noise_std = 0.08;
  uint64_t seed = 1;

  void validate() const;
};

// Grayscale images: a gender cue (vertical bar for gender 0, horizontal for
// gender 1, fixed luminance), a race cue (background luminance band unique
// to the race), and with probability rho a race-conditioned confound that
// attenuates the gender cue's contrast for minority races (race > 0).
std::vector<SampleRecord> gen_synthetic(const SynthConfig& cfg);

// Raw dataset directory: <source_id>.raw (little-endian f32, C*H*W) plus
// manifest.json carrying ids, labels and shapes.
void write_raw_dataset(const std::vector<SampleRecord>& records, const std::filesystem::path& dir);
LoadResult load_raw_dataset(const std::filesystem::path& dir);

void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit apply_split_manifest(const std::vector<SampleRecord>& records,
                                  const std::filesystem::path& path);

// Empirical race fractions of a record list (sums to 1).
std::vector<double> race_fractions(const std::vector<SampleRecord>& records, int num_classes);

}  // namespace fairfader
