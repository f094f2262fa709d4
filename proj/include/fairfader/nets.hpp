#pragma once

// The four networks: encoder, attribute-conditioned decoder, latent
// discriminator, and the latent-space gender classifier. All are parametric
// over ArchSpec so the 256x256 depth-6 configuration and small desk-scale
// configurations share one code path.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fairfader/serialize.hpp"
#include "fairfader/tensor.hpp"

namespace fairfader {

struct ArchSpec {
  int input_channels = 3;
  int input_size = 256;  // square input, must divide by 2^depth
  int depth = 6;         // encoder layer count
  int base_channels = 16;
  int num_attrs = 5;          // K
  int latent_channels = 512;  // base_channels * 2^(depth-1)
  float leaky_slope = 0.2f;
  float dropout_rate = 0.3f;  // classifier dropout sites
  // The classifier description calls for stride 2 while also preserving
  // spatial size; stride 1 honors the size-preservation reading and stays
  // configurable.
  int classifier_stride = 1;

  bool operator==(const ArchSpec&) const = default;

  void validate() const;
  int latent_extent() const { return input_size >> depth; }
  int64_t latent_dim() const {
    return (int64_t)latent_channels * latent_extent() * latent_extent();
  }
  // Encoder output channels per layer: base*2^i capped at latent_channels.
  std::vector<int> encoder_channels() const;
  // Classifier conv ladder; at latent 512 this is 512-128-64-16.
  std::vector<int> classifier_channels() const;

  std::string canonical_text(const std::string& model_kind, int attr_planes) const;
  static ArchSpec parse_canonical_text(const std::string& text, std::string* model_kind,
                                       int* attr_planes);

  static ArchSpec paper() { return ArchSpec{}; }
};

// One Conv/Deconv + optional BatchNorm + activation stage.
struct ConvBlock {
  TensorPtr w, b;
  bool transposed = false;
  int stride = 2, pad = 1;
  bool has_bn = true;
  TensorPtr gamma, beta;
  BatchNormState<float> bn;
  Act act;
};

struct EncoderModel {
  ArchSpec spec;
  std::vector<ConvBlock> blocks;
};

struct DecoderModel {
  ArchSpec spec;
  int attr_planes = 0;  // K for the fader decoder, 0 for the vanilla AE
  std::vector<ConvBlock> blocks;
};

struct DiscriminatorModel {
  ArchSpec spec;
  ConvBlock conv;
  TensorPtr fc1_w, fc1_b;  // -> 512
  TensorPtr fc2_w, fc2_b;  // -> K
};

struct ClassifierModel {
  ArchSpec spec;
  std::vector<ConvBlock> convs;  // pool(2) after the second block
  TensorPtr fc_w, fc_b;          // -> 2
};

// ---- builders (deterministic given the rng state) ----

EncoderModel build_encoder(const ArchSpec& spec, std::mt19937& rng);
DecoderModel build_decoder(const ArchSpec& spec, std::mt19937& rng, bool attr_conditioned = true);
DiscriminatorModel build_discriminator(const ArchSpec& spec, std::mt19937& rng);
ClassifierModel build_classifier(const ArchSpec& spec, std::mt19937& rng);

// ---- forward maps ----

TensorPtr encode(EncoderModel& enc, const TensorPtr& x, Mode mode, Graph* g = nullptr);

// Constant one-hot planes: plane y all ones, others zero.
TensorPtr attr_planes(int y, int K, int64_t H, int64_t W);
TensorPtr attr_planes_batch(const std::vector<int>& ys, int K, int64_t H, int64_t W);

TensorPtr decode(DecoderModel& dec, const TensorPtr& z, const std::vector<int>& ys, Mode mode,
                 Graph* g = nullptr);
TensorPtr decode(DecoderModel& dec, const TensorPtr& z, int y, Mode mode, Graph* g = nullptr);

TensorPtr discriminate_logits(DiscriminatorModel& dis, const TensorPtr& z, Mode mode,
                              Graph* g = nullptr);
// Eval-mode probability rows [N,K]; each row sums to 1.
TensorPtr discriminate(DiscriminatorModel& dis, const TensorPtr& z);

TensorPtr classify_logits(ClassifierModel& clf, const TensorPtr& z, Mode mode, Graph* g = nullptr,
                          std::mt19937* dropout_rng = nullptr);
TensorPtr classify(ClassifierModel& clf, const TensorPtr& z);

// Argmax per row; ties break toward the lower index.
std::vector<int> argmax_rows(const TensorPtr& rows);

// ---- parameter access ----

std::vector<TensorPtr> params(EncoderModel& m);
std::vector<TensorPtr> params(DecoderModel& m);
std::vector<TensorPtr> params(DiscriminatorModel& m);
std::vector<TensorPtr> params(ClassifierModel& m);

int64_t param_count(EncoderModel& m);
int64_t param_count(DecoderModel& m);
int64_t param_count(DiscriminatorModel& m);
int64_t param_count(ClassifierModel& m);

// Named tensors incl. batchnorm running stats, in save order.
std::vector<NamedTensor> named_tensors(const EncoderModel& m);
std::vector<NamedTensor> named_tensors(const DecoderModel& m);
std::vector<NamedTensor> named_tensors(const DiscriminatorModel& m);
std::vector<NamedTensor> named_tensors(const ClassifierModel& m);

// ---- persistence (snapshot format + ArchSpec header record) ----

void save_model(const EncoderModel& m, const std::filesystem::path& path);
void save_model(const DecoderModel& m, const std::filesystem::path& path);
void save_model(const DiscriminatorModel& m, const std::filesystem::path& path);
void save_model(const ClassifierModel& m, const std::filesystem::path& path);

EncoderModel load_encoder(const std::filesystem::path& path);
DecoderModel load_decoder(const std::filesystem::path& path);
DiscriminatorModel load_discriminator(const std::filesystem::path& path);
ClassifierModel load_classifier(const std::filesystem::path& path);

// Kind tag of a model file without loading parameters.
std::string peek_model_kind(const std::filesystem::path& path);

// Model structs share parameter storage when copied; deep_copy snapshots one.
EncoderModel deep_copy(const EncoderModel& m);
DecoderModel deep_copy(const DecoderModel& m);
DiscriminatorModel deep_copy(const DiscriminatorModel& m);
ClassifierModel deep_copy(const ClassifierModel& m);

}  // namespace fairfader
