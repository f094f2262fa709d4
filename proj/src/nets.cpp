#include "fairfader/nets.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

namespace fairfader {

namespace {

std::string float_str(float v) {
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

float parse_float(const std::string& s) {
  float v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  FF_CHECK_ARG(res.ec == std::errc() && res.ptr == s.data() + s.size(),
               "archspec: bad float value '%s'", s.c_str());
  return v;
}

int parse_int(const std::string& s) {
  int v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  FF_CHECK_ARG(res.ec == std::errc() && res.ptr == s.data() + s.size(),
               "archspec: bad int value '%s'", s.c_str());
  return v;
}

TensorPtr init_weight(Shape shape, int64_t fan_in, std::mt19937& rng) {
  const float bound = (float)std::sqrt(1.0 / (double)fan_in);
  return uniform<float>(std::move(shape), -bound, bound, rng, true);
}

ConvBlock make_block(int in_ch, int out_ch, int k, int stride, int pad, bool transposed,
                     bool has_bn, Act act, std::mt19937& rng) {
  ConvBlock blk;
  blk.transposed = transposed;
  blk.stride = stride;
  blk.pad = pad;
  blk.act = act;
  blk.has_bn = has_bn;
  const int64_t fan_in = (int64_t)in_ch * k * k;
  if (transposed)
    blk.w = init_weight({in_ch, out_ch, k, k}, fan_in, rng);
  else
    blk.w = init_weight({out_ch, in_ch, k, k}, fan_in, rng);
  blk.b = zeros<float>({out_ch}, true);
  if (has_bn) {
    blk.gamma = full<float>({out_ch}, 1.0f, true);
    blk.beta = zeros<float>({out_ch}, true);
    blk.bn = make_batchnorm_state<float>(out_ch);
  }
  return blk;
}

TensorPtr forward_block(ConvBlock& blk, const TensorPtr& x, Mode mode, Graph* g) {
  TensorPtr h = blk.transposed ? deconv2d<float>(g, x, blk.w, blk.b, blk.stride, blk.pad)
                               : conv2d<float>(g, x, blk.w, blk.b, blk.stride, blk.pad);
  if (blk.has_bn) h = batchnorm2d<float>(g, h, blk.gamma, blk.beta, blk.bn, mode);
  return activation<float>(g, h, blk.act);
}

void block_params(ConvBlock& blk, std::vector<TensorPtr>& out) {
  out.push_back(blk.w);
  out.push_back(blk.b);
  if (blk.has_bn) {
    out.push_back(blk.gamma);
    out.push_back(blk.beta);
  }
}

void block_named(const ConvBlock& blk, const std::string& prefix, std::vector<NamedTensor>& out) {
  auto push = [&](const std::string& name, const TensorPtr& t) {
    out.push_back(NamedTensor{prefix + name, t->shape, t->values});
  };
  push("conv.w", blk.w);
  push("conv.b", blk.b);
  if (blk.has_bn) {
    push("bn.gamma", blk.gamma);
    push("bn.beta", blk.beta);
    push("bn.running_mean", blk.bn.running_mean);
    push("bn.running_var", blk.bn.running_var);
  }
}

void block_restore(ConvBlock& blk, const std::string& prefix,
                   std::map<std::string, const NamedTensor*>& by_name) {
  auto take = [&](const std::string& name, const TensorPtr& t) {
    auto it = by_name.find(prefix + name);
    if (it == by_name.end())
      throw FormatError("model file missing tensor " + prefix + name);
    FF_CHECK_ARG(it->second->shape == t->shape, "model tensor %s has shape %s, expected %s",
                 (prefix + name).c_str(), shape_str(it->second->shape).c_str(),
                 shape_str(t->shape).c_str());
    t->values = it->second->values;
    by_name.erase(it);
  };
  take("conv.w", blk.w);
  take("conv.b", blk.b);
  if (blk.has_bn) {
    take("bn.gamma", blk.gamma);
    take("bn.beta", blk.beta);
    take("bn.running_mean", blk.bn.running_mean);
    take("bn.running_var", blk.bn.running_var);
  }
}

ConvBlock deep_copy_block(const ConvBlock& blk) {
  ConvBlock c = blk;
  c.w = clone(blk.w);
  c.b = clone(blk.b);
  if (blk.has_bn) {
    c.gamma = clone(blk.gamma);
    c.beta = clone(blk.beta);
    c.bn.running_mean = clone(blk.bn.running_mean);
    c.bn.running_var = clone(blk.bn.running_var);
  }
  return c;
}

constexpr const char* kArchSpecRecord = "__archspec__";

NamedTensor header_record(const std::string& text) {
  NamedTensor t;
  t.name = kArchSpecRecord;
  t.shape = {(int64_t)text.size()};
  t.values.reserve(text.size());
  for (unsigned char c : text) t.values.push_back((float)c);
  return t;
}

std::string header_text(const NamedTensor& t) {
  std::string s;
  s.reserve(t.values.size());
  for (float v : t.values) {
    FF_CHECK_ARG(v >= 0.0f && v <= 255.0f && v == std::floor(v),
                 "archspec header record holds a non-byte value %g", (double)v);
    s.push_back((char)(unsigned char)v);
  }
  return s;
}

}  // namespace

// ---- ArchSpec ----

void ArchSpec::validate() const {
  FF_CHECK_ARG(input_channels >= 1, "arch: input_channels must be >= 1, got %d", input_channels);
  FF_CHECK_ARG(input_size >= 2, "arch: input_size must be >= 2, got %d", input_size);
  FF_CHECK_ARG(depth >= 1, "arch: depth must be >= 1, got %d", depth);
  FF_CHECK_ARG(base_channels >= 1, "arch: base_channels must be >= 1, got %d", base_channels);
  FF_CHECK_ARG(num_attrs >= 2, "arch: num_attrs must be >= 2, got %d", num_attrs);
  FF_CHECK_ARG(input_size % (1 << depth) == 0 && latent_extent() >= 1,
               "arch: input_size %d is not divisible by 2^depth=%d", input_size, 1 << depth);
  const auto ladder = encoder_channels();
  FF_CHECK_ARG(latent_channels == ladder.back(),
               "arch: latent_channels %d inconsistent with ladder top %d", latent_channels,
               ladder.back());
  FF_CHECK_ARG(leaky_slope >= 0.0f && leaky_slope < 1.0f, "arch: leaky_slope out of [0,1): %g",
               (double)leaky_slope);
  FF_CHECK_ARG(dropout_rate >= 0.0f && dropout_rate < 1.0f, "arch: dropout_rate out of [0,1): %g",
               (double)dropout_rate);
  FF_CHECK_ARG(classifier_stride >= 1, "arch: classifier_stride must be >= 1, got %d",
               classifier_stride);
}

std::vector<int> ArchSpec::encoder_channels() const {
  std::vector<int> ladder;
  for (int i = 0; i < depth; ++i)
    ladder.push_back(std::min(base_channels << i, latent_channels > 0 ? latent_channels
                                                                      : base_channels << i));
  return ladder;
}

std::vector<int> ArchSpec::classifier_channels() const {
  // 512-128-64-16 at latent 512; small configurations keep a floor of 8.
  const int floor_ch = std::min(latent_channels, 8);
  const int shifts[4] = {0, 2, 3, 5};
  std::vector<int> ladder;
  for (int s : shifts) ladder.push_back(std::max(latent_channels >> s, floor_ch));
  return ladder;
}

std::string ArchSpec::canonical_text(const std::string& model_kind, int attr_planes) const {
  std::ostringstream os;
  os << "model=" << model_kind << '\n'
     << "input_channels=" << input_channels << '\n'
     << "input_size=" << input_size << '\n'
     << "depth=" << depth << '\n'
     << "base_channels=" << base_channels << '\n'
     << "num_attrs=" << num_attrs << '\n'
     << "latent_channels=" << latent_channels << '\n'
     << "leaky_slope=" << float_str(leaky_slope) << '\n'
     << "dropout_rate=" << float_str(dropout_rate) << '\n'
     << "classifier_stride=" << classifier_stride << '\n'
     << "attr_planes=" << attr_planes << '\n';
  return os.str();
}

ArchSpec ArchSpec::parse_canonical_text(const std::string& text, std::string* model_kind,
                                        int* attr_planes) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    FF_CHECK_ARG(eq != std::string::npos, "archspec: malformed line '%s'", line.c_str());
    FF_CHECK_ARG(!kv.count(line.substr(0, eq)), "archspec: duplicate key in '%s'", line.c_str());
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const char* key) {
    auto it = kv.find(key);
    FF_CHECK_ARG(it != kv.end(), "archspec: missing key '%s'", key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  ArchSpec spec;
  *model_kind = take("model");
  spec.input_channels = parse_int(take("input_channels"));
  spec.input_size = parse_int(take("input_size"));
  spec.depth = parse_int(take("depth"));
  spec.base_channels = parse_int(take("base_channels"));
  spec.num_attrs = parse_int(take("num_attrs"));
  spec.latent_channels = parse_int(take("latent_channels"));
  spec.leaky_slope = parse_float(take("leaky_slope"));
  spec.dropout_rate = parse_float(take("dropout_rate"));
  spec.classifier_stride = parse_int(take("classifier_stride"));
  *attr_planes = parse_int(take("attr_planes"));
  FF_CHECK_ARG(kv.empty(), "archspec: unknown key '%s'", kv.begin()->first.c_str());
  spec.validate();
  return spec;
}

// ---- builders ----

EncoderModel build_encoder(const ArchSpec& spec, std::mt19937& rng) {
  spec.validate();
  EncoderModel m;
  m.spec = spec;
  const auto ladder = spec.encoder_channels();
  int in_ch = spec.input_channels;
  for (int i = 0; i < spec.depth; ++i) {
    m.blocks.push_back(
        make_block(in_ch, ladder[(size_t)i], 4, 2, 1, false, true,
                   Act::leaky_relu((double)spec.leaky_slope), rng));
    in_ch = ladder[(size_t)i];
  }
  return m;
}

DecoderModel build_decoder(const ArchSpec& spec, std::mt19937& rng, bool attr_conditioned) {
  spec.validate();
  DecoderModel m;
  m.spec = spec;
  m.attr_planes = attr_conditioned ? spec.num_attrs : 0;
  auto ladder = spec.encoder_channels();  // [base .. latent]
  // Mirror of the encoder; every stage consumes its channels plus the
  // attribute planes, the last stage emits the image through tanh.
  for (int i = spec.depth - 1; i >= 0; --i) {
    const int in_ch = ladder[(size_t)i] + m.attr_planes;
    const int out_ch = i > 0 ? ladder[(size_t)(i - 1)] : spec.input_channels;
    const bool last = i == 0;
    m.blocks.push_back(
        make_block(in_ch, out_ch, 4, 2, 1, true, !last, last ? Act::tanh() : Act::relu(), rng));
  }
  return m;
}

DiscriminatorModel build_discriminator(const ArchSpec& spec, std::mt19937& rng) {
  spec.validate();
  FF_CHECK_ARG(spec.latent_extent() >= 2,
               "discriminator: latent extent %d too small for its conv stage",
               spec.latent_extent());
  DiscriminatorModel m;
  m.spec = spec;
  m.conv = make_block(spec.latent_channels, spec.latent_channels, 4, 2, 1, false, true,
                      Act::leaky_relu((double)spec.leaky_slope), rng);
  const int64_t s = conv_out_extent(spec.latent_extent(), 4, 2, 1);
  const int64_t flat = (int64_t)spec.latent_channels * s * s;
  m.fc1_w = init_weight({512, flat}, flat, rng);
  m.fc1_b = zeros<float>({512}, true);
  m.fc2_w = init_weight({spec.num_attrs, 512}, 512, rng);
  m.fc2_b = zeros<float>({spec.num_attrs}, true);
  return m;
}

ClassifierModel build_classifier(const ArchSpec& spec, std::mt19937& rng) {
  spec.validate();
  ClassifierModel m;
  m.spec = spec;
  const auto ladder = spec.classifier_channels();
  int in_ch = spec.latent_channels;
  int64_t s = spec.latent_extent();
  for (size_t i = 0; i < ladder.size(); ++i) {
    m.convs.push_back(
        make_block(in_ch, ladder[i], 3, spec.classifier_stride, 1, false, true, Act::relu(), rng));
    in_ch = ladder[i];
    s = conv_out_extent(s, 3, spec.classifier_stride, 1);
    FF_CHECK_ARG(s >= 1, "classifier: conv stage %zu would produce an empty feature map", i);
    if (i == 1) {
      FF_CHECK_ARG(s >= 2 && s % 2 == 0,
                   "classifier: latent too small for pooling, feature extent %lld", (long long)s);
      s /= 2;
    }
  }
  const int64_t flat = (int64_t)ladder.back() * s * s;
  m.fc_w = init_weight({2, flat}, flat, rng);
  m.fc_b = zeros<float>({2}, true);
  return m;
}

// ---- forwards ----

TensorPtr encode(EncoderModel& enc, const TensorPtr& x, Mode mode, Graph* g) {
  FF_CHECK_ARG(x->shape.size() == 4, "encode: input must be NCHW, got %s",
               shape_str(x->shape).c_str());
  FF_CHECK_ARG(x->shape[1] == enc.spec.input_channels && x->shape[2] == enc.spec.input_size &&
                   x->shape[3] == enc.spec.input_size,
               "encode: input %s does not match spec %dx%dx%d", shape_str(x->shape).c_str(),
               enc.spec.input_channels, enc.spec.input_size, enc.spec.input_size);
  TensorPtr h = x;
  for (auto& blk : enc.blocks) h = forward_block(blk, h, mode, g);
  return h;
}

TensorPtr attr_planes(int y, int K, int64_t H, int64_t W) {
  FF_CHECK_ARG(K >= 1, "attr_planes: K must be >= 1, got %d", K);
  FF_CHECK_ARG(y >= 0 && y < K, "attr_planes: attribute %d out of range [0,%d)", y, K);
  auto t = zeros<float>({K, H, W});
  std::fill(t->data() + y * H * W, t->data() + (y + 1) * H * W, 1.0f);
  return t;
}

TensorPtr attr_planes_batch(const std::vector<int>& ys, int K, int64_t H, int64_t W) {
  FF_CHECK_ARG(!ys.empty(), "attr_planes_batch: empty attribute list");
  auto t = zeros<float>({(int64_t)ys.size(), K, H, W});
  for (size_t n = 0; n < ys.size(); ++n) {
    FF_CHECK_ARG(ys[n] >= 0 && ys[n] < K, "attr_planes_batch: attribute %d out of range [0,%d)",
                 ys[n], K);
    float* dst = t->data() + ((int64_t)n * K + ys[n]) * H * W;
    std::fill(dst, dst + H * W, 1.0f);
  }
  return t;
}

static void check_latent(const ArchSpec& spec, const TensorPtr& z, const char* who) {
  FF_CHECK_ARG(z->shape.size() == 4, "%s: latent must be NCHW, got %s", who,
               shape_str(z->shape).c_str());
  FF_CHECK_ARG(z->shape[1] == spec.latent_channels && z->shape[2] == spec.latent_extent() &&
                   z->shape[3] == spec.latent_extent(),
               "%s: latent %s does not match spec %dx%dx%d", who, shape_str(z->shape).c_str(),
               spec.latent_channels, spec.latent_extent(), spec.latent_extent());
}

TensorPtr decode(DecoderModel& dec, const TensorPtr& z, const std::vector<int>& ys, Mode mode,
                 Graph* g) {
  check_latent(dec.spec, z, "decode");
  FF_CHECK_ARG((int64_t)ys.size() == z->shape[0] || dec.attr_planes == 0,
               "decode: %zu attributes for batch of %lld", ys.size(), (long long)z->shape[0]);
  TensorPtr h = z;
  for (auto& blk : dec.blocks) {
    if (dec.attr_planes > 0) {
      auto planes = attr_planes_batch(ys, dec.attr_planes, h->shape[2], h->shape[3]);
      h = concat_channels<float>(g, h, planes);
    }
    h = forward_block(blk, h, mode, g);
  }
  return h;
}

TensorPtr decode(DecoderModel& dec, const TensorPtr& z, int y, Mode mode, Graph* g) {
  return decode(dec, z, std::vector<int>((size_t)z->shape[0], y), mode, g);
}

TensorPtr discriminate_logits(DiscriminatorModel& dis, const TensorPtr& z, Mode mode, Graph* g) {
  check_latent(dis.spec, z, "discriminate");
  TensorPtr h = forward_block(dis.conv, z, mode, g);
  h = reshape<float>(g, h, {h->shape[0], h->shape[1] * h->shape[2] * h->shape[3]});
  h = linear<float>(g, h, dis.fc1_w, dis.fc1_b);
  h = activation<float>(g, h, Act::leaky_relu((double)dis.spec.leaky_slope));
  return linear<float>(g, h, dis.fc2_w, dis.fc2_b);
}

TensorPtr discriminate(DiscriminatorModel& dis, const TensorPtr& z) {
  auto logits = discriminate_logits(dis, z, Mode::Eval, nullptr);
  return make_tensor<float>(logits->shape, softmax_rows(logits));
}

TensorPtr classify_logits(ClassifierModel& clf, const TensorPtr& z, Mode mode, Graph* g,
                          std::mt19937* dropout_rng) {
  check_latent(clf.spec, z, "classify");
  const bool drop = mode == Mode::Train && clf.spec.dropout_rate > 0.0f;
  FF_CHECK_ARG(!drop || dropout_rng, "classify: train mode needs a dropout rng");
  TensorPtr h = z;
  for (size_t i = 0; i < clf.convs.size(); ++i) {
    h = forward_block(clf.convs[i], h, mode, g);
    if (i == 1) h = maxpool2d<float>(g, h, 2);
    if (drop && (i == 0 || i == 2 || i == 3))
      h = dropout<float>(g, h, (double)clf.spec.dropout_rate, mode, *dropout_rng);
  }
  h = reshape<float>(g, h, {h->shape[0], h->shape[1] * h->shape[2] * h->shape[3]});
  if (drop) h = dropout<float>(g, h, (double)clf.spec.dropout_rate, mode, *dropout_rng);
  return linear<float>(g, h, clf.fc_w, clf.fc_b);
}

TensorPtr classify(ClassifierModel& clf, const TensorPtr& z) {
  auto logits = classify_logits(clf, z, Mode::Eval, nullptr, nullptr);
  return make_tensor<float>(logits->shape, softmax_rows(logits));
}

std::vector<int> argmax_rows(const TensorPtr& rows) {
  FF_CHECK_ARG(rows->shape.size() == 2, "argmax_rows: expected [N,K], got %s",
               shape_str(rows->shape).c_str());
  const int64_t N = rows->shape[0], K = rows->shape[1];
  std::vector<int> out((size_t)N);
  for (int64_t i = 0; i < N; ++i) {
    const float* row = rows->data() + i * K;
    int best = 0;
    for (int64_t k = 1; k < K; ++k)
      if (row[k] > row[best]) best = (int)k;
    out[(size_t)i] = best;
  }
  return out;
}

// ---- parameter access ----

std::vector<TensorPtr> params(EncoderModel& m) {
  std::vector<TensorPtr> out;
  for (auto& blk : m.blocks) block_params(blk, out);
  return out;
}
std::vector<TensorPtr> params(DecoderModel& m) {
  std::vector<TensorPtr> out;
  for (auto& blk : m.blocks) block_params(blk, out);
  return out;
}
std::vector<TensorPtr> params(DiscriminatorModel& m) {
  std::vector<TensorPtr> out;
  block_params(m.conv, out);
  out.insert(out.end(), {m.fc1_w, m.fc1_b, m.fc2_w, m.fc2_b});
  return out;
}
std::vector<TensorPtr> params(ClassifierModel& m) {
  std::vector<TensorPtr> out;
  for (auto& blk : m.convs) block_params(blk, out);
  out.insert(out.end(), {m.fc_w, m.fc_b});
  return out;
}

template <typename M>
static int64_t count_params(M& m) {
  int64_t n = 0;
  for (auto& p : params(m)) n += p->numel();
  return n;
}
int64_t param_count(EncoderModel& m) { return count_params(m); }
int64_t param_count(DecoderModel& m) { return count_params(m); }
int64_t param_count(DiscriminatorModel& m) { return count_params(m); }
int64_t param_count(ClassifierModel& m) { return count_params(m); }

// ---- named tensors / persistence ----

std::vector<NamedTensor> named_tensors(const EncoderModel& m) {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < m.blocks.size(); ++i)
    block_named(m.blocks[i], "block" + std::to_string(i) + ".", out);
  return out;
}
std::vector<NamedTensor> named_tensors(const DecoderModel& m) {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < m.blocks.size(); ++i)
    block_named(m.blocks[i], "block" + std::to_string(i) + ".", out);
  return out;
}
std::vector<NamedTensor> named_tensors(const DiscriminatorModel& m) {
  std::vector<NamedTensor> out;
  block_named(m.conv, "conv.", out);
  auto push = [&](const char* name, const TensorPtr& t) {
    out.push_back(NamedTensor{name, t->shape, t->values});
  };
  push("fc1.w", m.fc1_w);
  push("fc1.b", m.fc1_b);
  push("fc2.w", m.fc2_w);
  push("fc2.b", m.fc2_b);
  return out;
}
std::vector<NamedTensor> named_tensors(const ClassifierModel& m) {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < m.convs.size(); ++i)
    block_named(m.convs[i], "conv" + std::to_string(i) + ".", out);
  auto push = [&](const char* name, const TensorPtr& t) {
    out.push_back(NamedTensor{name, t->shape, t->values});
  };
  push("fc.w", m.fc_w);
  push("fc.b", m.fc_b);
  return out;
}

namespace {

void write_model(const std::filesystem::path& path, const ArchSpec& spec, const char* kind,
                 int attr_planes, std::vector<NamedTensor> tensors) {
  std::vector<NamedTensor> all;
  all.push_back(header_record(spec.canonical_text(kind, attr_planes)));
  for (auto& t : tensors) all.push_back(std::move(t));
  write_snapshot(path, all);
}

struct LoadedHeader {
  ArchSpec spec;
  std::string kind;
  int attr_planes = 0;
  std::map<std::string, const NamedTensor*> by_name;
  std::vector<NamedTensor> storage;
};

LoadedHeader load_header(const std::filesystem::path& path, const char* expect_kind) {
  LoadedHeader h;
  h.storage = read_snapshot(path);
  if (h.storage.empty() || h.storage[0].name != kArchSpecRecord)
    throw FormatError("model file " + path.string() + " has no archspec header record");
  h.spec = ArchSpec::parse_canonical_text(header_text(h.storage[0]), &h.kind, &h.attr_planes);
  FF_CHECK_ARG(h.kind == expect_kind, "model file %s holds a '%s' model, expected '%s'",
               path.string().c_str(), h.kind.c_str(), expect_kind);
  for (size_t i = 1; i < h.storage.size(); ++i) {
    if (!h.by_name.emplace(h.storage[i].name, &h.storage[i]).second)
      throw FormatError("model file duplicates tensor " + h.storage[i].name);
  }
  return h;
}

void finish_load(LoadedHeader& h, const std::filesystem::path& path) {
  if (!h.by_name.empty())
    throw FormatError("model file " + path.string() + " has unexpected tensor " +
                      h.by_name.begin()->first);
}

void restore_fc(std::map<std::string, const NamedTensor*>& by_name, const std::string& name,
                const TensorPtr& t) {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw FormatError("model file missing tensor " + name);
  FF_CHECK_ARG(it->second->shape == t->shape, "model tensor %s has shape %s, expected %s",
               name.c_str(), shape_str(it->second->shape).c_str(), shape_str(t->shape).c_str());
  t->values = it->second->values;
  by_name.erase(it);
}

}  // namespace

void save_model(const EncoderModel& m, const std::filesystem::path& path) {
  write_model(path, m.spec, "encoder", 0, named_tensors(m));
}
void save_model(const DecoderModel& m, const std::filesystem::path& path) {
  write_model(path, m.spec, "decoder", m.attr_planes, named_tensors(m));
}
void save_model(const DiscriminatorModel& m, const std::filesystem::path& path) {
  write_model(path, m.spec, "discriminator", 0, named_tensors(m));
}
void save_model(const ClassifierModel& m, const std::filesystem::path& path) {
  write_model(path, m.spec, "classifier", 0, named_tensors(m));
}

EncoderModel load_encoder(const std::filesystem::path& path) {
  auto h = load_header(path, "encoder");
  std::mt19937 rng(0);
  EncoderModel m = build_encoder(h.spec, rng);
  for (size_t i = 0; i < m.blocks.size(); ++i)
    block_restore(m.blocks[i], "block" + std::to_string(i) + ".", h.by_name);
  finish_load(h, path);
  return m;
}

DecoderModel load_decoder(const std::filesystem::path& path) {
  auto h = load_header(path, "decoder");
  std::mt19937 rng(0);
  DecoderModel m = build_decoder(h.spec, rng, h.attr_planes > 0);
  FF_CHECK_ARG(m.attr_planes == h.attr_planes, "decoder attr_planes %d unsupported",
               h.attr_planes);
  for (size_t i = 0; i < m.blocks.size(); ++i)
    block_restore(m.blocks[i], "block" + std::to_string(i) + ".", h.by_name);
  finish_load(h, path);
  return m;
}

DiscriminatorModel load_discriminator(const std::filesystem::path& path) {
  auto h = load_header(path, "discriminator");
  std::mt19937 rng(0);
  DiscriminatorModel m = build_discriminator(h.spec, rng);
  block_restore(m.conv, "conv.", h.by_name);
  restore_fc(h.by_name, "fc1.w", m.fc1_w);
  restore_fc(h.by_name, "fc1.b", m.fc1_b);
  restore_fc(h.by_name, "fc2.w", m.fc2_w);
  restore_fc(h.by_name, "fc2.b", m.fc2_b);
  finish_load(h, path);
  return m;
}

ClassifierModel load_classifier(const std::filesystem::path& path) {
  auto h = load_header(path, "classifier");
  std::mt19937 rng(0);
  ClassifierModel m = build_classifier(h.spec, rng);
  for (size_t i = 0; i < m.convs.size(); ++i)
    block_restore(m.convs[i], "conv" + std::to_string(i) + ".", h.by_name);
  restore_fc(h.by_name, "fc.w", m.fc_w);
  restore_fc(h.by_name, "fc.b", m.fc_b);
  finish_load(h, path);
  return m;
}

std::string peek_model_kind(const std::filesystem::path& path) {
  auto tensors = read_snapshot(path);
  if (tensors.empty() || tensors[0].name != kArchSpecRecord)
    throw FormatError("model file " + path.string() + " has no archspec header record");
  std::string kind;
  int planes;
  ArchSpec::parse_canonical_text(header_text(tensors[0]), &kind, &planes);
  return kind;
}

// ---- deep copies ----

EncoderModel deep_copy(const EncoderModel& m) {
  EncoderModel c;
  c.spec = m.spec;
  for (const auto& blk : m.blocks) c.blocks.push_back(deep_copy_block(blk));
  return c;
}
DecoderModel deep_copy(const DecoderModel& m) {
  DecoderModel c;
  c.spec = m.spec;
  c.attr_planes = m.attr_planes;
  for (const auto& blk : m.blocks) c.blocks.push_back(deep_copy_block(blk));
  return c;
}
DiscriminatorModel deep_copy(const DiscriminatorModel& m) {
  DiscriminatorModel c;
  c.spec = m.spec;
  c.conv = deep_copy_block(m.conv);
  c.fc1_w = clone(m.fc1_w);
  c.fc1_b = clone(m.fc1_b);
  c.fc2_w = clone(m.fc2_w);
  c.fc2_b = clone(m.fc2_b);
  return c;
}
ClassifierModel deep_copy(const ClassifierModel& m) {
  ClassifierModel c;
  c.spec = m.spec;
  for (const auto& blk : m.convs) c.convs.push_back(deep_copy_block(blk));
  c.fc_w = clone(m.fc_w);
  c.fc_b = clone(m.fc_b);
  return c;
}

}  // namespace fairfader
