#include "fairfader/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "fairfader/rng.hpp"
#include "fairfader/serialize.hpp"
#include "image_io.hpp"

namespace fairfader {

using ordered_json = nlohmann::ordered_json;

namespace {

bool parse_int_field(const std::string& s, int& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

void check_unique_ids(const std::vector<SampleRecord>& records) {
  std::set<std::string> seen;
  for (const auto& r : records)
    FF_CHECK_ARG(seen.insert(r.source_id).second, "duplicate source_id '%s'",
                 r.source_id.c_str());
}

std::string records_hash(const std::vector<SampleRecord>& records) {
  std::string acc;
  for (const auto& r : records) {
    acc += r.source_id;
    acc += ':';
    acc += std::to_string(r.gender);
    acc += ':';
    acc += std::to_string(r.race);
    acc += ';';
  }
  return bytes_hash_hex(acc.data(), acc.size());
}

}  // namespace

UtkAttrs parse_utk_filename(const std::string& name) {
  const std::string stem = std::filesystem::path(name).stem().string();
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t us = stem.find('_', start);
    if (us == std::string::npos) {
      parts.push_back(stem.substr(start));
      break;
    }
    parts.push_back(stem.substr(start, us - start));
    start = us + 1;
  }
  if (parts.size() < 4)
    throw ParseError("filename '" + name + "' is missing fields (need [age]_[gender]_[race]_[tag])",
                     name);
  UtkAttrs a{};
  if (!parse_int_field(parts[0], a.age) || a.age < 0)
    throw ParseError("filename '" + name + "' has a malformed age field '" + parts[0] + "'", name);
  if (!parse_int_field(parts[1], a.gender) || a.gender < 0 || a.gender > 1)
    throw ParseError("filename '" + name + "' has a malformed gender field '" + parts[1] + "'",
                     name);
  if (!parse_int_field(parts[2], a.race) || a.race < 0 || a.race >= kNumRaces)
    throw ParseError("filename '" + name + "' has a malformed race field '" + parts[2] + "'", name);
  return a;
}

LoadResult load_dataset(const std::filesystem::path& dir, int target_size) {
  FF_CHECK_ARG(target_size >= 1, "load_dataset: target_size must be >= 1, got %d", target_size);
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("dataset directory not found: " + dir.string());

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = lower_ext(entry.path());
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });

  LoadResult out;
  for (const auto& file : files) {
    const std::string name = file.filename().string();
    try {
      const UtkAttrs attrs = parse_utk_filename(name);
      const DecodedImage img = decode_image_file(file);
      SampleRecord rec;
      rec.image = make_tensor<float>({3, target_size, target_size},
                                     resize_bilinear_chw(img, target_size));
      rec.gender = attrs.gender;
      rec.race = attrs.race;
      rec.age = attrs.age;
      rec.source_id = name;
      out.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      out.errors.push_back(ItemError{name, e.what()});
    }
  }
  check_unique_ids(out.records);
  out.manifest_hash = records_hash(out.records);
  return out;
}

DatasetSplit make_splits(const std::vector<SampleRecord>& records, int n_test_per_race,
                         double val_fraction, uint64_t seed) {
  FF_CHECK_ARG(n_test_per_race >= 0, "make_splits: n_test_per_race must be >= 0, got %d",
               n_test_per_race);
  FF_CHECK_ARG(val_fraction >= 0.0 && val_fraction < 1.0,
               "make_splits: val_fraction must lie in [0,1), got %g", val_fraction);
  check_unique_ids(records);

  int num_classes = 0;
  for (const auto& r : records) num_classes = std::max(num_classes, r.race + 1);
  std::vector<std::vector<size_t>> by_race((size_t)num_classes);
  for (size_t i = 0; i < records.size(); ++i) by_race[(size_t)records[i].race].push_back(i);
  for (int r = 0; r < num_classes; ++r)
    FF_CHECK_ARG((int)by_race[(size_t)r].size() > n_test_per_race,
                 "make_splits: race class %d has %zu records, need more than %d", r,
                 by_race[(size_t)r].size(), n_test_per_race);

  auto rng = sub_rng(seed, "splits");
  std::vector<size_t> test_idx, rest_idx;
  for (int r = 0; r < num_classes; ++r) {
    auto idx = by_race[(size_t)r];
    std::shuffle(idx.begin(), idx.end(), rng);
    test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + n_test_per_race);
    rest_idx.insert(rest_idx.end(), idx.begin() + n_test_per_race, idx.end());
  }
  std::sort(rest_idx.begin(), rest_idx.end());
  std::shuffle(rest_idx.begin(), rest_idx.end(), rng);
  const size_t n_val = (size_t)std::floor(val_fraction * (double)rest_idx.size());

  DatasetSplit split;
  split.seed = seed;
  auto emit = [&](std::vector<SampleRecord>& dst, std::vector<size_t> idx) {
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      return records[a].source_id < records[b].source_id;
    });
    for (size_t i : idx) dst.push_back(records[i]);
  };
  emit(split.test, test_idx);
  emit(split.validation, {rest_idx.begin(), rest_idx.begin() + (ptrdiff_t)n_val});
  emit(split.train, {rest_idx.begin() + (ptrdiff_t)n_val, rest_idx.end()});

  std::string acc = "seed=" + std::to_string(seed) + ";train=" + records_hash(split.train) +
                    ";val=" + records_hash(split.validation) + ";test=" + records_hash(split.test);
  split.manifest_hash = bytes_hash_hex(acc.data(), acc.size());
  return split;
}

void SynthConfig::validate() const {
  FF_CHECK_ARG(n_samples >= 1, "synth: n_samples must be >= 1, got %d", n_samples);
  FF_CHECK_ARG(image_size >= 8 && (image_size & (image_size - 1)) == 0,
               "synth: image_size must be a power of two >= 8, got %d", image_size);
  FF_CHECK_ARG(num_classes >= 2, "synth: num_classes must be >= 2, got %d", num_classes);
  FF_CHECK_ARG((int)class_fractions.size() == num_classes,
               "synth: class_fractions has %zu entries for %d classes", class_fractions.size(),
               num_classes);
  double sum = 0;
  for (double f : class_fractions) {
    FF_CHECK_ARG(f > 0.0, "synth: class_fractions must be positive, got %g", f);
    sum += f;
  }
  FF_CHECK_ARG(std::abs(sum - 1.0) < 1e-6, "synth: class_fractions sum to %g, expected 1", sum);
  FF_CHECK_ARG(gender_balance >= 0.0 && gender_balance <= 1.0,
               "synth: gender_balance must lie in [0,1], got %g", gender_balance);
  FF_CHECK_ARG(nuisance_correlation >= 0.0 && nuisance_correlation <= 1.0,
               "synth: nuisance_correlation must lie in [0,1], got %g", nuisance_correlation);
  FF_CHECK_ARG(noise_std >= 0.0, "synth: noise_std must be >= 0, got %g", noise_std);
}

std::vector<SampleRecord> gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  auto rng = sub_rng(cfg.seed, "synth");
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int S = cfg.image_size;
  const int K = cfg.num_classes;
  const int bar = std::max(2, S / 8);
  const int lo = S / 2 - bar / 2, hi = lo + bar;
  constexpr double kBarLum = 0.75;
  constexpr double kAttenuation = 0.3;
  constexpr double kBandHalfWidth = 0.1;

  // one background luminance band per race: disjoint intervals centered on
  // levels spread over [-0.6, 0.4], each sample drawn within its race band
  std::vector<double> levels((size_t)K);
  for (int r = 0; r < K; ++r) levels[(size_t)r] = -0.6 + (double)r / (K - 1);

  std::vector<double> cum((size_t)K);
  double acc = 0;
  for (int r = 0; r < K; ++r) {
    acc += cfg.class_fractions[(size_t)r];
    cum[(size_t)r] = acc;
  }

  std::vector<SampleRecord> out;
  out.reserve((size_t)cfg.n_samples);
  for (int i = 0; i < cfg.n_samples; ++i) {
    const double ur = unit(rng);
    int race = K - 1;
    for (int r = 0; r < K; ++r)
      if (ur < cum[(size_t)r]) {
        race = r;
        break;
      }
    const int gender = unit(rng) < cfg.gender_balance ? 1 : 0;
    const bool confounded = unit(rng) < cfg.nuisance_correlation && race > 0;

    const double bg = levels[(size_t)race] + kBandHalfWidth * (2.0 * unit(rng) - 1.0);
    const double bar_lum = confounded ? bg + kAttenuation * (kBarLum - bg) : kBarLum;

    auto img = full<float>({1, S, S}, (float)bg);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const bool on = gender == 0 ? (x >= lo && x < hi) : (y >= lo && y < hi);
        if (on) img->values[(size_t)(y * S + x)] = (float)bar_lum;
      }
    if (cfg.noise_std > 0.0) {
      std::normal_distribution<double> noise(0.0, cfg.noise_std);
      for (auto& v : img->values)
        v = std::clamp((float)(v + noise(rng)), -1.0f, 1.0f);
    }

    SampleRecord rec;
    rec.image = std::move(img);
    rec.gender = gender;
    rec.race = race;
    rec.source_id = strfmt("synth_%06d", i);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_raw_dataset(const std::vector<SampleRecord>& records,
                       const std::filesystem::path& dir) {
  check_unique_ids(records);
  std::filesystem::create_directories(dir);
  ordered_json manifest;
  manifest["format"] = "fairfader-raw-v1";
  manifest["samples"] = ordered_json::array();
  for (const auto& rec : records) {
    const auto file = dir / (rec.source_id + ".raw");
    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + file.string());
    os.write((const char*)rec.image->data(), (std::streamsize)(rec.image->values.size() * 4));
    if (!os) throw std::runtime_error("write failed for " + file.string());
    ordered_json s;
    s["source_id"] = rec.source_id;
    s["gender"] = rec.gender;
    s["race"] = rec.race;
    if (rec.age)
      s["age"] = *rec.age;
    else
      s["age"] = nullptr;
    s["shape"] = rec.image->shape;
    manifest["samples"].push_back(std::move(s));
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  os << manifest.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed for manifest.json in " + dir.string());
}

LoadResult load_raw_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("missing manifest.json in " + dir.string());
  ordered_json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json parse failure in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "fairfader-raw-v1")
    throw FormatError("manifest.json in " + dir.string() + " has an unknown format tag");

  LoadResult out;
  for (const auto& s : manifest.at("samples")) {
    SampleRecord rec;
    rec.source_id = s.at("source_id").get<std::string>();
    rec.gender = s.at("gender").get<int>();
    rec.race = s.at("race").get<int>();
    if (!s.at("age").is_null()) rec.age = s.at("age").get<int>();
    Shape shape;
    for (const auto& e : s.at("shape")) shape.push_back(e.get<int64_t>());
    const int64_t n = shape_numel(shape);
    const auto file = dir / (rec.source_id + ".raw");
    std::ifstream rs(file, std::ios::binary);
    if (!rs) throw std::runtime_error("missing raw tensor " + file.string());
    std::vector<float> values((size_t)n);
    rs.read((char*)values.data(), (std::streamsize)(n * 4));
    if (rs.gcount() != (std::streamsize)(n * 4))
      throw FormatError("raw tensor " + file.string() + " truncated", rs.gcount());
    for (float v : values)
      if (!std::isfinite(v)) throw FormatError("raw tensor " + file.string() + " holds non-finite values");
    rec.image = make_tensor<float>(std::move(shape), std::move(values));
    out.records.push_back(std::move(rec));
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const auto& a, const auto& b) { return a.source_id < b.source_id; });
  check_unique_ids(out.records);
  out.manifest_hash = file_hash_hex(manifest_path);
  return out;
}

void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& path) {
  ordered_json j;
  j["seed"] = split.seed;
  j["manifest_hash"] = split.manifest_hash;
  auto ids = [](const std::vector<SampleRecord>& rs) {
    ordered_json a = ordered_json::array();
    for (const auto& r : rs) a.push_back(r.source_id);
    return a;
  };
  j["train"] = ids(split.train);
  j["validation"] = ids(split.validation);
  j["test"] = ids(split.test);
  std::ofstream os(path, std::ios::trunc);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

DatasetSplit apply_split_manifest(const std::vector<SampleRecord>& records,
                                  const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing split manifest " + path.string());
  ordered_json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("split manifest parse failure: " + std::string(e.what()));
  }
  std::map<std::string, const SampleRecord*> by_id;
  for (const auto& r : records) by_id[r.source_id] = &r;
  DatasetSplit split;
  split.seed = j.at("seed").get<uint64_t>();
  split.manifest_hash = j.value("manifest_hash", "");
  auto fill = [&](const char* key, std::vector<SampleRecord>& dst) {
    for (const auto& id : j.at(key)) {
      auto it = by_id.find(id.get<std::string>());
      FF_CHECK_ARG(it != by_id.end(), "split manifest names unknown source_id '%s'",
                   id.get<std::string>().c_str());
      dst.push_back(*it->second);
    }
  };
  fill("train", split.train);
  fill("validation", split.validation);
  fill("test", split.test);
  return split;
}

std::vector<double> race_fractions(const std::vector<SampleRecord>& records, int num_classes) {
  FF_CHECK_ARG(num_classes >= 1, "race_fractions: num_classes must be >= 1");
  FF_CHECK_ARG(!records.empty(), "race_fractions: empty record list");
  std::vector<double> f((size_t)num_classes, 0.0);
  for (const auto& r : records) {
    FF_CHECK_ARG(r.race >= 0 && r.race < num_classes, "race_fractions: race %d out of range [0,%d)",
                 r.race, num_classes);
    f[(size_t)r.race] += 1.0;
  }
  for (auto& v : f) v /= (double)records.size();
  return f;
}

}  // namespace fairfader
