#include "fairfader/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fairfader {

using ordered_json = nlohmann::ordered_json;

std::pair<std::vector<double>, double> stratified_accuracy(
    const std::vector<PredictionRecord>& preds, int num_classes) {
  FF_CHECK_ARG(num_classes >= 1, "stratified_accuracy: num_classes must be >= 1");
  FF_CHECK_ARG(!preds.empty(), "stratified_accuracy: empty prediction list");
  std::vector<int64_t> total((size_t)num_classes, 0), correct((size_t)num_classes, 0);
  for (const auto& p : preds) {
    FF_CHECK_ARG(p.race >= 0 && p.race < num_classes,
                 "stratified_accuracy: race %d out of range [0,%d)", p.race, num_classes);
    FF_CHECK_ARG(p.predicted_gender >= 0 && p.true_gender >= 0,
                 "stratified_accuracy: negative label for '%s'", p.source_id.c_str());
    total[(size_t)p.race]++;
    if (p.predicted_gender == p.true_gender) correct[(size_t)p.race]++;
  }
  std::vector<double> per_class((size_t)num_classes);
  int64_t all = 0, all_correct = 0;
  for (int k = 0; k < num_classes; ++k) {
    FF_CHECK_ARG(total[(size_t)k] > 0, "stratified_accuracy: class %d has no samples", k);
    per_class[(size_t)k] = 100.0 * (double)correct[(size_t)k] / (double)total[(size_t)k];
    all += total[(size_t)k];
    all_correct += correct[(size_t)k];
  }
  return {per_class, 100.0 * (double)all_correct / (double)all};
}

double accuracy_variance(const std::vector<double>& per_class) {
  const size_t K = per_class.size();
  FF_CHECK_ARG(K >= 2, "accuracy_variance: need at least 2 classes, got %zu", K);
  double mean = 0;
  for (double a : per_class) mean += a;
  mean /= (double)K;
  double acc = 0;
  for (double a : per_class) acc += (a - mean) * (a - mean);
  return acc / (double)(K - 1);
}

EvalReport make_eval_report(const std::vector<PredictionRecord>& preds, int num_classes,
                            const std::string& model_id) {
  EvalReport r;
  auto [per_class, overall] = stratified_accuracy(preds, num_classes);
  r.per_class_accuracy = per_class;
  r.overall_accuracy = overall;
  r.variance = accuracy_variance(per_class);
  r.counts.assign((size_t)num_classes, 0);
  for (const auto& p : preds) r.counts[(size_t)p.race]++;
  r.model_id = model_id;
  return r;
}

namespace {

// Chunked eval-mode sweep; returns per-race (correct, total).
std::pair<std::vector<int64_t>, std::vector<int64_t>> dis_sweep(DiscriminatorModel& dis,
                                                                const TensorPtr& latents,
                                                                const std::vector<int>& races,
                                                                int num_classes) {
  FF_CHECK_ARG(latents->shape.size() == 4, "discriminator_accuracy: latents must be NCHW");
  const int64_t N = latents->shape[0];
  FF_CHECK_ARG(N > 0 && (int64_t)races.size() == N,
               "discriminator_accuracy: %zu labels for %lld latents", races.size(), (long long)N);
  std::vector<int64_t> correct((size_t)num_classes, 0), total((size_t)num_classes, 0);
  const int64_t chunk = 64;
  const int64_t sample = latents->numel() / N;
  for (int64_t at = 0; at < N; at += chunk) {
    const int64_t n = std::min(chunk, N - at);
    auto zb = zeros<float>({n, latents->shape[1], latents->shape[2], latents->shape[3]});
    std::copy(latents->data() + at * sample, latents->data() + (at + n) * sample, zb->data());
    auto probs = discriminate(dis, zb);
    auto pred = argmax_rows(probs);
    for (int64_t i = 0; i < n; ++i) {
      const int race = races[(size_t)(at + i)];
      FF_CHECK_ARG(race >= 0 && race < num_classes,
                   "discriminator_accuracy: race %d out of range [0,%d)", race, num_classes);
      total[(size_t)race]++;
      if (pred[(size_t)i] == race) correct[(size_t)race]++;
    }
  }
  return {correct, total};
}

}  // namespace

double discriminator_accuracy(DiscriminatorModel& dis, const TensorPtr& latents,
                              const std::vector<int>& races) {
  auto [correct, total] = dis_sweep(dis, latents, races, dis.spec.num_attrs);
  int64_t c = 0, t = 0;
  for (size_t k = 0; k < total.size(); ++k) {
    c += correct[k];
    t += total[k];
  }
  return 100.0 * (double)c / (double)t;
}

double discriminator_balanced_accuracy(DiscriminatorModel& dis, const TensorPtr& latents,
                                       const std::vector<int>& races, int num_classes) {
  auto [correct, total] = dis_sweep(dis, latents, races, num_classes);
  double acc = 0;
  int present = 0;
  for (int k = 0; k < num_classes; ++k) {
    if (total[(size_t)k] == 0) continue;
    acc += 100.0 * (double)correct[(size_t)k] / (double)total[(size_t)k];
    present++;
  }
  FF_CHECK_ARG(present > 0, "discriminator_balanced_accuracy: no labeled latents");
  return acc / (double)present;
}

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

void emit_report(const EvalReport& report, const std::filesystem::path& path) {
  ordered_json j;
  j["model_id"] = report.model_id;
  j["counts"] = report.counts;
  ordered_json pc = ordered_json::array();
  for (double a : report.per_class_accuracy) pc.push_back(round2(a));
  j["per_class_accuracy"] = pc;
  j["overall_accuracy"] = round2(report.overall_accuracy);
  j["variance"] = round2(report.variance);
  ordered_json raw;
  raw["per_class_accuracy"] = report.per_class_accuracy;
  raw["overall_accuracy"] = report.overall_accuracy;
  raw["variance"] = report.variance;
  j["raw"] = raw;
  std::ofstream os(path, std::ios::trunc);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open report " + path.string());
  ordered_json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("report parse failure: " + std::string(e.what()));
  }
  EvalReport r;
  r.model_id = j.at("model_id").get<std::string>();
  for (const auto& c : j.at("counts")) r.counts.push_back(c.get<int64_t>());
  const auto& raw = j.at("raw");
  for (const auto& a : raw.at("per_class_accuracy")) r.per_class_accuracy.push_back(a.get<double>());
  r.overall_accuracy = raw.at("overall_accuracy").get<double>();
  r.variance = raw.at("variance").get<double>();
  return r;
}

void write_predictions_csv(const std::vector<PredictionRecord>& preds,
                           const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  os << "source_id,pred,truth,race\n";
  for (const auto& p : preds)
    os << p.source_id << ',' << p.predicted_gender << ',' << p.true_gender << ',' << p.race << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open predictions " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "source_id,pred,truth,race")
    throw FormatError("predictions CSV header mismatch in " + path.string());
  std::vector<PredictionRecord> out;
  size_t lineno = 1;
  while (std::getline(is, line)) {
    lineno++;
    if (line.empty()) continue;
    std::istringstream ls(line);
    PredictionRecord p;
    std::string field;
    auto take_int = [&](int& dst) {
      if (!std::getline(ls, field, ','))
        throw FormatError(strfmt("predictions CSV row %zu is short", lineno));
      dst = std::stoi(field);
    };
    if (!std::getline(ls, p.source_id, ','))
      throw FormatError(strfmt("predictions CSV row %zu is short", lineno));
    take_int(p.predicted_gender);
    take_int(p.true_gender);
    take_int(p.race);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace fairfader
