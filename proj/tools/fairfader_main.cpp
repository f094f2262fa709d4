// fairfader: attribute-invariant representation training and stratified
// fairness evaluation, end to end.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fairfader/experiment.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", [&opts](const std::vector<std::string>& v) {
        opts.seed = std::stoull(v.at(0));
        return true;
      },
      "Override the config seed");
  cmd->add_option("--out", [&opts](const std::vector<std::string>& v) {
        opts.out = v.at(0);
        return true;
      },
      "Override the config output directory");
}

fairfader::ExperimentConfig load(const CommonOpts& opts) {
  std::optional<std::filesystem::path> out;
  if (opts.out) out = *opts.out;
  return fairfader::load_experiment_config(opts.config_path, opts.seed, out);
}

int thread_cap_from_env() {
  // Caps internal parallelism; the numeric kernels run serially, so any
  // value >= 1 is honored trivially. Kept validated for forward compatibility.
  const char* v = std::getenv("FAIRFADER_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  if (n < 1) {
    std::cerr << "FAIRFADER_THREADS must be >= 1\n";
    std::exit(2);
  }
  return n;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute-invariant (fader) representation training and fairness evaluation"};
  app.require_subcommand(1);
  thread_cap_from_env();

  CommonOpts gen_opts, fader_opts, ae_opts, clf_opts, eval_opts, run_opts;
  bool fader_resume = false, ae_resume = false;
  bool clf_weighted = false;
  std::string clf_encoder, clf_name;
  std::string eval_model, eval_encoder, eval_split = "test";
  uint64_t gc_seed = 7;
  int gc_instances = 20;

  auto* gen = app.add_subcommand("gen-synth", "Generate the synthetic biased dataset");
  add_common(gen, gen_opts);

  auto* fader = app.add_subcommand("train-fader", "Adversarial encoder/decoder/discriminator training");
  add_common(fader, fader_opts);
  fader->add_flag("--resume", fader_resume, "Continue from the last checkpoint");

  auto* ae = app.add_subcommand("train-ae", "Vanilla autoencoder training");
  add_common(ae, ae_opts);
  ae->add_flag("--resume", ae_resume, "Continue from the last checkpoint");

  auto* clf = app.add_subcommand("train-clf", "Train a gender classifier on frozen latents");
  add_common(clf, clf_opts);
  clf->add_option("encoder", clf_encoder, "Frozen encoder model file")->required();
  clf->add_flag("--weighted", clf_weighted, "Inverse-frequency race-class loss weights");
  clf->add_option("--name", clf_name, "Output model name (default by encoder provenance)");

  auto* ev = app.add_subcommand("eval", "Stratified evaluation of a classifier");
  add_common(ev, eval_opts);
  ev->add_option("model", eval_model, "Classifier model file")->required();
  ev->add_option("encoder", eval_encoder, "Frozen encoder model file")->required();
  ev->add_option("--split", eval_split, "Split to evaluate (train|validation|test)");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every kernel");
  gc->add_option("--seed", gc_seed, "Suite seed");
  gc->add_option("--instances", gc_instances, "Random instances per op");

  auto* run = app.add_subcommand("run-experiment", "Full pipeline: data, training, classifiers, reports");
  add_common(run, run_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) cmd_gen_synth(load(gen_opts));
    if (fader->parsed()) cmd_train_fader(load(fader_opts), fader_resume);
    if (ae->parsed()) cmd_train_ae(load(ae_opts), ae_resume);
    if (clf->parsed()) cmd_train_clf(load(clf_opts), clf_encoder, clf_weighted, clf_name);
    if (ev->parsed()) cmd_eval(load(eval_opts), eval_model, eval_encoder, eval_split);
    if (gc->parsed()) fairfader::cmd_grad_check(gc_seed, gc_instances);
    if (run->parsed()) cmd_run_experiment(load(run_opts));
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
