#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pairrank/cli/commands.hpp"
#include "pairrank/util/memory.hpp"

using namespace pairrank;
using cli::ExperimentConfig;

namespace {

constexpr int kUsageExit = 1;
constexpr int kFailureExit = 2;

/// Flag values; each is applied only when given, on top of the config file.
struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  unsigned threads = 0;

  std::string dataset;
  int subjects = 0;
  int timepoints = 0;
  int image_size = 0;
  bool force = false;

  std::string data;
  int input_size = 0;
  std::string task;
  std::string lr;
  int batch_size = 0;
  int patience = 0;
  int max_epochs = 0;
  int grid_max_epochs = 0;
  std::string ablation;
  std::string preset;
  bool augment = false;
  int subjects_per_block = 0;
  std::uint64_t split_seed = 0;

  std::string ckpt;
  std::string split;
  std::string method;
  bool dice = false;
  bool robustness = false;
  std::string basis;
  int pairs = 0;
  std::vector<std::string> pair_specs;
  bool duplicate = false;
  double alpha = 0.6;

  double tol = 1e-4;
  double eps = 1e-5;
  std::string scenario;
  std::vector<double> fractions;
};

bool given(const CLI::App* app, const std::string& name) {
  try {
    return app->get_option(name)->count() > 0;
  } catch (const CLI::OptionNotFound&) {
    return false;
  }
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON experiment config; flags override its fields")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "Global seed");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--threads", f.threads, "Cap on internal parallelism (PAIRRANK_THREADS)");
}

void add_train_flags(CLI::App* app, Flags& f) {
  app->add_option("--data", f.data, "Dataset directory");
  app->add_option("--input-size", f.input_size, "Resize manifest images to this square size");
  app->add_option("--task", f.task, "supervised | self-supervised | csr");
  app->add_option("--lr", f.lr, "Learning rate or 'grid'");
  app->add_option("--batch-size", f.batch_size);
  app->add_option("--patience", f.patience);
  app->add_option("--max-epochs", f.max_epochs);
  app->add_option("--grid-max-epochs", f.grid_max_epochs, "Epoch cap for grid runs; the best run then continues to --max-epochs");
  app->add_option("--ablation", f.ablation, "none | frozen-backbone | untrained");
  app->add_option("--preset", f.preset, "lite | resnet18-like");
  app->add_flag("--augment", f.augment, "Random nuisance augmentation during training");
  app->add_option("--subjects-per-block", f.subjects_per_block, "Subjects pooled per shuffle block; 0 = all");
  app->add_option("--split-seed", f.split_seed);
}

void add_eval_flags(CLI::App* app, Flags& f) {
  app->add_option("--data", f.data, "Dataset directory");
  app->add_option("--input-size", f.input_size, "Resize manifest images to this square size");
  app->add_option("--ckpt", f.ckpt, "Checkpoint file");
  app->add_option("--split", f.split, "train | val | test");
  app->add_option("--method", f.method, "pairnet | csr (default follows the checkpoint)");
  app->add_option("--basis", f.basis, "CAM activations: later | earlier | mean");
}

ExperimentConfig resolve(const CLI::App* app, const Flags& f, ExperimentConfig base) {
  ExperimentConfig c = f.config.empty() ? std::move(base) : cli::load_experiment(f.config);
  auto set = [&](const char* name) { return given(app, name); };
  if (set("--seed")) {
    c.seed = f.seed;
    if (!set("--split-seed")) c.split_seed = f.seed;
  }
  if (set("--out")) c.out = f.out;
  if (set("--dataset")) c.generator = f.dataset;
  if (set("--subjects")) c.generator_params["n_subjects"] = f.subjects;
  if (set("--timepoints")) c.generator_params["timepoints"] = f.timepoints;
  if (set("--image-size")) c.generator_params["image_size"] = f.image_size;
  if (set("--data")) c.data_dir = f.data;
  if (set("--input-size")) c.manifest_input_size = f.input_size;
  nlohmann::json train;
  if (set("--task")) train["task"] = f.task;
  if (set("--lr")) {
    if (f.lr == "grid") {
      train["lr"] = "grid";
    } else {
      try {
        train["lr"] = std::stod(f.lr);
      } catch (const std::exception&) {
        throw cli::UsageError("--lr expects a number or 'grid', got '" + f.lr + "'");
      }
    }
  }
  if (set("--batch-size")) train["batch_size"] = f.batch_size;
  if (set("--patience")) train["patience"] = f.patience;
  if (set("--max-epochs")) train["max_epochs"] = f.max_epochs;
  if (set("--grid-max-epochs")) train["grid_max_epochs"] = f.grid_max_epochs;
  if (set("--ablation")) train["ablation"] = f.ablation;
  if (set("--augment")) train["augment"] = f.augment;
  if (set("--subjects-per-block")) train["subjects_per_block"] = f.subjects_per_block;
  if (!train.empty()) c = cli::experiment_from_json({{"train", train}}, c);
  if (set("--preset")) c.preset = f.preset;
  if (set("--split-seed")) c.split_seed = f.split_seed;
  if (set("--ckpt")) c.checkpoint = f.ckpt;
  if (set("--split")) c.eval_split = f.split;
  if (set("--method")) c = cli::experiment_from_json({{"eval", {{"method", f.method}}}}, c);
  if (set("--basis")) c = cli::experiment_from_json({{"eval", {{"basis", f.basis}}}}, c);
  if (set("--dice")) c.eval_dice = f.dice;
  if (set("--robustness")) c.eval_robustness = f.robustness;
  if (set("--pairs")) c.cam_pairs = f.pairs;
  if (set("--alpha")) c.cam_alpha = f.alpha;
  if (set("--fractions")) c.sweep_fractions = f.fractions;
  if (set("--threads")) setenv("PAIRRANK_THREADS", std::to_string(f.threads).c_str(), 1);
  return c;
}

std::vector<cli::CamPair> parse_pairs(const std::vector<std::string>& specs, bool duplicate) {
  std::vector<cli::CamPair> pairs;
  for (const auto& spec : specs) {
    std::stringstream ss(spec);
    std::string subject, a, b;
    std::getline(ss, subject, ':');
    std::getline(ss, a, ':');
    std::getline(ss, b, ':');
    try {
      cli::CamPair p{subject, std::stoi(a), b.empty() ? std::stoi(a) : std::stoi(b)};
      if (duplicate) p.t_b = p.t_a;
      pairs.push_back(p);
    } catch (const std::exception&) {
      throw cli::UsageError("--pair expects SUBJECT:T_A:T_B, got '" + spec + "'");
    }
  }
  return pairs;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Pairwise longitudinal image ranking: data, training, evaluation and change maps"};
  app.require_subcommand(1);
  Flags f;

  auto* generate = app.add_subcommand("generate", "Generate a synthetic longitudinal dataset");
  add_common(generate, f);
  generate->add_option("--dataset", f.dataset, "starmen | tumor");
  generate->add_option("--subjects", f.subjects);
  generate->add_option("--timepoints", f.timepoints, "Visits per subject (starmen)");
  generate->add_option("--image-size", f.image_size);
  generate->add_flag("--force", f.force, "Overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "Train a ranking model or the CSR baseline");
  add_common(train, f);
  add_train_flags(train, f);

  auto* evaluate = app.add_subcommand("eval", "Correlation, AUC, Dice and robustness of a checkpoint");
  add_common(evaluate, f);
  add_eval_flags(evaluate, f);
  evaluate->add_flag("--dice", f.dice, "Dice sweep over CAM thresholds");
  evaluate->add_flag("--robustness", f.robustness, "Deterministic perturbation sweep");

  auto* cam = app.add_subcommand("cam", "Render change-map overlays");
  add_common(cam, f);
  add_eval_flags(cam, f);
  cam->add_option("--pairs", f.pairs, "Number of split pairs when none are named");
  cam->add_option("--pair", f.pair_specs, "SUBJECT:T_A:T_B (repeatable)");
  cam->add_flag("--duplicate", f.duplicate, "Use the first visit of each named pair twice");
  cam->add_option("--alpha", f.alpha, "Overlay opacity");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and objective");
  gradcheck->add_option("--tol", f.tol);
  gradcheck->add_option("--eps", f.eps);

  auto* repro = app.add_subcommand("repro", "generate -> train (lr grid) -> eval -> cam for a scenario");
  add_common(repro, f);
  repro->add_option("--scenario", f.scenario, "starmen | tumor")->required();
  repro->add_option("--max-epochs", f.max_epochs);
  repro->add_option("--grid-max-epochs", f.grid_max_epochs);
  repro->add_option("--subjects", f.subjects);

  auto* sweep = app.add_subcommand("sweep", "Retrain on growing fractions of the training subjects");
  add_common(sweep, f);
  add_train_flags(sweep, f);
  sweep->add_option("--fractions", f.fractions, "Training fractions in (0, 1]")->delimiter(',');
  sweep->add_option("--method", f.method, "pairnet | csr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageExit;
  }

  try {
    cli::RunLog log;
    if (generate->parsed()) {
      ExperimentConfig base;
      base.generator = "";
      auto c = resolve(generate, f, base);
      if (c.generator.empty()) throw cli::UsageError("generate needs --dataset");
      (void)cli::cmd_generate(c, f.force, log);
    } else if (train->parsed()) {
      (void)cli::cmd_train(resolve(train, f, {}), log);
    } else if (evaluate->parsed()) {
      const auto report = cli::cmd_eval(resolve(evaluate, f, {}), log);
      std::cout << "pearson_r " << report.pearson_r << '\n';
      if (report.auc) std::cout << "auc " << *report.auc << '\n';
    } else if (cam->parsed()) {
      const auto c = resolve(cam, f, {});
      if (f.duplicate && f.pair_specs.empty()) throw cli::UsageError("--duplicate needs at least one --pair");
      for (const auto& p : cli::cmd_cam(c, parse_pairs(f.pair_specs, f.duplicate), log)) {
        std::cout << p.string() << '\n';
      }
    } else if (gradcheck->parsed()) {
      return cli::cmd_gradcheck(std::cout, f.tol, f.eps) ? 0 : kFailureExit;
    } else if (repro->parsed()) {
      ExperimentConfig base;
      if (f.scenario == "starmen") {
        base = cli::starmen_recipe(given(repro, "--seed") ? f.seed : 0);
      } else if (f.scenario == "tumor") {
        base = cli::tumor_recipe(given(repro, "--seed") ? f.seed : 0);
      } else {
        throw cli::UsageError("unknown scenario '" + f.scenario + "' (expected starmen or tumor)");
      }
      const auto result = cli::run_pipeline(resolve(repro, f, base), log);
      std::cout << "pearson_r " << result.report.pearson_r << '\n';
      if (result.report.auc) std::cout << "auc " << *result.report.auc << '\n';
    } else if (sweep->parsed()) {
      for (const auto& p : cli::cmd_sweep(resolve(sweep, f, {}), log)) {
        std::cout << "fraction " << p.fraction << ": ";
        if (p.report) {
          std::cout << "r " << p.report->pearson_r << '\n';
        } else {
          std::cout << "skipped (" << p.message << ")\n";
        }
      }
    }
  } catch (const cli::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailureExit;
  }
  return 0;
}
