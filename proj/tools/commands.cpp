#include "pairrank/cli/commands.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "pairrank/data/image_io.hpp"
#include "pairrank/data/synth.hpp"
#include "pairrank/eval/cam.hpp"
#include "pairrank/model/checkpoint.hpp"
#include "pairrank/training/verify.hpp"
#include "pairrank/util/rng.hpp"

namespace pairrank::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

data::Split parse_split(const std::string& name) {
  if (name == "train") return data::Split::kTrain;
  if (name == "val") return data::Split::kVal;
  if (name == "test") return data::Split::kTest;
  throw UsageError("unknown split '" + name + "' (expected train, val or test)");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void require_dir(const fs::path& dir, const char* what) {
  if (dir.empty()) throw UsageError(std::string("missing ") + what);
  if (!fs::is_directory(dir)) throw std::runtime_error(std::string(what) + " not found: " + dir.string());
}

json summary_json(const training::TrainHistory& h) {
  return {{"lr", h.lr},
          {"initial_val_loss", h.initial_val_loss},
          {"best_epoch", h.best_epoch},
          {"best_val_loss", h.best_val_loss},
          {"stopping_epoch", h.stopping_epoch},
          {"early_stopped", h.early_stopped},
          {"epochs_run", h.epochs.size()}};
}

const data::Subject* find_subject(const data::LongitudinalDataset& ds, const std::string& id) {
  for (const auto& s : ds.subjects)
    if (s.id == id) return &s;
  return nullptr;
}

std::size_t find_visit(const data::Subject& s, int t) {
  for (std::size_t i = 0; i < s.samples.size(); ++i)
    if (s.samples[i].time_index == t) return i;
  throw UsageError("subject " + s.id + " has no visit with time_index " + std::to_string(t));
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["dataset"] = {{"generator", c.generator},
                  {"params", c.generator_params},
                  {"dir", c.data_dir.string()},
                  {"input_size", c.manifest_input_size}};
  j["split"] = {{"ratios", c.split_ratios}, {"seed", c.split_seed}};
  j["model"] = {{"preset", c.preset}};
  j["train"] = training::to_json(c.train);
  j["eval"] = {{"split", c.eval_split},
               {"method", c.eval_method ? std::string(eval::method_name(*c.eval_method)) : std::string("auto")},
               {"dice", c.eval_dice},
               {"robustness", c.eval_robustness},
               {"basis", eval::cam_basis_name(c.cam_basis)}};
  j["cam"] = {{"pairs", c.cam_pairs}, {"alpha", c.cam_alpha}};
  j["sweep"] = {{"fractions", c.sweep_fractions}};
  j["checkpoint"] = c.checkpoint.string();
  j["out"] = c.out.string();
  return j;
}

ExperimentConfig experiment_from_json(const json& j, ExperimentConfig c) {
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("generator")) c.generator = d.at("generator").get<std::string>();
      if (d.contains("params")) c.generator_params = d.at("params");
      if (d.contains("dir")) c.data_dir = d.at("dir").get<std::string>();
      if (d.contains("input_size")) c.manifest_input_size = d.at("input_size").get<int>();
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      if (s.contains("ratios")) c.split_ratios = s.at("ratios").get<std::array<double, 3>>();
      if (s.contains("seed")) c.split_seed = s.at("seed").get<std::uint64_t>();
    }
    if (j.contains("model")) c.preset = j.at("model").value("preset", c.preset);
    if (j.contains("train")) c.train = training::train_config_from_json(j.at("train"), c.train);
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval_split = e.value("split", c.eval_split);
      if (e.contains("method")) {
        const auto m = e.at("method").get<std::string>();
        c.eval_method = m == "auto" ? std::nullopt : std::optional(eval::parse_method(m));
      }
      c.eval_dice = e.value("dice", c.eval_dice);
      c.eval_robustness = e.value("robustness", c.eval_robustness);
      if (e.contains("basis")) c.cam_basis = eval::parse_cam_basis(e.at("basis").get<std::string>());
    }
    if (j.contains("cam")) {
      c.cam_pairs = j.at("cam").value("pairs", c.cam_pairs);
      c.cam_alpha = j.at("cam").value("alpha", c.cam_alpha);
    }
    if (j.contains("sweep")) c.sweep_fractions = j.at("sweep").value("fractions", c.sweep_fractions);
    if (j.contains("checkpoint")) c.checkpoint = j.at("checkpoint").get<std::string>();
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    return experiment_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void write_config(const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  write_json(to_json(config), dir / "config.json");
}

void RunLog::open(const fs::path& path) {
  file_.close();
  file_.open(path, std::ios::app);
}

void RunLog::operator()(const std::string& message) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream line;
  line << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << message << '\n';
  if (echo_) std::cerr << line.str() << std::flush;
  if (file_.is_open()) file_ << line.str() << std::flush;
}

data::LongitudinalDataset cmd_generate(const ExperimentConfig& config, bool force, RunLog& log) {
  if (config.out.empty()) throw UsageError("generate needs --out");
  data::LongitudinalDataset dataset;
  if (config.generator == "starmen") {
    dataset = data::generate_starmen(data::starmen_config_from_json(config.generator_params), config.seed);
  } else if (config.generator == "tumor") {
    dataset = data::generate_tumor(data::tumor_config_from_json(config.generator_params), config.seed);
  } else {
    throw UsageError("unknown dataset '" + config.generator + "' (expected starmen or tumor)");
  }
  data::save_dataset(dataset, config.out, force);
  write_config(config, config.out);
  log.open(config.out / "run.log");
  log("generated " + config.generator + ": " + std::to_string(dataset.subjects.size()) + " subjects, " +
      std::to_string(dataset.image_count()) + " images -> " + config.out.string());
  return dataset;
}

data::LongitudinalDataset load_split_dataset(const ExperimentConfig& config) {
  require_dir(config.data_dir, "dataset directory");
  data::ManifestOptions options;
  options.input_size = config.manifest_input_size;
  auto dataset = data::load_dataset_dir(config.data_dir, options);
  dataset.validate();
  data::split_subjects(dataset, config.split_ratios, config.split_seed);
  return dataset;
}

training::ModelFactory model_factory(const ExperimentConfig& config, const data::LongitudinalDataset& dataset) {
  if (dataset.subjects.empty() || dataset.subjects.front().samples.empty()) {
    throw std::runtime_error("dataset has no images");
  }
  auto backbone = model::BackboneConfig::from_preset(config.preset);
  backbone.input_size = dataset.subjects.front().samples.front().image.width;
  const bool csr = config.train.task == training::Task::kCsr;
  const auto seed = config.seed;
  return [backbone, csr, seed] { return model::ModelState::init(backbone, seed, csr); };
}

void write_history_csv(const training::TrainHistory& history, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  for (const auto& e : history.epochs) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << '\n';
  }
}

TrainOutcome cmd_train(const ExperimentConfig& config, RunLog& log) {
  if (config.out.empty()) throw UsageError("train needs --out");
  fs::create_directories(config.out);
  log.open(config.out / "run.log");
  auto train_config = config.train;
  train_config.seed = config.seed;
  train_config.validate();
  const auto dataset = load_split_dataset(config);
  const auto factory = model_factory(config, dataset);
  log("train " + std::string(training::task_name(train_config.task)) + " on " + config.data_dir.string() + " (" +
      std::to_string(dataset.subject_count(data::Split::kTrain)) + "/" +
      std::to_string(dataset.subject_count(data::Split::kVal)) + "/" +
      std::to_string(dataset.subject_count(data::Split::kTest)) + " subjects)");

  TrainOutcome outcome{training::TrainResult{factory(), {}}, std::nullopt};
  const auto started = std::chrono::steady_clock::now();
  if (!train_config.lr_grid.empty() && train_config.ablation != training::Ablation::kUntrained) {
    auto grid = training::grid_search_lr(factory, dataset, train_config, 0,
                                         [&](double lr, const training::EpochRecord& e) {
                                           log("lr " + format_double(lr) + " epoch " + std::to_string(e.epoch) +
                                               " train " + format_double(e.train_loss) + " val " +
                                               format_double(e.val_loss));
                                         });
    write_json(training::to_json(grid), config.out / "grid.json");
    outcome.result = grid.best;
    outcome.grid = std::move(grid);
  } else {
    if (!train_config.lr_grid.empty()) train_config.lr_grid.clear();
    outcome.result = training::train(factory(), dataset, train_config, [&](const training::EpochRecord& e) {
      log("epoch " + std::to_string(e.epoch) + " train " + format_double(e.train_loss) + " val " +
          format_double(e.val_loss));
    });
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const auto& h = outcome.result.history;
  log("done: lr " + format_double(h.lr) + ", best epoch " + std::to_string(h.best_epoch) + ", best val " +
      format_double(h.best_val_loss) + ", " + format_double(seconds) + " s wall");

  const json metadata{{"task", training::task_name(train_config.task)},
                      {"ablation", training::ablation_name(train_config.ablation)},
                      {"lr", h.lr},
                      {"seed", config.seed},
                      {"split_ratios", config.split_ratios},
                      {"split_seed", config.split_seed}};
  model::save_checkpoint(outcome.result.model, config.out / "model.ckpt", metadata);
  write_history_csv(h, config.out / "history.csv");
  write_json(summary_json(h), config.out / "summary.json");
  auto resolved = config;
  resolved.train = train_config;
  resolved.checkpoint = config.out / "model.ckpt";
  write_config(resolved, config.out);
  return outcome;
}

namespace {

struct LoadedRun {
  model::LoadedCheckpoint checkpoint;
  data::LongitudinalDataset dataset;
  eval::Method method = eval::Method::kPairnet;
};

LoadedRun load_run(const ExperimentConfig& config) {
  if (config.checkpoint.empty()) throw UsageError("missing --ckpt");
  if (!fs::exists(config.checkpoint)) throw std::runtime_error("checkpoint not found: " + config.checkpoint.string());
  auto checkpoint = model::load_checkpoint(config.checkpoint);
  // The split recorded at training time wins over the config's.
  auto split_config = config;
  const auto& meta = checkpoint.metadata;
  if (meta.contains("split_ratios")) split_config.split_ratios = meta.at("split_ratios").get<std::array<double, 3>>();
  if (meta.contains("split_seed")) split_config.split_seed = meta.at("split_seed").get<std::uint64_t>();
  auto dataset = load_split_dataset(split_config);
  auto method = config.eval_method.value_or(meta.value("task", std::string()) == "csr" ? eval::Method::kCsr
                                                                                        : eval::Method::kPairnet);
  if (method == eval::Method::kCsr && !checkpoint.model.csr_head()) {
    throw std::runtime_error("checkpoint " + config.checkpoint.string() + " has no CSR head");
  }
  return {std::move(checkpoint), std::move(dataset), method};
}

}  // namespace

eval::EvalReport cmd_eval(const ExperimentConfig& config, RunLog& log) {
  if (config.out.empty()) throw UsageError("eval needs --out");
  fs::create_directories(config.out);
  log.open(config.out / "run.log");
  const auto run = load_run(config);
  eval::EvalOptions options;
  options.method = run.method;
  options.dice = config.eval_dice;
  options.robustness = config.eval_robustness;
  options.basis = config.cam_basis;
  const auto report = eval::evaluate(run.checkpoint.model, run.dataset, parse_split(config.eval_split), options);
  eval::write_report(report, config.out);
  write_config(config, config.out);
  std::string line = "eval " + report.method + " on " + report.split + ": r " + format_double(report.pearson_r);
  if (report.auc) line += ", auc " + format_double(*report.auc);
  log(line + " over " + std::to_string(report.pairs.size()) + " pairs");
  return report;
}

std::vector<fs::path> cmd_cam(const ExperimentConfig& config, const std::vector<CamPair>& pairs, RunLog& log) {
  if (config.out.empty()) throw UsageError("cam needs --out");
  fs::create_directories(config.out);
  log.open(config.out / "run.log");
  const auto run = load_run(config);
  const auto& model = run.checkpoint.model;

  std::vector<CamPair> selected = pairs;
  if (selected.empty()) {
    const auto split = parse_split(config.eval_split);
    for (const auto& s : run.dataset.subjects) {
      if (static_cast<int>(selected.size()) >= config.cam_pairs) break;
      if (s.split != split || s.samples.size() < 2) continue;
      selected.push_back({s.id, s.samples.front().time_index, s.samples.back().time_index});
    }
  }

  std::vector<fs::path> written;
  for (const auto& p : selected) {
    const auto* subject = find_subject(run.dataset, p.subject);
    if (subject == nullptr) throw UsageError("unknown subject '" + p.subject + "'");
    const auto& a = subject->samples[find_visit(*subject, p.t_a)];
    const auto& b = subject->samples[find_visit(*subject, p.t_b)];
    // The later visit is the map's spatial frame.
    const auto& earlier = p.t_a <= p.t_b ? a : b;
    const auto& later = p.t_a <= p.t_b ? b : a;
    const auto map = run.method == eval::Method::kCsr
                         ? eval::csr_cam(model, later.image)
                         : eval::weighted_cam(model, earlier.image, later.image, config.cam_basis);
    const std::string stem = p.subject + "_" + std::to_string(p.t_a) + "_" + std::to_string(p.t_b);
    const auto overlay = config.out / (stem + ".png");
    eval::render_overlay(later.image, map.normalized, overlay, config.cam_alpha);
    data::Image bare{map.width, map.height, map.normalized};
    data::write_png(config.out / (stem + "_map.png"), bare);
    written.push_back(overlay);
  }
  log("cam: " + std::to_string(written.size()) + " overlays in " + config.out.string());
  return written;
}

bool cmd_gradcheck(std::ostream& out, double tol, double eps) {
  const auto started = std::chrono::steady_clock::now();
  const auto checks = training::run_gradcheck_suite(tol, eps);
  bool ok = true;
  char line[256];
  std::snprintf(line, sizeof line, "%-44s %12s %8s %8s  %s\n", "check", "max rel err", "coords", "kinks", "result");
  out << line;
  for (const auto& c : checks) {
    std::snprintf(line, sizeof line, "%-44s %12.3e %8zu %8zu  %s\n", c.name.c_str(), c.report.max_rel_error,
                  c.report.coords_checked, c.report.coords_skipped, c.report.passed ? "PASS" : "FAIL");
    out << line;
    ok = ok && c.report.passed;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::snprintf(line, sizeof line, "%zu checks, tol %.0e, eps %.0e, %.1f s: %s\n", checks.size(), tol, eps, seconds,
                ok ? "all pass" : "FAILURES");
  out << line;
  return ok;
}

std::vector<eval::SweepPoint> cmd_sweep(const ExperimentConfig& config, RunLog& log) {
  if (config.out.empty()) throw UsageError("sweep needs --out");
  fs::create_directories(config.out);
  log.open(config.out / "run.log");
  auto train_config = config.train;
  train_config.seed = config.seed;
  const auto dataset = load_split_dataset(config);
  const auto method = config.eval_method.value_or(train_config.task == training::Task::kCsr ? eval::Method::kCsr
                                                                                           : eval::Method::kPairnet);
  const auto points = eval::data_size_sweep(model_factory(config, dataset), dataset, config.sweep_fractions,
                                            train_config, method, [&](const std::string& m) { log(m); });
  write_json(eval::to_json(points), config.out / "sweep.json");
  write_config(config, config.out);
  return points;
}

ExperimentConfig starmen_recipe(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.split_seed = seed;
  c.generator = "starmen";
  c.generator_params = {{"n_subjects", 200}, {"timepoints", 10}, {"image_size", 64}};
  c.preset = "lite";
  c.train.task = training::Task::kSelfSupervised;
  c.train.lr_grid = training::kDefaultLrGrid;
  c.train.grid_max_epochs = 1;
  c.train.max_epochs = 8;
  c.train.patience = 5;
  c.train.batch_size = 64;
  c.train.subjects_per_block = 1;
  c.eval_dice = false;
  return c;
}

ExperimentConfig tumor_recipe(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.split_seed = seed;
  c.generator = "tumor";
  c.generator_params = {{"n_subjects", 100}, {"intensity_jitter", true}};
  c.preset = "lite";
  c.train.task = training::Task::kSupervised;
  c.train.lr_grid = training::kDefaultLrGrid;
  c.train.grid_max_epochs = 10;
  c.train.max_epochs = 60;
  c.train.patience = 10;
  c.train.batch_size = 64;
  c.train.subjects_per_block = 1;
  c.train.augment = true;
  c.train.augment_ranges.brightness_lo = 0.8;
  c.train.augment_ranges.brightness_hi = 1.2;
  c.train.augment_ranges.contrast_lo = 0.8;
  c.train.augment_ranges.contrast_hi = 1.2;
  c.eval_dice = true;
  c.eval_robustness = true;
  return c;
}

ReproResult run_pipeline(ExperimentConfig config, RunLog& log) {
  if (config.out.empty()) throw UsageError("repro needs --out");
  const fs::path root = config.out;
  fs::create_directories(root);
  write_config(config, root);

  config.out = root / "data";
  config.data_dir = config.out;
  (void)cmd_generate(config, true, log);

  config.out = root / "train";
  ReproResult result{cmd_train(config, log), {}};

  config.checkpoint = root / "train" / "model.ckpt";
  config.out = root / "eval";
  result.report = cmd_eval(config, log);

  config.out = root / "cam";
  (void)cmd_cam(config, {}, log);
  return result;
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, stable_hash(bytes));
  return buf;
}

}  // namespace pairrank::cli
