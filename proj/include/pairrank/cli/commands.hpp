#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairrank/data/dataset.hpp"
#include "pairrank/eval/evaluate.hpp"
#include "pairrank/eval/sweep.hpp"
#include "pairrank/model/model.hpp"
#include "pairrank/training/trainer.hpp"

namespace pairrank::cli {

/// Bad flags, unknown names or a config that cannot be resolved (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything one run needs. Round-trips through config.json losslessly.
struct ExperimentConfig {
  std::uint64_t seed = 0;

  std::string generator = "starmen";  // starmen | tumor
  nlohmann::json generator_params = nlohmann::json::object();
  std::filesystem::path data_dir;
  int manifest_input_size = 0;  // resize on load; 0 keeps native size

  std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
  std::uint64_t split_seed = 0;

  std::string preset = "lite";
  training::TrainConfig train;

  std::string eval_split = "test";
  std::optional<eval::Method> eval_method;  // empty follows the checkpoint's task
  bool eval_dice = false;
  bool eval_robustness = false;
  eval::CamBasis cam_basis = eval::CamBasis::kLater;
  int cam_pairs = 8;
  double cam_alpha = 0.6;

  std::vector<double> sweep_fractions{0.25, 0.5, 0.75, 1.0};

  std::filesystem::path checkpoint;
  std::filesystem::path out;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Fields absent from `j` keep their value in `base`. Throws UsageError.
ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);
/// Writes `config.json` into `dir`.
void write_config(const ExperimentConfig& config, const std::filesystem::path& dir);

/// Timestamped progress lines to stderr and, once opened, to a run.log file.
/// Timestamps never reach the checksummed outputs.
class RunLog {
 public:
  explicit RunLog(bool echo = true) : echo_(echo) {}
  void open(const std::filesystem::path& path);
  void operator()(const std::string& message);

 private:
  bool echo_;
  std::ofstream file_;
};

/// Writes the dataset directory and config.json. Refuses a non-empty `out`
/// unless `force`.
data::LongitudinalDataset cmd_generate(const ExperimentConfig& config, bool force, RunLog& log);

/// Loads `data_dir` and applies the configured subject split.
data::LongitudinalDataset load_split_dataset(const ExperimentConfig& config);

struct TrainOutcome {
  training::TrainResult result;
  std::optional<training::GridResult> grid;
};

/// Writes model.ckpt, history.csv, summary.json, config.json and grid.json
/// when a learning-rate grid is configured.
TrainOutcome cmd_train(const ExperimentConfig& config, RunLog& log);

/// Writes report.json, pairs.csv, dice.csv and robustness.csv as requested.
eval::EvalReport cmd_eval(const ExperimentConfig& config, RunLog& log);

struct CamPair {
  std::string subject;
  int t_a = 0;
  int t_b = 0;
};

/// Overlay `{subject}_{tA}_{tB}.png` plus the bare map `{subject}_{tA}_{tB}_map.png`
/// for each pair; without explicit pairs, first versus last visit of the
/// first `cam_pairs` subjects of the evaluation split.
std::vector<std::filesystem::path> cmd_cam(const ExperimentConfig& config, const std::vector<CamPair>& pairs,
                                           RunLog& log);

/// Prints one row per check; returns true when all pass.
bool cmd_gradcheck(std::ostream& out, double tol, double eps);

/// Writes sweep.json with one entry per training fraction.
std::vector<eval::SweepPoint> cmd_sweep(const ExperimentConfig& config, RunLog& log);

/// The acceptance scenarios: dataset, model and protocol settings.
ExperimentConfig starmen_recipe(std::uint64_t seed);
ExperimentConfig tumor_recipe(std::uint64_t seed);

struct ReproResult {
  TrainOutcome train;
  eval::EvalReport report;
};

/// generate -> train -> eval -> cam under `out/{data,train,eval,cam}`.
ReproResult run_pipeline(ExperimentConfig config, RunLog& log);

/// Model factory for a config and dataset (input size taken from the images).
training::ModelFactory model_factory(const ExperimentConfig& config, const data::LongitudinalDataset& dataset);

void write_history_csv(const training::TrainHistory& history, const std::filesystem::path& path);

/// 64-bit FNV-1a digest of a file's bytes as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace pairrank::cli
