#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pairrank/data/dataset.hpp"
#include "pairrank/model/model.hpp"

namespace pairrank::training {

enum class Task { kSupervised, kSelfSupervised, kCsr };
enum class Ablation { kNone, kFrozenBackbone, kUntrained };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);
std::string_view ablation_name(Ablation ablation);
Ablation parse_ablation(std::string_view name);

inline const std::vector<double> kDefaultLrGrid{1e-1, 1e-2, 1e-3, 1e-4, 1e-5};

struct TrainConfig {
  Task task = Task::kSelfSupervised;
  double lr = 1e-3;
  /// Non-empty selects grid search (see grid_search_lr); `lr` is then ignored.
  std::vector<double> lr_grid;
  int batch_size = 64;
  int patience = 5;
  int max_epochs = 200;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::kNone;
  /// Subjects whose pairs are pooled and shuffled together before batching;
  /// 0 shuffles all training pairs of the epoch as one pool.
  int subjects_per_block = 0;
  /// Random nuisance augmentation of every training image on the fly.
  bool augment = false;
  data::AugmentRanges augment_ranges;
  /// Epoch cap for the grid-search runs; 0 uses max_epochs.
  int grid_max_epochs = 0;

  /// Throws std::invalid_argument if batch_size < 1, patience < 1, max_epochs < 0
  /// or a learning rate is not positive.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double lr = 0.0;
  double initial_val_loss = 0.0;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_val_loss = 0.0;
  int stopping_epoch = 0;
  bool early_stopped = false;
  double wall_seconds = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a loss exceeds 1e6 or turns non-finite; carries the epochs run so far.
class DivergenceError : public TrainingError {
 public:
  DivergenceError(const std::string& what, TrainHistory history)
      : TrainingError(what), history(std::move(history)) {}
  TrainHistory history;
};

struct TrainResult {
  model::ModelState model;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// One mini-batch: the distinct images it touches plus index pairs into them.
/// For pair tasks `logit_k = R(images[second_k], images[first_k])`; for CSR
/// `first` lists the images and `targets` their regression targets.
struct Batch {
  std::vector<const data::Image*> images;
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  std::vector<double> targets;  // delta (supervised), label (self-supervised), y (CSR)
};

/// Training objective on a batch: MSE(R, delta), BCE(sigma(R), label) or MSE(y_hat, y).
ad::Tensor batch_loss(model::ModelState& model, const Batch& batch, Task task, ad::NormMode mode);

/// The same objective from precomputed feature rows.
ad::Tensor objective(const model::ModelState& model, const ad::Tensor& features, const Batch& batch, Task task);

/// Mean objective over every pair (or sample, for CSR) of `split`, infer-mode.
double split_loss(const model::ModelState& model, const data::LongitudinalDataset& dataset, data::Split split,
                  Task task);

/// Uses the train and val split tags of `dataset`. Early stopping restores the
/// epoch with the lowest validation loss. Throws TrainingError for an empty
/// split and DivergenceError for a diverging run.
TrainResult train(const model::ModelState& init, const data::LongitudinalDataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct GridRun {
  double lr = 0.0;
  bool diverged = false;
  std::string message;
  TrainHistory history;
};

struct GridResult {
  double best_lr = 0.0;
  std::vector<GridRun> runs;  // grid order
  TrainResult best;
};

using ModelFactory = std::function<model::ModelState()>;

/// Trains one model per grid lr from `factory()` and keeps the one with the
/// lowest best validation loss; equal losses favour the smaller lr. Runs may
/// execute concurrently (`threads`, 0 reads PAIRRANK_THREADS, default 1).
/// Throws TrainingError listing every outcome if all runs diverge. With
/// 0 < grid_max_epochs < max_epochs the grid runs are capped and the selected
/// run continues to max_epochs, which equals retraining it from `factory()`.
GridResult grid_search_lr(const ModelFactory& factory, const data::LongitudinalDataset& dataset,
                          const TrainConfig& config, unsigned threads = 0,
                          const std::function<void(double lr, const EpochRecord&)>& on_epoch = {});

nlohmann::json to_json(const GridResult& grid);

/// Thread cap from PAIRRANK_THREADS (>= 1), default 1.
unsigned thread_budget();

}  // namespace pairrank::training
