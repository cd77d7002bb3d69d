#include "pairrank/training/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "pairrank/autodiff/adam.hpp"
#include "pairrank/util/rng.hpp"

namespace pairrank::training {

using data::LongitudinalDataset;
using data::Split;
using model::ModelState;

namespace {

constexpr double kDivergenceThreshold = 1e6;
constexpr std::size_t kInferChunk = 64;

bool is_pair_task(Task task) { return task != Task::kCsr; }

struct PairRef {
  std::size_t subject;
  std::size_t first;
  std::size_t second;
  double target;
};

struct SampleRef {
  std::size_t subject;
  std::size_t index;
  double target;
};

std::vector<PairRef> pair_refs(const LongitudinalDataset& dataset, Split split, Task task) {
  std::vector<PairRef> refs;
  for (const auto& p : data::sample_pairs(dataset, split, data::PairMode::kBothDirections)) {
    const double target = task == Task::kSupervised ? p.delta : static_cast<double>(p.label);
    refs.push_back({p.subject, p.first, p.second, target});
  }
  return refs;
}

std::vector<SampleRef> sample_refs(const LongitudinalDataset& dataset, Split split) {
  std::vector<SampleRef> refs;
  for (std::size_t s = 0; s < dataset.subjects.size(); ++s) {
    if (dataset.subjects[s].split != split) continue;
    const auto& samples = dataset.subjects[s].samples;
    for (std::size_t i = 0; i < samples.size(); ++i) refs.push_back({s, i, samples[i].target});
  }
  return refs;
}

/// Builds batches from pairs while deduplicating the images they touch.
class BatchBuilder {
 public:
  explicit BatchBuilder(const LongitudinalDataset& dataset) : dataset_(dataset) {}

  std::size_t add_image(std::size_t subject, std::size_t index) {
    const auto key = std::make_pair(subject, index);
    const auto it = slots_.find(key);
    if (it != slots_.end()) return it->second;
    const std::size_t slot = batch_.images.size();
    batch_.images.push_back(&dataset_.subjects[subject].samples[index].image);
    slots_.emplace(key, slot);
    return slot;
  }

  void add_pair(const PairRef& p) {
    batch_.first.push_back(add_image(p.subject, p.first));
    batch_.second.push_back(add_image(p.subject, p.second));
    batch_.targets.push_back(p.target);
  }

  void add_sample(const SampleRef& s) {
    batch_.first.push_back(add_image(s.subject, s.index));
    batch_.targets.push_back(s.target);
  }

  Batch take() {
    slots_.clear();
    return std::exchange(batch_, Batch{});
  }

 private:
  const LongitudinalDataset& dataset_;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> slots_;
  Batch batch_;
};

std::vector<Batch> epoch_pair_batches(const LongitudinalDataset& dataset, const std::vector<PairRef>& pairs,
                                      const TrainConfig& config, Rng& rng) {
  std::vector<PairRef> order;
  order.reserve(pairs.size());
  if (config.subjects_per_block <= 0) {
    order = pairs;
    rng.shuffle(std::span<PairRef>(order));
  } else {
    std::vector<std::size_t> subjects;
    std::unordered_map<std::size_t, std::vector<PairRef>> by_subject;
    for (const auto& p : pairs) {
      auto& bucket = by_subject[p.subject];
      if (bucket.empty()) subjects.push_back(p.subject);
      bucket.push_back(p);
    }
    rng.shuffle(std::span<std::size_t>(subjects));
    const auto block = static_cast<std::size_t>(config.subjects_per_block);
    for (std::size_t start = 0; start < subjects.size(); start += block) {
      std::vector<PairRef> pool;
      for (std::size_t i = start; i < std::min(subjects.size(), start + block); ++i) {
        const auto& bucket = by_subject[subjects[i]];
        pool.insert(pool.end(), bucket.begin(), bucket.end());
      }
      rng.shuffle(std::span<PairRef>(pool));
      order.insert(order.end(), pool.begin(), pool.end());
    }
  }

  std::vector<Batch> batches;
  BatchBuilder builder(dataset);
  const auto size = static_cast<std::size_t>(config.batch_size);
  for (std::size_t i = 0; i < order.size(); ++i) {
    builder.add_pair(order[i]);
    if ((i + 1) % size == 0 || i + 1 == order.size()) batches.push_back(builder.take());
  }
  return batches;
}

std::vector<Batch> epoch_sample_batches(const LongitudinalDataset& dataset, std::vector<SampleRef> samples,
                                        const TrainConfig& config, Rng& rng) {
  rng.shuffle(std::span<SampleRef>(samples));
  std::vector<Batch> batches;
  BatchBuilder builder(dataset);
  const auto size = static_cast<std::size_t>(config.batch_size);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    builder.add_sample(samples[i]);
    if ((i + 1) % size == 0 || i + 1 == samples.size()) batches.push_back(builder.take());
  }
  return batches;
}

/// Infer-mode features of `images`, computed in chunks without recording a graph.
ad::Tensor infer_features(const ModelState& model, std::span<const data::Image* const> images) {
  ad::NoGradGuard guard;
  const auto dim = static_cast<std::size_t>(model.config().feature_dim);
  std::vector<double> out;
  out.reserve(images.size() * dim);
  for (std::size_t start = 0; start < images.size(); start += kInferChunk) {
    const auto chunk = images.subspan(start, std::min(kInferChunk, images.size() - start));
    const auto features = model.extract(data::to_tensor(chunk)).features;
    out.insert(out.end(), features.data().begin(), features.data().end());
  }
  return ad::Tensor::from({images.size(), dim}, std::move(out));
}

std::vector<ad::Tensor> trainable_parameters(const ModelState& model, Task task) {
  std::vector<ad::Tensor> params;
  if (!model.backbone_frozen()) params = model.backbone_parameters();
  if (task == Task::kCsr) {
    params.push_back(model.csr_head()->weight);
    params.push_back(model.csr_head()->bias);
  } else {
    params.push_back(model.rank_weight());
  }
  return params;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string_view task_name(Task task) {
  switch (task) {
    case Task::kSupervised: return "supervised";
    case Task::kSelfSupervised: return "self-supervised";
    case Task::kCsr: return "csr";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "supervised") return Task::kSupervised;
  if (name == "self-supervised" || name == "self_supervised") return Task::kSelfSupervised;
  if (name == "csr") return Task::kCsr;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (expected supervised, self-supervised or csr)");
}

std::string_view ablation_name(Ablation ablation) {
  switch (ablation) {
    case Ablation::kNone: return "none";
    case Ablation::kFrozenBackbone: return "frozen-backbone";
    case Ablation::kUntrained: return "untrained";
  }
  return "?";
}

Ablation parse_ablation(std::string_view name) {
  if (name == "none") return Ablation::kNone;
  if (name == "frozen-backbone" || name == "frozen_backbone") return Ablation::kFrozenBackbone;
  if (name == "untrained") return Ablation::kUntrained;
  throw std::invalid_argument("unknown ablation '" + std::string(name) +
                              "' (expected none, frozen-backbone or untrained)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
  if (grid_max_epochs < 0) throw std::invalid_argument("grid_max_epochs must be >= 0");
  if (subjects_per_block < 0) throw std::invalid_argument("subjects_per_block must be >= 0");
  if (lr_grid.empty() && !(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  for (const double v : lr_grid) {
    if (!(v > 0.0)) throw std::invalid_argument("grid learning rates must be positive");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["task"] = task_name(c.task);
  if (c.lr_grid.empty()) {
    j["lr"] = c.lr;
  } else {
    j["lr"] = "grid";
    j["lr_grid"] = c.lr_grid;
  }
  j["batch_size"] = c.batch_size;
  j["patience"] = c.patience;
  j["max_epochs"] = c.max_epochs;
  j["grid_max_epochs"] = c.grid_max_epochs;
  j["seed"] = c.seed;
  j["ablation"] = ablation_name(c.ablation);
  j["subjects_per_block"] = c.subjects_per_block;
  j["augment"] = c.augment;
  const auto& r = c.augment_ranges;
  j["augment_ranges"] = {{"max_rotation_deg", r.max_rotation_deg}, {"max_translation", r.max_translation},
                         {"brightness", {r.brightness_lo, r.brightness_hi}},
                         {"contrast", {r.contrast_lo, r.contrast_hi}}};
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
  if (j.contains("lr")) {
    if (j.at("lr").is_string()) {
      if (j.at("lr").get<std::string>() != "grid") throw std::invalid_argument("lr must be a number or \"grid\"");
      c.lr_grid = j.contains("lr_grid") ? j.at("lr_grid").get<std::vector<double>>() : kDefaultLrGrid;
    } else {
      c.lr = j.at("lr").get<double>();
      c.lr_grid.clear();
    }
  }
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("patience")) c.patience = j.at("patience").get<int>();
  if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<int>();
  if (j.contains("grid_max_epochs")) c.grid_max_epochs = j.at("grid_max_epochs").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
  if (j.contains("subjects_per_block")) c.subjects_per_block = j.at("subjects_per_block").get<int>();
  if (j.contains("augment")) c.augment = j.at("augment").get<bool>();
  if (j.contains("augment_ranges")) {
    const auto& a = j.at("augment_ranges");
    auto& r = c.augment_ranges;
    if (a.contains("max_rotation_deg")) r.max_rotation_deg = a.at("max_rotation_deg").get<double>();
    if (a.contains("max_translation")) r.max_translation = a.at("max_translation").get<double>();
    if (a.contains("brightness")) {
      r.brightness_lo = a.at("brightness").at(0).get<double>();
      r.brightness_hi = a.at("brightness").at(1).get<double>();
    }
    if (a.contains("contrast")) {
      r.contrast_lo = a.at("contrast").at(0).get<double>();
      r.contrast_hi = a.at("contrast").at(1).get<double>();
    }
  }
  c.validate();
  return c;
}

ad::Tensor objective(const ModelState& model, const ad::Tensor& features, const Batch& batch, Task task) {
  const std::size_t m = batch.targets.size();
  const auto targets = ad::Tensor::from({m, 1}, batch.targets);
  if (task == Task::kCsr) {
    const auto pred = model::csr_forward(model, ad::gather_rows(features, batch.first));
    return ad::mse_loss(pred, targets);
  }
  const auto logits = model::rank_logits(ad::gather_rows(features, batch.second),
                                         ad::gather_rows(features, batch.first), model.rank_weight());
  return task == Task::kSupervised ? ad::mse_loss(logits, targets) : ad::bce_with_logits_loss(logits, targets);
}

ad::Tensor batch_loss(ModelState& model, const Batch& batch, Task task, ad::NormMode mode) {
  const auto features = model.extract(data::to_tensor(batch.images), mode).features;
  return objective(model, features, batch, task);
}

double split_loss(const ModelState& model, const LongitudinalDataset& dataset, Split split, Task task) {
  BatchBuilder builder(dataset);
  if (is_pair_task(task)) {
    for (const auto& p : pair_refs(dataset, split, task)) builder.add_pair(p);
  } else {
    for (const auto& s : sample_refs(dataset, split)) builder.add_sample(s);
  }
  const Batch all = builder.take();
  if (all.targets.empty()) {
    throw TrainingError(std::string("split '") + data::split_name(split) + "' has no " +
                        (is_pair_task(task) ? "pairs" : "samples"));
  }
  ad::NoGradGuard guard;
  return objective(model, infer_features(model, all.images), all, task).item();
}

namespace {

/// One training run whose epoch loop can be paused and resumed. A run paused
/// at epoch k and resumed to n is bit-identical to an uninterrupted run to n.
class TrainSession {
 public:
  TrainSession(const ModelState& init, const LongitudinalDataset& dataset, const TrainConfig& config)
      : dataset_(dataset), config_(config), started_(std::chrono::steady_clock::now()), result_{init.clone(), {}} {
    config_.validate();
    const Task task = config_.task;
    if (task == Task::kCsr && !init.csr_head()) throw TrainingError("csr task requires a model with a CSR head");
    if (is_pair_task(task)) {
      train_pairs_ = pair_refs(dataset, Split::kTrain, task);
    } else {
      train_samples_ = sample_refs(dataset, Split::kTrain);
    }
    if (train_pairs_.empty() && train_samples_.empty()) {
      throw TrainingError(std::string("train split has no ") + (is_pair_task(task) ? "pairs" : "samples"));
    }
    if (task == Task::kCsr && config_.ablation != Ablation::kUntrained) {
      // Start the regression at the mean training target; Adam moves the bias
      // by about lr per step, too slowly to learn an uncentred offset.
      double sum = 0.0;
      for (const auto& r : train_samples_) sum += dataset.subjects[r.subject].samples[r.index].target;
      result_.model.csr_head()->bias.mutable_data()[0] = sum / static_cast<double>(train_samples_.size());
    }
    TrainHistory& history = result_.history;
    history.lr = config_.lr;
    history.initial_val_loss = split_loss(result_.model, dataset, Split::kVal, task);
    history.best_val_loss = history.initial_val_loss;
    if (config_.ablation == Ablation::kUntrained) {
      stopped_ = true;
      return;
    }

    ModelState& model = result_.model;
    if (config_.ablation == Ablation::kFrozenBackbone) model.freeze_backbone();
    params_ = trainable_parameters(model, task);
    adam_ = ad::AdamState::for_params(params_);

    // A frozen backbone in infer mode is a fixed feature map; cache it unless augmenting.
    if (model.backbone_frozen() && !config_.augment) {
      std::vector<const data::Image*> images;
      for (const auto& s : sample_refs(dataset, Split::kTrain)) {
        cached_rows_.emplace(&dataset.subjects[s.subject].samples[s.index].image, images.size());
        images.push_back(&dataset.subjects[s.subject].samples[s.index].image);
      }
      cached_ = infer_features(model, images);
    }
    mode_ = model.backbone_frozen() ? ad::NormMode::kInfer : ad::NormMode::kTrain;
  }

  /// Runs epochs up to `last_epoch` unless early stopping has already fired.
  void run_to(int last_epoch, const EpochCallback& on_epoch) {
    while (!stopped_ && epoch_ < last_epoch) run_epoch(on_epoch);
  }

  /// The run so far with the best-validation weights restored.
  TrainResult result() const {
    TrainResult out{best_ ? best_->clone() : result_.model.clone(), result_.history};
    out.history.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    return out;
  }

 private:
  DivergenceError diverged(const std::string& why) const {
    return DivergenceError("training diverged at lr " + format_double(config_.lr) + ": " + why, result_.history);
  }

  void run_epoch(const EpochCallback& on_epoch) {
    const int epoch = ++epoch_;
    const Task task = config_.task;
    ModelState& model = result_.model;
    TrainHistory& history = result_.history;
    Rng order_rng(config_.seed, 0x0e90c400u + static_cast<std::uint64_t>(epoch));
    Rng augment_rng(config_.seed, 0x0a960000u + static_cast<std::uint64_t>(epoch));
    auto batches = is_pair_task(task) ? epoch_pair_batches(dataset_, train_pairs_, config_, order_rng)
                                      : epoch_sample_batches(dataset_, train_samples_, config_, order_rng);
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (auto& batch : batches) {
      std::vector<data::Image> augmented;
      if (config_.augment) {
        augmented.reserve(batch.images.size());
        for (const auto* image : batch.images) {
          augmented.push_back(data::augment(*image, config_.augment_ranges.sample(augment_rng)));
        }
        for (std::size_t i = 0; i < augmented.size(); ++i) batch.images[i] = &augmented[i];
      }
      for (auto& p : params_) p.zero_grad();
      double value = 0.0;
      try {
        ad::Tensor loss;
        if (cached_) {
          std::vector<std::size_t> rows;
          for (const auto* image : batch.images) rows.push_back(cached_rows_.at(image));
          loss = objective(model, ad::gather_rows(*cached_, rows), batch, task);
        } else {
          loss = batch_loss(model, batch, task, mode_);
        }
        value = loss.item();
        if (!std::isfinite(value) || value > kDivergenceThreshold) throw diverged("batch loss " + format_double(value));
        ad::backward(loss);
      } catch (const ad::NonFiniteError& e) {
        throw diverged(e.what());
      }
      ad::adam_step(params_, adam_, config_.lr);
      loss_sum += value * static_cast<double>(batch.targets.size());
      count += batch.targets.size();
    }

    EpochRecord record{epoch, loss_sum / static_cast<double>(count), 0.0};
    try {
      record.val_loss = split_loss(model, dataset_, Split::kVal, task);
    } catch (const ad::NonFiniteError& e) {
      throw diverged(e.what());
    }
    if (!std::isfinite(record.val_loss) || record.val_loss > kDivergenceThreshold) {
      throw diverged("validation loss " + format_double(record.val_loss));
    }
    history.epochs.push_back(record);
    history.stopping_epoch = epoch;
    if (on_epoch) on_epoch(record);

    if (!best_ || record.val_loss < history.best_val_loss) {
      history.best_val_loss = record.val_loss;
      history.best_epoch = epoch;
      best_ = model.clone();
      since_best_ = 0;
    } else if (++since_best_ >= config_.patience) {
      history.early_stopped = true;
      stopped_ = true;
    }
  }

  const LongitudinalDataset& dataset_;
  TrainConfig config_;
  std::chrono::steady_clock::time_point started_;
  TrainResult result_;
  std::vector<PairRef> train_pairs_;
  std::vector<SampleRef> train_samples_;
  std::vector<ad::Tensor> params_;
  ad::AdamState adam_;
  std::optional<ad::Tensor> cached_;
  std::map<const data::Image*, std::size_t> cached_rows_;
  ad::NormMode mode_ = ad::NormMode::kTrain;
  std::optional<ModelState> best_;
  int since_best_ = 0;
  int epoch_ = 0;
  bool stopped_ = false;
};

}  // namespace

TrainResult train(const ModelState& init, const LongitudinalDataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  TrainSession session(init, dataset, config);
  session.run_to(config.max_epochs, on_epoch);
  return session.result();
}

unsigned thread_budget() {
  if (const char* env = std::getenv("PAIRRANK_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return 1;
}

GridResult grid_search_lr(const ModelFactory& factory, const LongitudinalDataset& dataset, const TrainConfig& config,
                          unsigned threads, const std::function<void(double, const EpochRecord&)>& on_epoch) {
  config.validate();
  const std::vector<double> grid = config.lr_grid.empty() ? std::vector<double>{config.lr} : config.lr_grid;
  if (threads == 0) threads = thread_budget();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(grid.size())));

  const bool capped = config.grid_max_epochs > 0 && config.grid_max_epochs < config.max_epochs;
  std::vector<GridRun> runs(grid.size());
  std::vector<std::optional<TrainSession>> sessions(grid.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  std::exception_ptr failure;
  auto callback = [&](double lr) -> EpochCallback {
    if (!on_epoch) return {};
    return [&, lr](const EpochRecord& r) {
      std::lock_guard lock(callback_mutex);
      on_epoch(lr, r);
    };
  };
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      TrainConfig run_config = config;
      run_config.lr_grid.clear();
      run_config.lr = grid[i];
      runs[i].lr = grid[i];
      try {
        sessions[i].emplace(factory(), dataset, run_config);
        sessions[i]->run_to(capped ? config.grid_max_epochs : config.max_epochs, callback(grid[i]));
        runs[i].history = sessions[i]->result().history;
      } catch (const DivergenceError& e) {
        sessions[i].reset();
        runs[i].diverged = true;
        runs[i].message = e.what();
        runs[i].history = e.history;
        runs[i].history.lr = grid[i];
      } catch (...) {
        std::lock_guard lock(callback_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (runs[i].diverged) continue;
    const double loss = runs[i].history.best_val_loss;
    if (!best) {
      best = i;
      continue;
    }
    const double best_loss = runs[*best].history.best_val_loss;
    if (loss < best_loss || (loss == best_loss && grid[i] < grid[*best])) best = i;
  }
  if (!best) {
    std::string message = "every grid run diverged:";
    for (const auto& r : runs) message += "\n  lr " + format_double(r.lr) + ": " + r.message;
    throw TrainingError(message);
  }
  // The selected run continues to the full budget; with a fixed seed this
  // equals retraining that lr from scratch.
  auto& session = *sessions[*best];
  if (capped) session.run_to(config.max_epochs, callback(grid[*best]));
  GridResult out{grid[*best], std::move(runs), session.result()};
  return out;
}

nlohmann::json to_json(const GridResult& grid) {
  nlohmann::json j;
  j["best_lr"] = grid.best_lr;
  j["runs"] = nlohmann::json::array();
  for (const auto& r : grid.runs) {
    nlohmann::json run{{"lr", r.lr},
                       {"diverged", r.diverged},
                       {"epochs_run", r.history.epochs.size()},
                       {"initial_val_loss", r.history.initial_val_loss}};
    if (r.diverged) {
      run["message"] = r.message;
      run["best_val_loss"] = nullptr;
    } else {
      run["best_val_loss"] = r.history.best_val_loss;
      run["best_epoch"] = r.history.best_epoch;
      run["early_stopped"] = r.history.early_stopped;
    }
    run["val_loss"] = nlohmann::json::array();
    for (const auto& e : r.history.epochs) run["val_loss"].push_back(e.val_loss);
    j["runs"].push_back(std::move(run));
  }
  return j;
}

}  // namespace pairrank::training
