#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairrank/eval/evaluate.hpp"
#include "pairrank/training/trainer.hpp"

namespace pairrank::eval {

struct SweepPoint {
  double fraction = 1.0;
  std::size_t train_subjects = 0;
  bool skipped = false;
  std::string message;
  double lr = 0.0;
  std::optional<EvalReport> report;  // test split
};

/// Retrains on a subject-level subsample of the train split for every
/// fraction (val/test fixed) and evaluates on the test split. A fraction that
/// keeps no subject is skipped with a message. Fraction 1 keeps the dataset
/// unchanged, so it reproduces the standard run for the same seed.
std::vector<SweepPoint> data_size_sweep(const training::ModelFactory& factory, const data::LongitudinalDataset& dataset,
                                        const std::vector<double>& fractions, const training::TrainConfig& config,
                                        Method method, const std::function<void(const std::string&)>& log = {});

nlohmann::json to_json(const std::vector<SweepPoint>& sweep);

}  // namespace pairrank::eval
