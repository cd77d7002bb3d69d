#include "pairrank/eval/sweep.hpp"

#include <cmath>
#include <stdexcept>

#include "pairrank/util/rng.hpp"

namespace pairrank::eval {

std::vector<SweepPoint> data_size_sweep(const training::ModelFactory& factory, const data::LongitudinalDataset& dataset,
                                        const std::vector<double>& fractions, const training::TrainConfig& config,
                                        Method method, const std::function<void(const std::string&)>& log) {
  std::vector<std::size_t> train_subjects;
  for (std::size_t s = 0; s < dataset.subjects.size(); ++s) {
    if (dataset.subjects[s].split == data::Split::kTrain) train_subjects.push_back(s);
  }
  Rng rng(config.seed, 0x5a3b1e);
  auto order = train_subjects;
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<SweepPoint> out;
  for (const double fraction : fractions) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("sweep fractions must lie in (0, 1]");
    SweepPoint point;
    point.fraction = fraction;
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size())));
    point.train_subjects = keep;
    if (keep == 0) {
      point.skipped = true;
      point.message = "fraction keeps no training subject";
      if (log) log("warning: skipping fraction " + std::to_string(fraction) + ": " + point.message);
      out.push_back(std::move(point));
      continue;
    }
    data::LongitudinalDataset subset = dataset;
    for (std::size_t i = keep; i < order.size(); ++i) subset.subjects[order[i]].split = data::Split::kUnassigned;
    try {
      training::TrainResult result;
      if (config.lr_grid.empty()) {
        result = training::train(factory(), subset, config);
        point.lr = config.lr;
      } else {
        auto grid = training::grid_search_lr(factory, subset, config);
        point.lr = grid.best_lr;
        result = std::move(grid.best);
      }
      EvalOptions options;
      options.method = method;
      point.report = evaluate(result.model, subset, data::Split::kTest, options);
    } catch (const training::TrainingError& e) {
      point.skipped = true;
      point.message = e.what();
      if (log) log("warning: fraction " + std::to_string(fraction) + " failed: " + point.message);
    }
    out.push_back(std::move(point));
  }
  return out;
}

nlohmann::json to_json(const std::vector<SweepPoint>& sweep) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : sweep) {
    nlohmann::json row{{"fraction", p.fraction}, {"train_subjects", p.train_subjects}, {"skipped", p.skipped}};
    if (p.skipped) {
      row["message"] = p.message;
    } else {
      row["lr"] = p.lr;
      row["pearson_r"] = p.report->pearson_r;
      row["auc"] = p.report->auc ? nlohmann::json(*p.report->auc) : nlohmann::json(nullptr);
    }
    j.push_back(std::move(row));
  }
  return j;
}

}  // namespace pairrank::eval
