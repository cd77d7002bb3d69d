// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pairrank/cli/commands.hpp"
#include "pairrank/data/synth.hpp"
#include "pairrank/eval/cam.hpp"
#include "pairrank/eval/metrics.hpp"
#include "pairrank/model/checkpoint.hpp"
#include "pairrank/training/verify.hpp"
#include "pairrank/util/memory.hpp"
#include "pairrank/util/rng.hpp"

using namespace pairrank;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Criterion 1 -------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto checks = training::run_gradcheck_suite(1e-4, 1e-5);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string failed;
  bool has_objective = false;
  for (const auto& c : checks) {
    worst = std::max(worst, c.report.max_rel_error);
    if (!c.report.passed) failed += " " + c.name;
    has_objective = has_objective || c.name.find("4-pair") != std::string::npos;
  }
  const bool pass = failed.empty() && has_objective && elapsed < 60.0;
  return {pass, std::to_string(checks.size()) + " checks, worst rel err " + fmt("%.2e", worst) + " < 1e-4, " +
                    fmt("%.1f", elapsed) + " s < 60 s" + (failed.empty() ? "" : "; failed:" + failed)};
}

// Criterion 2 -------------------------------------------------------------

void randomize(model::ModelState& m, Rng& rng) {
  for (auto& [name, t] : m.named_parameters())
    for (auto& v : t.mutable_data()) v = rng.normal(0.0, 0.3);
  for (auto& [name, stats] : m.running_stats()) {
    for (auto& v : stats->mean) v = rng.normal(0.0, 0.2);
    for (auto& v : stats->var) v = rng.uniform(0.5, 2.0);
  }
}

Outcome ranking_algebra() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  const auto config = model::BackboneConfig::lite();
  constexpr int kModels = 50, kDrawsPerModel = 20;
  double worst_reflex = 0.0, worst_anti = 0.0, worst_add = 0.0;
  int draws = 0;
  for (int m = 0; m < kModels; ++m) {
    auto model = model::ModelState::init(config, 1000 + m);
    if (m % 2 == 1) randomize(model, rng);
    for (int d = 0; d < kDrawsPerModel; ++d) {
      data::Image imgs[3];
      for (auto& img : imgs) {
        img = data::Image::zeros(config.input_size, config.input_size);
        for (auto& p : img.pixels) p = rng.uniform();
      }
      // One infer-mode batch gives f(I_i), f(I_j), f(I_k); scores are w^T(f_a - f_b).
      const data::Image* ptrs[3] = {&imgs[0], &imgs[1], &imgs[2]};
      const auto f = model.extract(data::to_tensor(ptrs)).features;
      auto score = [&](std::size_t a, std::size_t b) {
        return model::rank_logits(ad::gather_rows(f, std::vector<std::size_t>{a}),
                                  ad::gather_rows(f, std::vector<std::size_t>{b}), model.rank_weight())
            .item();
      };
      const double rij = score(0, 1), rji = score(1, 0), rjk = score(1, 2), rik = score(0, 2);
      worst_reflex = std::max(worst_reflex, std::abs(score(0, 0)));
      worst_anti = std::max(worst_anti, std::abs(rij + rji));
      worst_add = std::max(worst_add, std::abs(rik - rij - rjk));
      if (d % 5 == 0) {
        // The single-pair entry point agrees with the batched scores.
        const auto i = data::to_tensor(imgs[0]), j = data::to_tensor(imgs[1]);
        worst_reflex = std::max(worst_reflex, std::abs(model::rank_score(model, i, i)));
        worst_anti = std::max(worst_anti, std::abs(model::rank_score(model, j, i) + rij));
      }
      ++draws;
    }
  }
  const double elapsed = seconds_since(t0);
  const bool pass = draws >= 1000 && worst_reflex < 1e-9 && worst_anti < 1e-9 && worst_add < 1e-8 && elapsed < 60.0;
  return {pass, std::to_string(draws) + " draws: |R(I,I)| " + fmt("%.1e", worst_reflex) + " < 1e-9, |R(i,j)+R(j,i)| " +
                    fmt("%.1e", worst_anti) + " < 1e-9, additivity " + fmt("%.1e", worst_add) + " < 1e-8, " +
                    fmt("%.1f", elapsed) + " s < 60 s"};
}

// Criterion 8 -------------------------------------------------------------

Outcome metric_oracles() {
  Rng rng(8);
  int instances = 0, auc_mismatches = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 200));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const auto levels = rng.uniform_int(1, 50);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = trial % 2 == 0 ? static_cast<double>(rng.uniform_int(0, levels)) : rng.normal();
      labels[i] = static_cast<int>(rng.uniform_int(0, 1));
    }
    labels[0] = 0;
    labels[n - 1] = 1;
    double wins = 0.0;
    std::size_t total = 0;
    for (std::size_t a = 0; a < n; ++a) {
      if (labels[a] != 1) continue;
      for (std::size_t b = 0; b < n; ++b) {
        if (labels[b] != 0) continue;
        ++total;
        wins += scores[a] > scores[b] ? 1.0 : scores[a] == scores[b] ? 0.5 : 0.0;
      }
    }
    if (eval::auc(scores, labels) != wins / static_cast<double>(total)) ++auc_mismatches;
    ++instances;
  }
  const double r = eval::pearson_r(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4});
  const data::Mask a{4, 2, {1, 1, 1, 1, 0, 0, 0, 0}};
  const data::Mask b{4, 2, {0, 0, 1, 1, 1, 1, 0, 0}};
  const data::Mask c{4, 2, {0, 0, 0, 0, 1, 1, 1, 1}};
  const bool dice_ok = eval::dice(a, a) == 1.0 && eval::dice(a, c) == 0.0 && eval::dice(a, b) == 0.5;
  const bool pass = auc_mismatches == 0 && std::abs(r - 0.8) < 1e-12 && dice_ok;
  return {pass, "auc exact on " + std::to_string(instances - auc_mismatches) + "/" + std::to_string(instances) +
                    " instances (n <= 200), pearson " + fmt("%.15f", r) + " vs 0.8, dice {1, 0, 0.5} " +
                    (dice_ok ? "exact" : "MISMATCH")};
}

// Shared evaluation helpers --------------------------------------------------

double untrained_r(const cli::ExperimentConfig& config, const data::LongitudinalDataset& ds) {
  const auto model = cli::model_factory(config, ds)();
  return eval::evaluate(model, ds, data::Split::kTest).pearson_r;
}

double frozen_r(cli::ExperimentConfig config, const data::LongitudinalDataset& ds, const fs::path& out,
                cli::RunLog& log) {
  config.train.ablation = training::Ablation::kFrozenBackbone;
  // With the backbone fixed the features are computed once, so each run is cheap.
  config.train.augment = false;
  config.train.grid_max_epochs = 0;
  config.train.max_epochs = 200;
  config.out = out;
  const auto outcome = cli::cmd_train(config, log);
  return eval::evaluate(outcome.result.model, ds, data::Split::kTest).pearson_r;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Acceptance criteria 1-9"};
  std::string work = "acceptance_runs";
  std::vector<int> only;
  std::uint64_t seed = 1;
  app.add_option("--work", work, "Scratch directory for the scenario runs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--seed", seed);
  CLI11_PARSE(app, argc, argv);
  const auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  const fs::path root = fs::absolute(work);
  fs::create_directories(root);
  cli::RunLog log;

  std::map<int, Outcome> results;
  auto run = [&](int id, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    log("criterion " + std::to_string(id) + " ...");
    try {
      results[id] = fn();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("exception: ") + e.what()};
    }
    log(std::string(results[id].pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + ": " +
        results[id].detail);
  };

  run(1, gradient_correctness);
  run(2, ranking_algebra);
  run(8, metric_oracles);

  // Starmen scenario: criteria 3, 6 (half) and 9.
  const bool need_starmen = wanted(3) || wanted(6) || wanted(9);
  std::optional<cli::ReproResult> starmen;
  double starmen_seconds = 0.0;
  auto starmen_config = cli::starmen_recipe(seed);
  starmen_config.out = root / "starmen_a";
  if (need_starmen) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      starmen = cli::run_pipeline(starmen_config, log);
    } catch (const std::exception& e) {
      log(std::string("starmen pipeline failed: ") + e.what());
    }
    starmen_seconds = seconds_since(t0);
  }
  run(3, [&]() -> Outcome {
    if (!starmen) return {false, "pipeline failed"};
    const auto& r = starmen->report;
    const double auc = r.auc.value_or(0.0);
    const bool pass = auc >= 0.95 && r.pearson_r >= 0.90 && starmen_seconds <= 1800.0;
    return {pass, "test AUC " + fmt("%.4f", auc) + " >= 0.95, r " + fmt("%.4f", r.pearson_r) + " >= 0.90 over " +
                      std::to_string(r.pairs.size()) + " pairs, lr " + fmt("%g", starmen->train.result.history.lr) +
                      ", " + fmt("%.0f", starmen_seconds) + " s <= 1800 s"};
  });
  run(9, [&]() -> Outcome {
    if (!starmen) return {false, "first pipeline failed"};
    auto again = starmen_config;
    again.out = root / "starmen_b";
    (void)cli::run_pipeline(again, log);
    bool same = true;
    std::string detail;
    for (const char* file : {"train/history.csv", "eval/report.json"}) {
      const auto a = cli::file_checksum(starmen_config.out / file);
      const auto b = cli::file_checksum(again.out / file);
      same = same && a == b;
      detail += std::string(file) + " " + a + (a == b ? " == " : " != ") + b + "; ";
    }
    return {same, detail};
  });

  // Tumor scenario: criteria 4, 5, 6 (half) and 7.
  const bool need_tumor = wanted(4) || wanted(5) || wanted(6) || wanted(7);
  auto tumor_config = cli::tumor_recipe(seed);
  std::optional<data::LongitudinalDataset> tumor_ds;
  std::optional<cli::TrainOutcome> tumor_pairnet, tumor_csr;
  std::optional<eval::EvalReport> pairnet_report, csr_report;
  double tumor_seconds = 0.0;
  if (need_tumor) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto c = tumor_config;
      c.out = root / "tumor" / "data";
      (void)cli::cmd_generate(c, true, log);
      tumor_config.data_dir = c.out;
      tumor_ds = cli::load_split_dataset(tumor_config);

      c = tumor_config;
      c.out = root / "tumor" / "supervised";
      tumor_pairnet = cli::cmd_train(c, log);
      c.checkpoint = c.out / "model.ckpt";
      c.out = root / "tumor" / "supervised_eval";
      pairnet_report = cli::cmd_eval(c, log);

      c = tumor_config;
      c.train.task = training::Task::kCsr;
      c.out = root / "tumor" / "csr";
      tumor_csr = cli::cmd_train(c, log);
      c.checkpoint = c.out / "model.ckpt";
      c.out = root / "tumor" / "csr_eval";
      csr_report = cli::cmd_eval(c, log);
    } catch (const std::exception& e) {
      log(std::string("tumor pipeline failed: ") + e.what());
    }
    tumor_seconds = seconds_since(t0);
  }
  run(4, [&]() -> Outcome {
    if (!pairnet_report || !csr_report) return {false, "pipeline failed"};
    const double r = pairnet_report->pearson_r, rc = csr_report->pearson_r;
    const bool pass = r >= 0.85 && r > rc && tumor_seconds <= 2700.0;
    return {pass, "supervised r " + fmt("%.4f", r) + " >= 0.85 and > CSR r " + fmt("%.4f", rc) + ", " +
                      fmt("%.0f", tumor_seconds) + " s <= 2700 s"};
  });
  run(5, [&]() -> Outcome {
    if (!pairnet_report || !csr_report || !pairnet_report->dice_curve || !csr_report->dice_curve) {
      return {false, "missing dice curves"};
    }
    const auto& p = *pairnet_report->dice_curve;
    const auto& c = *csr_report->dice_curve;
    int wins = 0;
    std::string curve;
    for (std::size_t i = 0; i < p.size() && i < c.size(); ++i) {
      wins += p[i].mean_dice > c[i].mean_dice ? 1 : 0;
      curve += fmt(" %.2f:", p[i].threshold) + fmt("%.3f/", p[i].mean_dice) + fmt("%.3f", c[i].mean_dice);
    }
    // Duplicated pairs give an identically zero map.
    bool zero = true;
    int duplicates = 0;
    for (const auto& s : tumor_ds->subjects) {
      if (s.split != data::Split::kTest) continue;
      for (const auto& sample : s.samples) {
        const auto map = eval::weighted_cam(tumor_pairnet->result.model, sample.image, sample.image);
        for (double v : map.raw) zero = zero && v == 0.0;
        for (double v : map.normalized) zero = zero && v == 0.0;
        ++duplicates;
      }
    }
    const bool pass = p.size() == 7 && wins >= 5 && zero;
    return {pass, "PaIRNet > CSR at " + std::to_string(wins) + "/7 thresholds (pairnet/csr" + curve + "); " +
                      std::to_string(duplicates) + " duplicated-pair maps " + (zero ? "all zero" : "NOT zero")};
  });
  run(6, [&]() -> Outcome {
    if (!starmen || !tumor_ds || !pairnet_report) return {false, "scenario runs missing"};
    auto s_config = starmen_config;
    s_config.data_dir = starmen_config.out / "data";
    const auto s_ds = cli::load_split_dataset(s_config);
    const double s_untrained = untrained_r(s_config, s_ds);
    const double s_frozen = frozen_r(s_config, s_ds, root / "starmen_frozen", log);
    const double s_full = starmen->report.pearson_r;
    const double t_untrained = untrained_r(tumor_config, *tumor_ds);
    const double t_frozen = frozen_r(tumor_config, *tumor_ds, root / "tumor" / "frozen", log);
    const double t_full = pairnet_report->pearson_r;
    const bool pass = std::abs(s_untrained) < 0.2 && std::abs(t_untrained) < 0.2 && s_untrained < s_frozen &&
                      s_frozen < s_full && t_untrained < t_frozen && t_frozen < t_full;
    return {pass, "starmen untrained " + fmt("%.3f", s_untrained) + " < frozen " + fmt("%.3f", s_frozen) +
                      " < full " + fmt("%.3f", s_full) + "; tumor untrained " + fmt("%.3f", t_untrained) +
                      " < frozen " + fmt("%.3f", t_frozen) + " < full " + fmt("%.3f", t_full) +
                      "; |untrained r| < 0.2"};
  });
  run(7, [&]() -> Outcome {
    if (!pairnet_report || !pairnet_report->robustness) return {false, "missing robustness sweep"};
    const auto& rows = *pairnet_report->robustness;
    double worst = -1.0;
    std::string worst_name;
    int perturbed = 0;
    bool pass = true;
    for (const auto& row : rows) {
      if (row.name == "identity") continue;
      ++perturbed;
      if (row.drop > worst) {
        worst = row.drop;
        worst_name = row.name;
      }
      pass = pass && row.drop < 0.05;
    }
    pass = pass && perturbed == 10;
    return {pass, std::to_string(perturbed) + " perturbations of the augmented supervised tumor model; clean r " +
                      fmt("%.4f", pairnet_report->pearson_r) + ", largest drop " + fmt("%.4f", worst) + " (" +
                      worst_name + ") < 0.05"};
  });

  nlohmann::json summary = nlohmann::json::object();
  bool all = true;
  std::cout << "\n";
  for (const auto& [id, outcome] : results) {
    std::cout << (outcome.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << outcome.detail << "\n";
    summary[std::to_string(id)] = {{"pass", outcome.pass}, {"detail", outcome.detail}};
    all = all && outcome.pass;
  }
  std::ofstream(root / "acceptance_summary.json") << summary.dump(2) << '\n';
  return all ? 0 : 1;
}
