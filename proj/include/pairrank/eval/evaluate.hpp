#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pairrank/data/dataset.hpp"
#include "pairrank/eval/cam.hpp"
#include "pairrank/model/model.hpp"

namespace pairrank::eval {

/// pairnet: R(I_later, I_earlier) (pre-sigmoid); csr: y_hat(later) - y_hat(earlier).
enum class Method { kPairnet, kCsr };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);

/// Predicted change from `earlier` to `later` (single images).
double predicted_change(const model::ModelState& model, const data::Image& earlier, const data::Image& later,
                        Method method);

inline const std::vector<double> kDiceThresholds{0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90};

struct PairPrediction {
  std::string subject;
  int t_earlier = 0;
  int t_later = 0;
  double gt_delta = 0.0;
  double predicted = 0.0;
  int label = 1;
  double prob = 0.5;  // sigma(predicted) for pairnet
};

struct DicePoint {
  double threshold = 0.0;
  double mean_dice = 0.0;
  std::size_t pairs = 0;
};

/// One deterministic perturbation of the later image of every test pair.
struct Perturbation {
  std::string name;
  data::AugmentParams params;
};

/// Identity plus translate x/y by +-10 px, rotate +-10 deg, contrast and brightness 0.8/1.2.
std::vector<Perturbation> standard_perturbations();

struct RobustnessRow {
  std::string name;
  double pearson_r = 0.0;
  double drop = 0.0;  // clean r minus perturbed r
};

struct EvalOptions {
  Method method = Method::kPairnet;
  bool dice = false;
  std::vector<double> thresholds = kDiceThresholds;
  CamBasis basis = CamBasis::kLater;
  bool robustness = false;
};

struct EvalReport {
  std::string method;
  std::string split;
  double pearson_r = 0.0;
  std::optional<double> auc;
  std::optional<double> mse;  // CSR only: per-image error on the split
  std::optional<std::vector<DicePoint>> dice_curve;
  std::optional<std::vector<RobustnessRow>> robustness;
  std::size_t excluded_ties = 0;
  std::vector<PairPrediction> pairs;  // strictly ordered pairs used for the correlation
};

/// Correlation over strictly ordered pairs (later minus earlier, tie pairs
/// skipped), ordering AUC over both orientations of every non-tie pair, plus
/// the optional Dice and robustness sweeps. Normalization runs in infer mode.
EvalReport evaluate(const model::ModelState& model, const data::LongitudinalDataset& dataset, data::Split split,
                    const EvalOptions& options = {});

/// Mean Dice per threshold between binarized change maps and ground-truth
/// change masks over the ordered pairs of `split`. Throws if no pair has a mask.
std::vector<DicePoint> dice_sweep(const model::ModelState& model, const data::LongitudinalDataset& dataset,
                                  data::Split split, Method method, const std::vector<double>& thresholds = kDiceThresholds,
                                  CamBasis basis = CamBasis::kLater);

/// Pearson r with each perturbation applied to the later image of every
/// ordered pair; the first row is the clean (identity) evaluation.
std::vector<RobustnessRow> robustness_sweep(const model::ModelState& model, const data::LongitudinalDataset& dataset,
                                            data::Split split, Method method,
                                            const std::vector<Perturbation>& perturbations = standard_perturbations());

/// Ground-truth change mask of the ordered pair (earlier, later) in the later
/// image's frame, from lesion geometry or the stored previous-visit mask.
std::optional<data::Mask> pair_truth_mask(const data::Subject& subject, std::size_t earlier, std::size_t later);

nlohmann::json to_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace pairrank::eval
