#include "pairrank/eval/evaluate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "pairrank/data/synth.hpp"
#include "pairrank/eval/metrics.hpp"

namespace pairrank::eval {

using data::LongitudinalDataset;
using data::Split;

namespace {

constexpr std::size_t kChunk = 32;

/// Infer-mode features (and optionally final activations) of every image of a split.
class FeatureTable {
 public:
  FeatureTable(const model::ModelState& model, const LongitudinalDataset& dataset, Split split, bool keep_activations,
               const data::AugmentParams* perturb = nullptr)
      : dim_(static_cast<std::size_t>(model.config().feature_dim)) {
    std::vector<const data::Image*> images;
    std::vector<data::Image> perturbed;
    for (std::size_t s = 0; s < dataset.subjects.size(); ++s) {
      const auto& subject = dataset.subjects[s];
      if (split != Split::kUnassigned && subject.split != split) continue;
      for (std::size_t i = 0; i < subject.samples.size(); ++i) {
        rows_[{s, i}] = images.size();
        images.push_back(&subject.samples[i].image);
      }
    }
    if (perturb != nullptr) {
      perturbed.reserve(images.size());
      for (const auto* image : images) perturbed.push_back(data::augment(*image, *perturb));
      for (std::size_t i = 0; i < images.size(); ++i) images[i] = &perturbed[i];
    }
    ad::NoGradGuard guard;
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
      const std::span<const data::Image* const> all(images);
      const auto chunk = all.subspan(start, std::min(kChunk, images.size() - start));
      const auto out = model.extract(data::to_tensor(chunk));
      features_.insert(features_.end(), out.features.data().begin(), out.features.data().end());
      if (keep_activations) {
        activation_shape_ = {1, out.activations.dim(1), out.activations.dim(2), out.activations.dim(3)};
        activations_.insert(activations_.end(), out.activations.data().begin(), out.activations.data().end());
      }
    }
  }

  std::span<const double> features(std::size_t subject, std::size_t index) const {
    return std::span<const double>(features_).subspan(row(subject, index) * dim_, dim_);
  }

  ad::Tensor activations(std::size_t subject, std::size_t index) const {
    const std::size_t size = ad::shape_numel(activation_shape_);
    const auto begin = activations_.begin() + static_cast<std::ptrdiff_t>(row(subject, index) * size);
    return ad::Tensor::from(activation_shape_, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(size)));
  }

 private:
  std::size_t row(std::size_t subject, std::size_t index) const { return rows_.at({subject, index}); }

  std::size_t dim_;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> rows_;
  std::vector<double> features_;
  std::vector<double> activations_;
  ad::Shape activation_shape_;
};

void require_head(const model::ModelState& model, Method method) {
  if (method == Method::kCsr && !model.csr_head()) {
    throw std::invalid_argument("csr evaluation needs a checkpoint with a CSR head");
  }
}

double dot(std::span<const double> w, std::span<const double> f) {
  double s = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) s += w[c] * f[c];
  return s;
}

/// Predicted change later-minus-earlier from table rows.
double change_from(const model::ModelState& model, Method method, std::span<const double> earlier,
                   std::span<const double> later) {
  if (method == Method::kCsr) {
    const auto w = model.csr_head()->weight.data();
    const double b = model.csr_head()->bias[0];
    return (dot(w, later) + b) - (dot(w, earlier) + b);
  }
  const auto w = model.rank_weight().data();
  double s = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) s += w[c] * (later[c] - earlier[c]);
  return s;
}

std::vector<data::PairRecord> ordered_pairs(const LongitudinalDataset& dataset, Split split, std::size_t& ties) {
  std::vector<data::PairRecord> out;
  ties = 0;
  for (const auto& p : data::sample_pairs(dataset, split, data::PairMode::kAllOrdered)) {
    if (p.tie) {
      ++ties;
      continue;
    }
    out.push_back(p);
  }
  return out;
}

double correlation(const model::ModelState& model, Method method, const std::vector<data::PairRecord>& pairs,
                   const FeatureTable& earlier_table,
                   const FeatureTable& later_table) {
  std::vector<double> predicted, truth;
  for (const auto& p : pairs) {
    predicted.push_back(change_from(model, method, earlier_table.features(p.subject, p.first),
                                    later_table.features(p.subject, p.second)));
    truth.push_back(p.delta);
  }
  return pearson_r(predicted, truth);
}

std::vector<DicePoint> dice_from_table(const model::ModelState& model, const LongitudinalDataset& dataset,
                                       Method method, const std::vector<data::PairRecord>& pairs,
                                       const FeatureTable& table, const std::vector<double>& thresholds,
                                       CamBasis basis) {
  std::vector<DicePoint> curve;
  for (const double t : thresholds) curve.push_back({t, 0.0, 0});
  for (const auto& p : pairs) {
    const auto& subject = dataset.subjects[p.subject];
    const auto truth = pair_truth_mask(subject, p.first, p.second);
    if (!truth) continue;
    const auto& later = subject.samples[p.second].image;
    const auto fe = table.features(p.subject, p.first);
    const auto fl = table.features(p.subject, p.second);
    std::vector<double> weights(fe.size());
    ad::Tensor activations = table.activations(p.subject, p.second);
    if (method == Method::kCsr) {
      const auto w = model.csr_head()->weight.data();
      for (std::size_t c = 0; c < weights.size(); ++c) weights[c] = std::abs(w[c] * fl[c]);
    } else {
      const auto w = model.rank_weight().data();
      for (std::size_t c = 0; c < weights.size(); ++c) weights[c] = std::abs(w[c] * (fe[c] - fl[c]));
      if (basis == CamBasis::kEarlier) {
        activations = table.activations(p.subject, p.first);
      } else if (basis == CamBasis::kMean) {
        ad::NoGradGuard guard;
        activations = ad::scale(ad::add(activations, table.activations(p.subject, p.first)), 0.5);
      }
    }
    const auto map = combine_activations(weights, activations, later.width, later.height);
    for (auto& point : curve) {
      point.mean_dice += dice(binarize(map.normalized, later.width, later.height, point.threshold), *truth);
      ++point.pairs;
    }
  }
  if (curve.empty() || curve.front().pairs == 0) {
    throw std::invalid_argument("dice sweep: no ordered pair of the split has a ground-truth change mask");
  }
  for (auto& point : curve) point.mean_dice /= static_cast<double>(point.pairs);
  return curve;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view method_name(Method method) { return method == Method::kCsr ? "csr" : "pairnet"; }

Method parse_method(std::string_view name) {
  if (name == "pairnet") return Method::kPairnet;
  if (name == "csr") return Method::kCsr;
  throw std::invalid_argument("unknown method '" + std::string(name) + "' (expected pairnet or csr)");
}

double predicted_change(const model::ModelState& model, const data::Image& earlier, const data::Image& later,
                        Method method) {
  require_head(model, method);
  const auto e = data::to_tensor(earlier);
  const auto l = data::to_tensor(later);
  return method == Method::kCsr ? model::csr_change(model, l, e) : model::rank_score(model, l, e);
}

std::vector<Perturbation> standard_perturbations() {
  auto make = [](std::string name, double rot, double dx, double dy, double brightness, double contrast) {
    return Perturbation{std::move(name), data::AugmentParams{rot, dx, dy, brightness, contrast}};
  };
  return {make("identity", 0, 0, 0, 1, 1),          make("translate_x+10", 0, 10, 0, 1, 1),
          make("translate_x-10", 0, -10, 0, 1, 1),  make("translate_y+10", 0, 0, 10, 1, 1),
          make("translate_y-10", 0, 0, -10, 1, 1),  make("rotate+10", 10, 0, 0, 1, 1),
          make("rotate-10", -10, 0, 0, 1, 1),       make("contrast_0.8", 0, 0, 0, 1, 0.8),
          make("contrast_1.2", 0, 0, 0, 1, 1.2),    make("brightness_0.8", 0, 0, 0, 0.8, 1),
          make("brightness_1.2", 0, 0, 0, 1.2, 1)};
}

std::optional<data::Mask> pair_truth_mask(const data::Subject& subject, std::size_t earlier, std::size_t later) {
  const auto& e = subject.samples.at(earlier);
  const auto& l = subject.samples.at(later);
  if (e.lesion && l.lesion) return data::pair_change_mask(*l.lesion, e.lesion->radius, l.image.width, l.image.height);
  if (later == earlier + 1 && l.change_mask) return l.change_mask;
  return std::nullopt;
}

EvalReport evaluate(const model::ModelState& model, const LongitudinalDataset& dataset, Split split,
                    const EvalOptions& options) {
  require_head(model, options.method);
  EvalReport report;
  report.method = method_name(options.method);
  report.split = data::split_name(split);
  const FeatureTable table(model, dataset, split, options.dice);
  const auto pairs = ordered_pairs(dataset, split, report.excluded_ties);
  if (pairs.size() < 2) throw std::invalid_argument("evaluation needs at least two ordered non-tie pairs");

  std::vector<double> predicted, truth, scores;
  std::vector<int> labels;
  for (const auto& p : pairs) {
    const auto& subject = dataset.subjects[p.subject];
    PairPrediction rec;
    rec.subject = subject.id;
    rec.t_earlier = subject.samples[p.first].time_index;
    rec.t_later = subject.samples[p.second].time_index;
    rec.gt_delta = p.delta;
    rec.predicted =
        change_from(model, options.method, table.features(p.subject, p.first), table.features(p.subject, p.second));
    rec.label = p.label;
    rec.prob = ad::sigmoid(rec.predicted);
    predicted.push_back(rec.predicted);
    truth.push_back(rec.gt_delta);
    // Both orientations: the reversed pair scores exactly -predicted.
    scores.push_back(rec.predicted);
    labels.push_back(1);
    scores.push_back(-rec.predicted);
    labels.push_back(0);
    report.pairs.push_back(std::move(rec));
  }
  report.pearson_r = pearson_r(predicted, truth);
  report.auc = auc(scores, labels);

  if (options.method == Method::kCsr) {
    const auto w = model.csr_head()->weight.data();
    const double b = model.csr_head()->bias[0];
    double sse = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < dataset.subjects.size(); ++s) {
      const auto& subject = dataset.subjects[s];
      if (split != Split::kUnassigned && subject.split != split) continue;
      for (std::size_t i = 0; i < subject.samples.size(); ++i) {
        const double err = dot(w, table.features(s, i)) + b - subject.samples[i].target;
        sse += err * err;
        ++n;
      }
    }
    report.mse = sse / static_cast<double>(n);
  }
  if (options.dice) {
    report.dice_curve = dice_from_table(model, dataset, options.method, pairs, table, options.thresholds, options.basis);
  }
  if (options.robustness) report.robustness = robustness_sweep(model, dataset, split, options.method);
  return report;
}

std::vector<DicePoint> dice_sweep(const model::ModelState& model, const LongitudinalDataset& dataset, Split split,
                                  Method method, const std::vector<double>& thresholds, CamBasis basis) {
  require_head(model, method);
  const FeatureTable table(model, dataset, split, true);
  std::size_t ties = 0;
  const auto pairs = ordered_pairs(dataset, split, ties);
  return dice_from_table(model, dataset, method, pairs, table, thresholds, basis);
}

std::vector<RobustnessRow> robustness_sweep(const model::ModelState& model, const LongitudinalDataset& dataset,
                                            Split split, Method method,
                                            const std::vector<Perturbation>& perturbations) {
  require_head(model, method);
  std::size_t ties = 0;
  const auto pairs = ordered_pairs(dataset, split, ties);
  const FeatureTable clean(model, dataset, split, false);
  const double clean_r = correlation(model, method, pairs, clean, clean);
  std::vector<RobustnessRow> rows;
  for (const auto& p : perturbations) {
    double r = clean_r;
    if (!(p.params.geometric_identity() && p.params.brightness == 1.0 && p.params.contrast == 1.0)) {
      const FeatureTable perturbed(model, dataset, split, false, &p.params);
      r = correlation(model, method, pairs, clean, perturbed);
    }
    rows.push_back({p.name, r, clean_r - r});
  }
  return rows;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["split"] = report.split;
  j["pearson_r"] = report.pearson_r;
  j["auc"] = report.auc ? nlohmann::json(*report.auc) : nlohmann::json(nullptr);
  j["mse"] = report.mse ? nlohmann::json(*report.mse) : nlohmann::json(nullptr);
  j["n_pairs"] = report.pairs.size();
  j["excluded_ties"] = report.excluded_ties;
  if (report.dice_curve) {
    j["dice_curve"] = nlohmann::json::array();
    for (const auto& d : *report.dice_curve) {
      j["dice_curve"].push_back({{"threshold", d.threshold}, {"mean_dice", d.mean_dice}, {"pairs", d.pairs}});
    }
  }
  if (report.robustness) {
    j["robustness"] = nlohmann::json::array();
    for (const auto& r : *report.robustness) {
      j["robustness"].push_back({{"transform", r.name}, {"pearson_r", r.pearson_r}, {"drop", r.drop}});
    }
  }
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : report.pairs) {
    j["pairs"].push_back({{"subject", p.subject},
                          {"t_earlier", p.t_earlier},
                          {"t_later", p.t_later},
                          {"gt_delta", p.gt_delta},
                          {"predicted", p.predicted},
                          {"label", p.label},
                          {"prob", p.prob}});
  }
  return j;
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
  };
  open("report.json") << to_json(report).dump(2) << '\n';
  {
    auto out = open("pairs.csv");
    out << "subject,t_earlier,t_later,gt_delta,predicted_change,label,prob\n";
    for (const auto& p : report.pairs) {
      out << p.subject << ',' << p.t_earlier << ',' << p.t_later << ',' << fmt(p.gt_delta) << ','
          << fmt(p.predicted) << ',' << p.label << ',' << fmt(p.prob) << '\n';
    }
  }
  if (report.dice_curve) {
    auto out = open("dice.csv");
    out << "threshold,mean_dice,pairs\n";
    for (const auto& d : *report.dice_curve) out << fmt(d.threshold) << ',' << fmt(d.mean_dice) << ',' << d.pairs << '\n';
  }
  if (report.robustness) {
    auto out = open("robustness.csv");
    out << "transform,pearson_r,drop\n";
    for (const auto& r : *report.robustness) out << r.name << ',' << fmt(r.pearson_r) << ',' << fmt(r.drop) << '\n';
  }
}

}  // namespace pairrank::eval
