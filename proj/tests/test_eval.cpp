#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "pairrank/data/image_io.hpp"
#include "pairrank/data/synth.hpp"
#include "pairrank/eval/cam.hpp"
#include "pairrank/eval/evaluate.hpp"
#include "pairrank/eval/metrics.hpp"
#include "pairrank/eval/sweep.hpp"

using namespace pairrank;
using namespace pairrank::eval;
namespace fs = std::filesystem;

namespace {

/// Direct enumeration over every (positive, negative) pair.
double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++total;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(total);
}

data::Mask mask_from(int w, int h, std::vector<std::uint8_t> bits) {
  data::Mask m{w, h, std::move(bits)};
  return m;
}

model::BackboneConfig tiny_config(int input_size) {
  model::BackboneConfig c;
  c.preset = "tiny";
  c.input_size = input_size;
  c.stem_width = 4;
  c.stage_widths = {4, 8};
  c.blocks_per_stage = {1, 1};
  c.feature_dim = 8;
  return c;
}

const data::LongitudinalDataset& tiny_tumor() {
  static const auto ds = [] {
    data::TumorConfig c;
    c.n_subjects = 5;
    c.image_size = 48;
    c.radius_lo = 3.0;
    c.radius_hi = 5.0;
    c.growth_lo = 1.0;
    c.growth_hi = 2.0;
    c.max_translation = 4.0;
    auto d = data::generate_tumor(c, 3);
    data::split_subjects(d, {0.6, 0.2, 0.2}, 2);
    return d;
  }();
  return ds;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("pearson examples") {
  const std::vector<double> x{1, 2, 3, 4};
  CHECK(std::abs(pearson_r(x, std::vector<double>{1, 3, 2, 4}) - 0.8) < 1e-12);
  CHECK(pearson_r(x, std::vector<double>{3, 5, 7, 9}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson_r(x, std::vector<double>{-1, -2, -3, -4}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(pearson_r(std::vector<double>{1}, std::vector<double>{1}), MetricError);
  CHECK_THROWS_AS(pearson_r(x, std::vector<double>{1, 2}), MetricError);
  CHECK_THROWS_AS(pearson_r(x, std::vector<double>{2, 2, 2, 2}), MetricError);
}

TEST_CASE("pearson is invariant under positive affine rescaling") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(20), y(20), xs(20), ys(20);
    const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-5.0, 5.0);
    const double c = rng.uniform(0.1, 10.0), d = rng.uniform(-5.0, 5.0);
    for (std::size_t i = 0; i < 20; ++i) {
      x[i] = rng.normal();
      y[i] = x[i] + rng.normal();
      xs[i] = a * x[i] + b;
      ys[i] = c * y[i] + d;
    }
    const double r = pearson_r(x, y);
    CHECK(std::abs(pearson_r(xs, ys) - r) < 1e-12);
    CHECK(std::abs(pearson_r(y, x) - r) < 1e-15);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
  }
}

TEST_CASE("auc examples") {
  CHECK(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc(std::vector<double>{0, 1, 0, 1}, std::vector<int>{0, 1, 0, 1}) == 1.0);
  CHECK(auc(std::vector<double>{3, 3, 3, 3}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), MetricError);
  CHECK_THROWS_AS(auc(std::vector<double>{1, 2}, std::vector<int>{0, 2}), MetricError);
}

TEST_CASE("auc equals brute-force enumeration") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 200));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    // Coarse integer scores make ties common.
    const auto levels = rng.uniform_int(1, 30);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = trial % 2 == 0 ? static_cast<double>(rng.uniform_int(0, levels)) : rng.normal();
      labels[i] = static_cast<int>(rng.uniform_int(0, 1));
    }
    labels[0] = 0;
    labels[1] = 1;
    const double expected = brute_force_auc(scores, labels);
    REQUIRE(auc(scores, labels) == expected);

    // Strictly monotone transform leaves the value unchanged.
    std::vector<double> squashed(n);
    for (std::size_t i = 0; i < n; ++i) squashed[i] = std::atan(scores[i]) * 3.0 + 1.0;
    CHECK(auc(squashed, labels) == expected);
  }
}

TEST_CASE("dice examples and binarize") {
  const auto a = mask_from(4, 2, {1, 1, 1, 1, 0, 0, 0, 0});
  const auto b = mask_from(4, 2, {0, 0, 1, 1, 1, 1, 0, 0});
  const auto c = mask_from(4, 2, {0, 0, 0, 0, 1, 1, 1, 1});
  CHECK(dice(a, a) == 1.0);
  CHECK(dice(a, c) == 0.0);
  CHECK(dice(a, b) == 0.5);
  CHECK(dice(b, a) == dice(a, b));
  CHECK(dice(data::Mask::zeros(3, 3), data::Mask::zeros(3, 3)) == 1.0);
  CHECK_THROWS_AS(dice(a, data::Mask::zeros(2, 4)), MetricError);

  const std::vector<double> map{0.1, 0.6, 0.59, 1.0};
  const auto m = binarize(map, 2, 2, 0.6);
  CHECK(m.bits == std::vector<std::uint8_t>{0, 1, 0, 1});
}

TEST_CASE("normalize_map scales to the unit interval") {
  const std::vector<double> raw{1, 2, 3, 5};
  const auto n = normalize_map(raw, 2, 2, 2, 2);
  CHECK(*std::min_element(n.begin(), n.end()) == 0.0);
  CHECK(*std::max_element(n.begin(), n.end()) == 1.0);
  CHECK(n[1] == doctest::Approx(0.25));
  const auto up = normalize_map(raw, 2, 2, 8, 8);
  CHECK(up.size() == 64);
  CHECK(*std::min_element(up.begin(), up.end()) == 0.0);
  CHECK(*std::max_element(up.begin(), up.end()) == 1.0);
  const auto flat = normalize_map(std::vector<double>{2, 2, 2, 2}, 2, 2, 4, 4);
  for (double v : flat) CHECK(v == 0.0);
}

TEST_CASE("weighted cam of a duplicated pair is zero and weights are swap invariant") {
  const auto m = model::ModelState::init(tiny_config(48), 7);
  const auto& s = tiny_tumor().subjects[0];
  const auto& early = s.samples[0].image;
  const auto& late = s.samples[2].image;

  const auto same = weighted_cam(m, late, late);
  for (double w : same.channel_weights) CHECK(w == 0.0);
  for (double v : same.raw) CHECK(v == 0.0);
  for (double v : same.normalized) CHECK(v == 0.0);
  CHECK(same.width == 48);

  const auto fwd = weighted_cam(m, early, late);
  const auto rev = weighted_cam(m, late, early);
  CHECK(fwd.channel_weights == rev.channel_weights);
  for (double w : fwd.channel_weights) CHECK(w >= 0.0);

  // Weights follow |w_c (f_c(earlier) - f_c(later))|.
  const auto fe = m.extract(data::to_tensor(early)).features;
  const auto fl = m.extract(data::to_tensor(late)).features;
  for (std::size_t c = 0; c < fwd.channel_weights.size(); ++c)
    CHECK(fwd.channel_weights[c] == doctest::Approx(std::abs(m.rank_weight()[c] * (fe[c] - fl[c]))));
}

TEST_CASE("cam combination is the weighted channel sum") {
  const auto act = ad::Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, 10, 0, 0, 10});
  const std::vector<double> w{0.5, 0.1};
  const auto map = combine_activations(w, act, 2, 2);
  REQUIRE(map.raw.size() == 4);
  CHECK(map.raw[0] == doctest::Approx(1.5));
  CHECK(map.raw[1] == doctest::Approx(1.0));
  CHECK(map.raw[3] == doctest::Approx(3.0));
}

TEST_CASE("overlay properties") {
  auto img = data::Image::filled(4, 4, 0.3);
  img.at(1, 2) = 0.9;
  const std::vector<double> zero(16, 0.0);
  const auto gray = overlay_rgb(img, zero, 0.6);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(gray[3 * i] == data::to_byte(img.pixels[i]));
    CHECK(gray[3 * i + 1] == data::to_byte(img.pixels[i]));
    CHECK(gray[3 * i + 2] == data::to_byte(img.pixels[i]));
  }

  const auto flat = data::Image::filled(4, 4, 0.5);
  const std::vector<double> full(16, 1.0);
  const auto pure = overlay_rgb(flat, full, 1.0);
  const auto hot = warm_color(1.0);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t k = 0; k < 3; ++k) CHECK(pure[3 * i + k] == data::to_byte(hot[k]));

  const auto dir = fs::temp_directory_path() / "pairrank_tests" / "overlay";
  fs::create_directories(dir);
  std::vector<double> ramp(16);
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = i / 15.0;
  render_overlay(img, ramp, dir / "a.png");
  render_overlay(img, ramp, dir / "b.png");
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
  CHECK(!slurp(dir / "a.png").empty());
}

TEST_CASE("predicted change is zero on identical images and antisymmetric") {
  auto m = model::ModelState::init(tiny_config(48), 1, true);
  const auto& s = tiny_tumor().subjects[1];
  const auto& a = s.samples[0].image;
  const auto& b = s.samples[1].image;
  for (Method method : {Method::kPairnet, Method::kCsr}) {
    CHECK(predicted_change(m, a, a, method) == 0.0);
    CHECK(std::abs(predicted_change(m, a, b, method) + predicted_change(m, b, a, method)) < 1e-9);
  }
  CHECK(predicted_change(m, a, b, Method::kPairnet) ==
        doctest::Approx(model::rank_score(m, data::to_tensor(b), data::to_tensor(a))));
}

TEST_CASE("truth masks for consecutive visits match the stored masks") {
  const auto& s = tiny_tumor().subjects[0];
  for (std::size_t t = 1; t < s.samples.size(); ++t) {
    const auto m = pair_truth_mask(s, t - 1, t);
    REQUIRE(m.has_value());
    CHECK(*m == *s.samples[t].change_mask);
  }
  const auto wide = pair_truth_mask(s, 0, 2);
  REQUIRE(wide.has_value());
  CHECK(wide->count() > s.samples[2].change_mask->count());
}

TEST_CASE("evaluation report structure") {
  const auto m = model::ModelState::init(tiny_config(48), 2, true);
  const auto& ds = tiny_tumor();
  EvalOptions options;
  options.dice = true;
  options.robustness = true;
  const auto report = evaluate(m, ds, data::Split::kTest, options);
  CHECK(report.method == "pairnet");
  CHECK(report.pearson_r >= -1.0);
  CHECK(report.pearson_r <= 1.0);
  REQUIRE(report.auc.has_value());
  CHECK(*report.auc >= 0.0);
  CHECK(*report.auc <= 1.0);
  for (const auto& p : report.pairs) {
    CHECK(p.gt_delta > 0.0);
    CHECK(p.t_later > p.t_earlier);
  }

  REQUIRE(report.dice_curve.has_value());
  REQUIRE(report.dice_curve->size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK((*report.dice_curve)[i].threshold == doctest::Approx(0.60 + 0.05 * i));
    CHECK((*report.dice_curve)[i].mean_dice >= 0.0);
    CHECK((*report.dice_curve)[i].mean_dice <= 1.0);
  }

  REQUIRE(report.robustness.has_value());
  const auto& rows = *report.robustness;
  REQUIRE(rows.size() == 11);
  CHECK(rows[0].pearson_r == report.pearson_r);
  CHECK(rows[0].drop == 0.0);
  const std::vector<std::string> names{"identity",       "translate_x+10", "translate_x-10", "translate_y+10",
                                       "translate_y-10", "rotate+10",      "rotate-10",      "contrast_0.8",
                                       "contrast_1.2",   "brightness_0.8", "brightness_1.2"};
  std::vector<std::string> got;
  for (const auto& r : rows) got.push_back(r.name);
  std::sort(got.begin() + 1, got.end());
  auto want = names;
  std::sort(want.begin() + 1, want.end());
  CHECK(got == want);

  const auto dir = fs::temp_directory_path() / "pairrank_tests" / "report";
  fs::remove_all(dir);
  write_report(report, dir);
  for (const char* f : {"report.json", "pairs.csv", "dice.csv", "robustness.csv"}) CHECK(fs::exists(dir / f));
  const auto first = slurp(dir / "report.json");
  write_report(evaluate(m, ds, data::Split::kTest, options), dir);
  CHECK(slurp(dir / "report.json") == first);

  const auto csr = evaluate(m, ds, data::Split::kTest, {Method::kCsr});
  CHECK(csr.mse.has_value());
  CHECK(csr.method == "csr");
}

TEST_CASE("data size sweep skips empty fractions and reproduces the full run") {
  const auto& ds = tiny_tumor();
  const training::ModelFactory factory = [] { return model::ModelState::init(tiny_config(48), 3); };
  training::TrainConfig config;
  config.task = training::Task::kSupervised;
  config.lr = 1e-3;
  config.batch_size = 8;
  config.max_epochs = 1;
  CHECK_THROWS(data_size_sweep(factory, ds, {0.0}, config, Method::kPairnet));
  // 1% of three train subjects rounds to none.
  const auto sweep = data_size_sweep(factory, ds, {0.01, 1.0}, config, Method::kPairnet);
  REQUIRE(sweep.size() == 2);
  CHECK(sweep[0].skipped);
  CHECK_FALSE(sweep[0].message.empty());
  REQUIRE(sweep[1].report.has_value());
  CHECK(sweep[1].train_subjects == ds.subject_count(data::Split::kTrain));

  const auto direct = training::train(factory(), ds, config);
  const auto report = evaluate(direct.model, ds, data::Split::kTest);
  CHECK(sweep[1].report->pearson_r == report.pearson_r);
  CHECK(to_json(sweep).size() == 2);
}
