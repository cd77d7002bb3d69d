#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "pairrank/data/image.hpp"
#include "pairrank/model/checkpoint.hpp"
#include "pairrank/model/model.hpp"
#include "pairrank/util/rng.hpp"

using namespace pairrank;
using ad::Tensor;

namespace {

model::BackboneConfig small_config() {
  auto c = model::BackboneConfig::lite();
  c.input_size = 32;
  return c;
}

data::Image random_image(int size, Rng& rng) {
  auto img = data::Image::zeros(size, size);
  for (auto& p : img.pixels) p = rng.uniform();
  return img;
}

/// Replaces every parameter and running statistic with random values so the
/// properties are exercised away from the initializer's structure.
void randomize(model::ModelState& m, Rng& rng) {
  for (auto& [name, t] : m.named_parameters())
    for (auto& v : t.mutable_data()) v = rng.normal(0.0, 0.5);
  for (auto& [name, stats] : m.running_stats()) {
    for (auto& v : stats->mean) v = rng.normal(0.0, 0.2);
    for (auto& v : stats->var) v = rng.uniform(0.5, 2.0);
  }
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "pairrank_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("presets have D equal to the last stage width") {
  const auto lite = model::BackboneConfig::lite();
  CHECK(lite.feature_dim == 64);
  CHECK(lite.feature_dim == lite.stage_widths.back());
  CHECK(lite.input_size == 64);
  const auto big = model::BackboneConfig::resnet18_like();
  CHECK(big.feature_dim == 512);
  CHECK(big.feature_dim == big.stage_widths.back());
  CHECK(model::BackboneConfig::from_preset("lite") == lite);
  CHECK(model::BackboneConfig::from_preset("resnet18-like") == big);
  CHECK_THROWS(model::BackboneConfig::from_preset("vgg"));

  auto bad = lite;
  bad.feature_dim = 32;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = lite;
  bad.blocks_per_stage.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("extract is deterministic and pooling matches activation means") {
  const auto m = model::ModelState::init(small_config(), 3);
  Rng rng(1);
  const auto img = random_image(32, rng);
  const auto x = data::to_tensor(img);
  const auto a = m.extract(x);
  const auto b = m.extract(x);
  REQUIRE(a.features.shape() == ad::Shape{1, 64});
  const auto side = static_cast<std::size_t>(small_config().activation_size());
  REQUIRE(a.activations.shape() == ad::Shape{1, 64, side, side});
  CHECK(std::equal(a.features.data().begin(), a.features.data().end(), b.features.data().begin()));
  CHECK(std::equal(a.activations.data().begin(), a.activations.data().end(), b.activations.data().begin()));

  const auto hw = side * side;
  for (std::size_t c = 0; c < 64; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += a.activations[c * hw + i];
    CHECK(a.features[c] == doctest::Approx(s / static_cast<double>(hw)).epsilon(1e-12));
  }
}

TEST_CASE("zero image gives zero features at initialization") {
  // Convolutions have no bias and a fresh norm has zero shift and zero mean.
  const auto m = model::ModelState::init(small_config(), 5);
  const auto out = m.extract(data::to_tensor(data::Image::zeros(32, 32)));
  for (double v : out.features.data()) CHECK(v == 0.0);
}

TEST_CASE("ranking head algebra holds for random models and images") {
  Rng rng(11);
  for (int draw = 0; draw < 8; ++draw) {
    auto m = model::ModelState::init(small_config(), 100 + draw);
    if (draw % 2 == 1) randomize(m, rng);
    const auto i = data::to_tensor(random_image(32, rng));
    const auto j = data::to_tensor(random_image(32, rng));
    const auto k = data::to_tensor(random_image(32, rng));
    const double rij = model::rank_score(m, i, j);
    const double rji = model::rank_score(m, j, i);
    const double rjk = model::rank_score(m, j, k);
    const double rik = model::rank_score(m, i, k);
    CHECK(std::abs(model::rank_score(m, i, i)) < 1e-9);
    CHECK(std::abs(rij + rji) < 1e-9);
    CHECK(std::abs(rik - rij - rjk) < 1e-8);
    if (rij >= 0 && rjk >= 0) CHECK(rik >= 0);
    CHECK(model::rank_prob(m, i, i) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(model::rank_prob(m, i, j) + model::rank_prob(m, j, i) - 1.0) < 1e-9);
  }
}

TEST_CASE("large logit saturates the ranking probability") {
  auto m = model::ModelState::init(small_config(), 2);
  Rng rng(2);
  const auto i = data::to_tensor(random_image(32, rng));
  const auto j = data::to_tensor(random_image(32, rng));
  const double r = model::rank_score(m, i, j);
  REQUIRE(std::abs(r) > 1e-6);
  for (auto& w : m.rank_weight().mutable_data()) w *= 50.0 / r;
  CHECK(model::rank_score(m, i, j) == doctest::Approx(50.0));
  CHECK(model::rank_prob(m, i, j) > 1.0 - 1e-9);
}

TEST_CASE("scores do not depend on batch composition") {
  auto m = model::ModelState::init(small_config(), 9);
  Rng rng(9);
  randomize(m, rng);
  std::vector<data::Image> imgs;
  for (int n = 0; n < 5; ++n) imgs.push_back(random_image(32, rng));
  std::vector<const data::Image*> ptrs;
  for (const auto& img : imgs) ptrs.push_back(&img);
  const auto batch = m.extract(data::to_tensor(ptrs)).features;
  const std::size_t d = 64;
  for (std::size_t a = 0; a < imgs.size(); ++a) {
    const auto single = m.extract(data::to_tensor(imgs[a])).features;
    for (std::size_t c = 0; c < d; ++c)
      CHECK(std::abs(batch[a * d + c] - single[c]) <= 1e-12 * std::max(1.0, std::abs(single[c])));
  }
  // Pair score from the batch rows equals the stand-alone pair score.
  const auto rows_first = ad::gather_rows(batch, std::vector<std::size_t>{1});
  const auto rows_second = ad::gather_rows(batch, std::vector<std::size_t>{3});
  const double in_batch = model::rank_logits(rows_first, rows_second, m.rank_weight()).item();
  const double alone = model::rank_score(m, data::to_tensor(imgs[1]), data::to_tensor(imgs[3]));
  CHECK(std::abs(in_batch - alone) < 1e-9);
}

TEST_CASE("rank_logits is w^T(first - second)") {
  const auto w = Tensor::from({1, 3}, {1.0, -2.0, 0.5});
  const auto f1 = Tensor::from({2, 3}, {1, 2, 3, 0, 0, 4});
  const auto f2 = Tensor::from({2, 3}, {0, 1, 1, 2, 0, 0});
  const auto r = model::rank_logits(f1, f2, w);
  REQUIRE(r.shape() == ad::Shape{2, 1});
  CHECK(r[0] == doctest::Approx(1.0 * 1 - 2.0 * 1 + 0.5 * 2));
  CHECK(r[1] == doctest::Approx(1.0 * -2 + 0.5 * 4));
}

TEST_CASE("same seed gives identical parameters") {
  const auto a = model::ModelState::init(small_config(), 42, true);
  const auto b = model::ModelState::init(small_config(), 42, true);
  const auto c = model::ModelState::init(small_config(), 43, true);
  CHECK(model::parameters_equal(a, b));
  CHECK_FALSE(model::parameters_equal(a, c));
}

TEST_CASE("clone is independent and copies share storage") {
  auto a = model::ModelState::init(small_config(), 1);
  auto alias = a;
  auto fork = a.clone();
  CHECK(model::parameters_equal(a, fork));
  a.rank_weight().mutable_data()[0] += 1.0;
  CHECK(model::parameters_equal(a, alias));
  CHECK_FALSE(model::parameters_equal(a, fork));
}

TEST_CASE("training-mode extraction updates running statistics") {
  auto m = model::ModelState::init(small_config(), 4);
  const auto before = m.clone();
  Rng rng(4);
  std::vector<data::Image> imgs{random_image(32, rng), random_image(32, rng)};
  std::vector<const data::Image*> ptrs{&imgs[0], &imgs[1]};
  const auto x = data::to_tensor(ptrs);
  (void)m.extract(x);
  CHECK(model::parameters_equal(m, before));
  (void)m.extract(x, ad::NormMode::kTrain);
  CHECK_FALSE(model::parameters_equal(m, before));
}

TEST_CASE("freeze marks only backbone parameters") {
  auto m = model::ModelState::init(small_config(), 1, true);
  m.freeze_backbone();
  CHECK(m.backbone_frozen());
  for (const auto& p : m.backbone_parameters()) CHECK_FALSE(p.requires_grad());
  CHECK(m.rank_weight().requires_grad());
  CHECK(m.csr_head()->weight.requires_grad());
  m.unfreeze_backbone();
  for (const auto& p : m.backbone_parameters()) CHECK(p.requires_grad());
}

TEST_CASE("csr change is zero on identical images and antisymmetric") {
  auto m = model::ModelState::init(small_config(), 8, true);
  Rng rng(8);
  randomize(m, rng);
  const auto i = data::to_tensor(random_image(32, rng));
  const auto j = data::to_tensor(random_image(32, rng));
  CHECK(model::csr_change(m, i, i) == 0.0);
  CHECK(std::abs(model::csr_change(m, i, j) + model::csr_change(m, j, i)) < 1e-12);
  CHECK(model::csr_change(m, i, j) == doctest::Approx(model::csr_predict(m, i) - model::csr_predict(m, j)));

  const auto no_head = model::ModelState::init(small_config(), 8);
  CHECK_THROWS(model::csr_predict(no_head, i));
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto m = model::ModelState::init(small_config(), 21, true);
  Rng rng(21);
  randomize(m, rng);
  m.target_scale = 3.25;
  const auto path = temp_path("roundtrip.ckpt");
  model::save_checkpoint(m, path, {{"split_seed", 5}});
  const auto loaded = model::load_checkpoint(path);
  CHECK(model::parameters_equal(m, loaded.model));
  CHECK(loaded.model.config() == m.config());
  CHECK(loaded.model.target_scale == 3.25);
  CHECK(loaded.metadata.at("split_seed") == 5);

  const auto i = data::to_tensor(random_image(32, rng));
  const auto j = data::to_tensor(random_image(32, rng));
  CHECK(model::rank_score(m, i, j) == model::rank_score(loaded.model, i, j));
  CHECK(model::csr_predict(m, i) == model::csr_predict(loaded.model, i));

  std::ifstream in(path);
  std::string magic;
  std::getline(in, magic);
  CHECK(magic == model::kCheckpointMagic);
}

TEST_CASE("checkpoint loader rejects bad files") {
  const auto bad = temp_path("bad.ckpt");
  {
    std::ofstream out(bad);
    out << "NOT-A-CHECKPOINT\n{}\n";
  }
  CHECK_THROWS_AS(model::load_checkpoint(bad), model::CheckpointError);
  CHECK_THROWS_AS(model::load_checkpoint(temp_path("missing.ckpt")), model::CheckpointError);

  // Truncated payload.
  const auto m = model::ModelState::init(small_config(), 1);
  const auto path = temp_path("trunc.ckpt");
  model::save_checkpoint(m, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(model::load_checkpoint(path), model::CheckpointError);
}
