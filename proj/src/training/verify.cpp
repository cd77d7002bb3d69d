#include "pairrank/training/verify.hpp"

#include <cmath>

#include "pairrank/autodiff/ops.hpp"
#include "pairrank/data/image.hpp"
#include "pairrank/model/model.hpp"
#include "pairrank/training/trainer.hpp"
#include "pairrank/util/rng.hpp"

namespace pairrank::training {

namespace {

using ad::Tensor;

Tensor random_input(ad::Shape shape, Rng& rng, double away_from_zero = 0.0) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) {
    x = rng.normal();
    if (std::abs(x) < away_from_zero) x += x < 0 ? -away_from_zero : away_from_zero;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

/// Random linear functional of y so every output coordinate contributes.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed, 77);
  std::vector<double> w(y.numel());
  for (auto& v : w) v = rng.normal();
  return ad::linear(y.reshape({1, y.numel()}), Tensor::from({1, y.numel()}, std::move(w)));
}

}  // namespace

std::vector<OpCheck> run_gradcheck_suite(double tol, double eps, std::uint64_t seed) {
  Rng rng(seed, 1);
  ad::GradCheckOptions options;
  options.tol = tol;
  options.eps = eps;
  options.seed = seed;
  std::vector<OpCheck> checks;
  auto check = [&](std::string name, const ad::ScalarFunction& fn, std::vector<Tensor> inputs,
                   ad::GradCheckOptions opts) {
    checks.push_back({std::move(name), ad::finite_difference_check(fn, std::move(inputs), opts)});
  };

  for (const auto& [stride, padding, k] : {std::tuple{1, 1, 3}, std::tuple{2, 1, 3}, std::tuple{2, 0, 1}}) {
    check("conv2d k" + std::to_string(k) + " s" + std::to_string(stride) + " p" + std::to_string(padding),
          [s = stride, p = padding](std::span<const Tensor> in) { return project(ad::conv2d(in[0], in[1], s, p), 1); },
          {random_input({2, 3, 6, 6}, rng), random_input({4, 3, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng)},
          options);
  }
  check("relu", [](std::span<const Tensor> in) { return project(ad::relu(in[0]), 2); },
        {random_input({2, 3, 4, 4}, rng, 0.05)}, options);
  check("channel_norm train",
        [](std::span<const Tensor> in) {
          return project(ad::channel_norm(in[0], in[1], in[2], ad::NormMode::kTrain, nullptr), 3);
        },
        {random_input({3, 4, 3, 3}, rng), random_input({4}, rng), random_input({4}, rng)}, options);
  auto stats = std::make_shared<ad::RunningStats>(ad::RunningStats{{0.2, -0.1, 0.4, 0.0}, {0.7, 1.3, 2.1, 0.9}});
  check("channel_norm infer",
        [stats](std::span<const Tensor> in) {
          return project(ad::channel_norm(in[0], in[1], in[2], ad::NormMode::kInfer, stats.get()), 4);
        },
        {random_input({3, 4, 3, 3}, rng), random_input({4}, rng), random_input({4}, rng)}, options);
  check("global_avg_pool", [](std::span<const Tensor> in) { return project(ad::global_avg_pool(in[0]), 5); },
        {random_input({2, 3, 4, 5}, rng)}, options);
  check("linear", [](std::span<const Tensor> in) { return project(ad::linear(in[0], in[1], in[2]), 6); },
        {random_input({3, 5}, rng), random_input({4, 5}, rng), random_input({4}, rng)}, options);
  const std::vector<std::size_t> rows_a{0, 2, 3, 1}, rows_b{1, 1, 0, 3};
  check("add/sub/scale/gather_rows",
        [&](std::span<const Tensor> in) {
          const auto d = ad::sub(ad::gather_rows(in[0], rows_a), ad::gather_rows(in[0], rows_b));
          return project(ad::add(ad::scale(d, -1.7), ad::gather_rows(in[1], rows_b)), 7);
        },
        {random_input({4, 3}, rng), random_input({4, 3}, rng)}, options);
  check("sigmoid", [](std::span<const Tensor> in) { return project(ad::sigmoid(in[0]), 8); },
        {random_input({6}, rng)}, options);
  check("sum", [](std::span<const Tensor> in) { return ad::sum(ad::scale(in[0], 2.5)); },
        {random_input({3, 2}, rng)}, options);
  check("mse_loss", [](std::span<const Tensor> in) { return ad::mse_loss(in[0], in[1]); },
        {random_input({5, 1}, rng), random_input({5, 1}, rng)}, options);
  const auto labels = Tensor::from({6, 1}, {1, 0, 0, 1, 1, 0});
  check("bce_with_logits_loss", [labels](std::span<const Tensor> in) { return ad::bce_with_logits_loss(in[0], labels); },
        {random_input({6, 1}, rng)}, options);

  // Full objectives on a 4-pair batch: one subject, four visits, lite layout at 32x32.
  auto config = model::BackboneConfig::lite();
  config.input_size = 32;
  std::vector<data::Image> images;
  for (int t = 0; t < 4; ++t) {
    auto img = data::Image::zeros(32, 32);
    for (auto& p : img.pixels) p = rng.uniform();
    images.push_back(std::move(img));
  }
  Batch pairs;
  for (const auto* p : {&images[0], &images[1], &images[2], &images[3]}) pairs.images.push_back(p);
  pairs.first = {0, 1, 3, 2};
  pairs.second = {1, 3, 0, 0};
  Batch samples;
  samples.images = pairs.images;
  samples.first = {0, 1, 2, 3};
  samples.targets = {0.5, 1.7, 2.2, 3.9};

  ad::GradCheckOptions model_options = options;
  model_options.max_coords_per_input = 4;
  for (const Task task : {Task::kSelfSupervised, Task::kSupervised, Task::kCsr}) {
    auto model = std::make_shared<model::ModelState>(model::ModelState::init(config, seed + 11, task == Task::kCsr));
    auto batch = std::make_shared<Batch>(task == Task::kCsr ? samples : pairs);
    if (task == Task::kSelfSupervised) batch->targets = {1, 1, 0, 0};
    if (task == Task::kSupervised) batch->targets = {0.8, 1.1, -2.4, -1.3};
    std::vector<Tensor> params;
    std::vector<std::string> names;
    for (const auto& np : model->named_parameters()) {
      params.push_back(np.tensor);
      names.push_back(np.name);
    }
    const auto report = ad::finite_difference_check(
        [model, batch, task](std::span<const Tensor>) {
          return batch_loss(*model, *batch, task, ad::NormMode::kTrain);
        },
        params, model_options, names);
    checks.push_back({"objective " + std::string(task_name(task)) + " (4-pair batch)", report});
  }
  return checks;
}

}  // namespace pairrank::training
