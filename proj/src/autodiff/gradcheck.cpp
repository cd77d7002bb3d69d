#include "pairrank/autodiff/gradcheck.hpp"

#include "pairrank/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "pairrank/util/rng.hpp"

namespace pairrank::ad {

GradCheckReport finite_difference_check(const ScalarFunction& fn, std::vector<Tensor> inputs,
                                        const GradCheckOptions& options, std::vector<std::string> input_names) {
  if (options.eps <= 0.0) throw std::invalid_argument("finite_difference_check: eps must be positive");
  for (auto& t : inputs) {
    if (t.requires_grad()) {
      t.mutable_grad();
      t.zero_grad();
    }
  }
  const Tensor loss = fn(inputs);
  backward(loss);

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& input = inputs[k];
    if (!input.requires_grad()) continue;
    std::vector<double> analytic(input.grad().begin(), input.grad().end());
    if (analytic.empty()) analytic.assign(input.numel(), 0.0);

    std::vector<std::size_t> coords(input.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }

    double max_diff = 0.0, scale = 0.0;
    std::size_t checked = 0;
    auto values = input.mutable_data();
    for (const auto i : coords) {
      const double original = values[i];
      double plus = 0.0, minus = 0.0;
      bool crossed = false;
      {
        NoGradGuard guard;
        std::optional<ReluPatternProbe> probe_plus, probe_minus;
        values[i] = original + options.eps;
        probe_plus.emplace();
        plus = fn(inputs).item();
        const auto pattern_plus = probe_plus->fingerprint();
        probe_plus.reset();
        values[i] = original - options.eps;
        probe_minus.emplace();
        minus = fn(inputs).item();
        crossed = probe_minus->fingerprint() != pattern_plus;
      }
      values[i] = original;
      if (options.skip_relu_kinks && crossed) {
        ++report.coords_skipped;
        continue;
      }
      ++checked;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
    }
    report.coords_checked += checked;
    const double rel = scale > 0.0 ? max_diff / scale : max_diff;
    report.max_abs_error = std::max(report.max_abs_error, max_diff);
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_input = k < input_names.size() ? input_names[k] : "input" + std::to_string(k);
    }
  }
  report.passed = report.coords_checked > 0 && std::isfinite(report.max_rel_error) &&
                  report.max_rel_error < options.tol;
  return report;
}

}  // namespace pairrank::ad
