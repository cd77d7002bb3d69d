#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pairrank/autodiff/tensor.hpp"

namespace pairrank::ad {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Coordinates probed per input; 0 probes every coordinate, otherwise a
  /// seeded random subset of this size.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  /// Skip coordinates whose +-eps evaluations switch any relu on or off.
  bool skip_relu_kinks = true;
};

struct GradCheckReport {
  /// Max over inputs of max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf)
  /// taken over the probed coordinates of that input.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;  // kink crossings
  std::string worst_input;
  bool passed = false;
};

using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

/// Compares backward() gradients of a scalar-valued `fn` against central
/// differences (f(x+eps) - f(x-eps)) / 2eps on every requires-grad input.
/// Existing grad buffers of the inputs are reset.
GradCheckReport finite_difference_check(const ScalarFunction& fn, std::vector<Tensor> inputs,
                                        const GradCheckOptions& options = {},
                                        std::vector<std::string> input_names = {});

}  // namespace pairrank::ad
