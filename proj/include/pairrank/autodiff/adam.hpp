#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pairrank/autodiff/tensor.hpp"

namespace pairrank::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers for a fixed list of parameters.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;

  /// Zeroed buffers shaped like `params`.
  static AdamState for_params(std::span<const Tensor> params, AdamConfig config = {});
};

/// One bias-corrected Adam update of `params` from their grad buffers.
/// A parameter without a grad buffer is treated as having zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, double lr);

}  // namespace pairrank::ad
