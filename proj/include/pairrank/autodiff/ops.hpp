#pragma once

#include <cstdint>

#include <optional>
#include <span>
#include <vector>

#include "pairrank/autodiff/tensor.hpp"

namespace pairrank::ad {

/// 2-D cross-correlation of an NCHW input with an OIKhKw kernel (no bias).
/// Output spatial size is floor((H + 2*padding - Kh) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

/// Elementwise max(0, x). The subgradient at 0 is 0.
Tensor relu(const Tensor& x);

/// While alive, folds the on/off pattern of every relu evaluated on this
/// thread into a fingerprint, so finite differences can detect kink crossings.
class ReluPatternProbe {
 public:
  ReluPatternProbe();
  ~ReluPatternProbe();
  ReluPatternProbe(const ReluPatternProbe&) = delete;
  ReluPatternProbe& operator=(const ReluPatternProbe&) = delete;

  std::uint64_t fingerprint() const { return hash_; }
  void record(std::span<const double> x);

 private:
  ReluPatternProbe* previous_;
  std::uint64_t hash_ = 1469598103934665603ull;
};

enum class NormMode { kTrain, kInfer };

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;

  static RunningStats identity(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
};

struct NormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization over all non-channel axes (axis 1 is channels).
///
/// kTrain normalizes with batch statistics and, when `stats` is non-null,
/// folds them into the running averages (the variance with Bessel's
/// correction). kInfer normalizes with `stats`, which is then required.
Tensor channel_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, NormMode mode,
                    RunningStats* stats, NormOptions options = {});

/// NCHW -> NC spatial mean.
Tensor global_avg_pool(const Tensor& x);

/// y = x W^T (+ b) for x [N, in], W [out, in], b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// Sum of all elements, shape [1].
Tensor sum(const Tensor& x);
/// Rows of a rank-2 tensor selected (with repetition) by `rows`.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

Tensor sigmoid(const Tensor& x);
double sigmoid(double x);

/// Mean of squared differences over all elements, shape [1].
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

/// Mean binary cross-entropy of sigmoid(logit) against labels in {0, 1},
/// evaluated as max(z, 0) - z*y + log(1 + exp(-|z|)).
Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& labels);

}  // namespace pairrank::ad
