#pragma once

#include <span>
#include <stdexcept>

#include "pairrank/data/image.hpp"

namespace pairrank::eval {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sample Pearson correlation. Throws MetricError for fewer than two values,
/// mismatched lengths or a constant input (correlation undefined).
double pearson_r(std::span<const double> x, std::span<const double> y);

/// Probability that a positive outranks a negative, ties counted one half,
/// via the midrank (Mann-Whitney) formula. Labels are 0/1. Throws
/// MetricError when only one class is present.
double auc(std::span<const double> scores, std::span<const int> labels);

/// 2|A n B| / (|A| + |B|), two empty masks give 1. Throws MetricError on a
/// shape mismatch.
double dice(const data::Mask& a, const data::Mask& b);

/// Pixels with value >= threshold.
data::Mask binarize(std::span<const double> map, int width, int height, double threshold);

}  // namespace pairrank::eval
