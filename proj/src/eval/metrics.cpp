#include "pairrank/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace pairrank::eval {

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw MetricError("pearson_r: length mismatch " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  if (x.size() < 2) throw MetricError("pearson_r: need at least two values");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("pearson_r: correlation undefined for a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("auc: scores and labels differ in length");
  std::size_t positives = 0;
  for (const int l : labels) {
    if (l != 0 && l != 1) throw MetricError("auc: labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw MetricError("auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based, tie-averaged) ranks of the positives; doubled to stay integral.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_mid = static_cast<std::uint64_t>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) twice_rank_sum += twice_mid;
    }
    i = j;
  }
  const auto p = static_cast<std::uint64_t>(positives);
  const std::uint64_t twice_u = twice_rank_sum - p * (p + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

double dice(const data::Mask& a, const data::Mask& b) {
  if (a.width != b.width || a.height != b.height) {
    throw MetricError("dice: mask shapes differ (" + std::to_string(a.width) + "x" + std::to_string(a.height) +
                      " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  }
  std::size_t both = 0, total = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    both += static_cast<std::size_t>(a.bits[i] && b.bits[i]);
    total += static_cast<std::size_t>(a.bits[i] != 0) + static_cast<std::size_t>(b.bits[i] != 0);
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(total);
}

data::Mask binarize(std::span<const double> map, int width, int height, double threshold) {
  if (map.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw MetricError("binarize: map size does not match " + std::to_string(width) + "x" + std::to_string(height));
  }
  auto mask = data::Mask::zeros(width, height);
  for (std::size_t i = 0; i < map.size(); ++i) mask.bits[i] = map[i] >= threshold ? 1 : 0;
  return mask;
}

}  // namespace pairrank::eval
