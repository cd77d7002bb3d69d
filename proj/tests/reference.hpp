#pragma once

// Test-only oracles, independent of the library's compute paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace pairrank::testing {

/// Direct nested-loop NCHW x OIKhKw cross-correlation.
inline std::vector<double> conv2d_reference(const std::vector<double>& x, std::size_t n, std::size_t c,
                                            std::size_t h, std::size_t w, const std::vector<double>& k,
                                            std::size_t o, std::size_t kh, std::size_t kw, int stride, int pad,
                                            std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y) * stride - pad + static_cast<long>(i);
                const long ix = static_cast<long>(xx) * stride - pad + static_cast<long>(j);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                s += x[((b * c + ic) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] *
                     k[((oc * c + ic) * kh + i) * kw + j];
              }
          out[((b * o + oc) * oh + y) * ow + xx] = s;
        }
  return out;
}

/// AUC by enumerating every (positive, negative) pair, ties worth 1/2.
inline double auc_brute_force(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      count += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / count;
}

/// Two-pass Pearson coefficient.
inline double pearson_reference(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
  mx /= n; my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace pairrank::testing
