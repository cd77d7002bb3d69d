#include "pairrank/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace pairrank::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t out_h, out_w;
  int stride, padding;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

/// Output columns [lo, hi) whose input column ow * stride - padding + kw lies inside [0, w).
void valid_range(std::ptrdiff_t w, std::size_t out_w, int stride, std::ptrdiff_t offset, std::size_t& lo,
                 std::size_t& hi) {
  // iw = ow * stride + offset; need 0 <= iw < w.
  std::ptrdiff_t first = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::ptrdiff_t last = w - 1 - offset < 0 ? -1 : (w - 1 - offset) / stride;
  first = std::max<std::ptrdiff_t>(first, 0);
  last = std::min<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(out_w) - 1);
  lo = static_cast<std::size_t>(first);
  hi = last < first ? lo : static_cast<std::size_t>(last + 1);
}

/// True when a stride-1 kernel row maps onto a shifted copy of the input plane.
bool shifted_plane(const ConvGeometry& g) { return g.stride == 1 && g.out_w == g.width && g.out_h == g.height; }

/// Writes the patch matrix of one image into `cols` (row stride `ld`).
void im2col(const ConvGeometry& g, const double* image, double* cols, std::size_t ld) {
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  const bool bulk = shifted_plane(g);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel_w; ++kw, ++row) {
        const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(kw) - g.padding;
        std::size_t lo = 0, hi = 0;
        valid_range(w, g.out_w, g.stride, offset, lo, hi);
        double* out = cols + row * ld;
        if (bulk) {
          // out[j] = plane[j + shift] inside the plane, then clear wrapped-around columns.
          const std::ptrdiff_t total = h * w;
          const std::ptrdiff_t shift = (static_cast<std::ptrdiff_t>(kh) - g.padding) * w + offset;
          const std::ptrdiff_t first = std::clamp<std::ptrdiff_t>(-shift, 0, total);
          const std::ptrdiff_t last = std::clamp<std::ptrdiff_t>(total - shift, first, total);
          std::fill(out, out + first, 0.0);
          std::copy(plane + first + shift, plane + last + shift, out + first);
          std::fill(out + last, out + total, 0.0);
          if (lo > 0 || hi < g.out_w) {
            for (std::size_t oh = 0; oh < g.out_h; ++oh) {
              double* out_row = out + oh * g.out_w;
              std::fill(out_row, out_row + lo, 0.0);
              std::fill(out_row + hi, out_row + g.out_w, 0.0);
            }
          }
          continue;
        }
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * g.stride - g.padding +
                                    static_cast<std::ptrdiff_t>(kh);
          double* out_row = out + oh * g.out_w;
          if (ih < 0 || ih >= h) {
            std::fill(out_row, out_row + g.out_w, 0.0);
            continue;
          }
          const double* in_row = plane + ih * w + offset;
          std::fill(out_row, out_row + lo, 0.0);
          if (g.stride == 1) {
            std::copy(in_row + lo, in_row + hi, out_row + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) out_row[ow] = in_row[static_cast<std::ptrdiff_t>(ow) * g.stride];
          }
          std::fill(out_row + hi, out_row + g.out_w, 0.0);
        }
      }
    }
  }
}

/// Scatter-adds a patch matrix (row stride `ld`) back onto one image gradient.
/// Columns that fall outside the image are overwritten with zeros.
void col2im_add(const ConvGeometry& g, double* cols, std::size_t ld, double* image) {
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  const bool bulk = shifted_plane(g);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel_w; ++kw, ++row) {
        const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(kw) - g.padding;
        std::size_t lo = 0, hi = 0;
        valid_range(w, g.out_w, g.stride, offset, lo, hi);
        double* in = cols + row * ld;
        if (bulk) {
          if (lo > 0 || hi < g.out_w) {
            for (std::size_t oh = 0; oh < g.out_h; ++oh) {
              double* in_row = in + oh * g.out_w;
              std::fill(in_row, in_row + lo, 0.0);
              std::fill(in_row + hi, in_row + g.out_w, 0.0);
            }
          }
          const std::ptrdiff_t total = h * w;
          const std::ptrdiff_t shift = (static_cast<std::ptrdiff_t>(kh) - g.padding) * w + offset;
          const std::ptrdiff_t first = std::clamp<std::ptrdiff_t>(-shift, 0, total);
          const std::ptrdiff_t last = std::clamp<std::ptrdiff_t>(total - shift, first, total);
          double* dst = plane + shift;
          for (std::ptrdiff_t j = first; j < last; ++j) dst[j] += in[j];
          continue;
        }
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * g.stride - g.padding +
                                    static_cast<std::ptrdiff_t>(kh);
          if (ih < 0 || ih >= h) continue;
          const double* in_row = in + oh * g.out_w;
          double* out_row = plane + ih * w + offset;
          for (std::size_t ow = lo; ow < hi; ++ow) out_row[static_cast<std::ptrdiff_t>(ow) * g.stride] += in_row[ow];
        }
      }
    }
  }
}

/// Images per GEMM so that the patch matrix stays within a fixed memory budget.
std::size_t images_per_group(const ConvGeometry& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 17;  // doubles (1 MiB), cache-sized
  const std::size_t per_image = std::max<std::size_t>(1, g.patch() * g.out_pixels());
  return std::clamp<std::size_t>(kBudget / per_image, 1, std::max<std::size_t>(1, g.batch));
}

void require_same_numel(const Tensor& a, const Tensor& b, const char* op) {
  if (a.numel() != b.numel()) {
    throw ShapeError(std::string(op) + ": element count mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

std::size_t spatial_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) n *= shape[i];
  return n;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_string(input.shape()));
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be OIKhKw, got " + shape_string(kernel.shape()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) + " channels but kernel expects " +
                     std::to_string(kernel.dim(1)) + " (input " + shape_string(input.shape()) + ", kernel " +
                     shape_string(kernel.shape()) + ")");
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_channels = kernel.dim(0);
  g.kernel_h = kernel.dim(2);
  g.kernel_w = kernel.dim(3);
  g.stride = stride;
  g.padding = padding;
  const auto padded_h = static_cast<std::ptrdiff_t>(g.height) + 2 * padding;
  const auto padded_w = static_cast<std::ptrdiff_t>(g.width) + 2 * padding;
  if (padded_h < static_cast<std::ptrdiff_t>(g.kernel_h) || padded_w < static_cast<std::ptrdiff_t>(g.kernel_w)) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                     shape_string(input.shape()));
  }
  g.out_h = static_cast<std::size_t>((padded_h - static_cast<std::ptrdiff_t>(g.kernel_h)) / stride + 1);
  g.out_w = static_cast<std::size_t>((padded_w - static_cast<std::ptrdiff_t>(g.kernel_w)) / stride + 1);

  const std::size_t in_plane = g.in_channels * g.height * g.width;
  const std::size_t pix = g.out_pixels();
  const std::size_t out_plane = g.out_channels * pix;
  const std::size_t group = images_per_group(g);
  std::vector<double> out(g.batch * out_plane);
  std::vector<double> cols(g.patch() * pix * group);
  RowMatrix product;
  const ConstMatrixMap k(kernel.data().data(), static_cast<Eigen::Index>(g.out_channels),
                         static_cast<Eigen::Index>(g.patch()));
  for (std::size_t n0 = 0; n0 < g.batch; n0 += group) {
    const std::size_t count = std::min(group, g.batch - n0);
    const std::size_t ld = count * pix;
    for (std::size_t i = 0; i < count; ++i) im2col(g, input.data().data() + (n0 + i) * in_plane, cols.data() + i * pix, ld);
    const ConstMatrixMap c(cols.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(ld));
    product.noalias() = k * c;
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        const double* src = product.data() + o * ld + i * pix;
        std::copy(src, src + pix, out.data() + (n0 + i) * out_plane + o * pix);
      }
    }
  }

  return make_result("conv2d", {g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), {input, kernel},
                     [g, in_plane, pix, out_plane, group](detail::Node& self) {
                       detail::Node& x = *self.inputs[0];
                       detail::Node& kn = *self.inputs[1];
                       const auto rows = static_cast<Eigen::Index>(g.patch());
                       const auto oc = static_cast<Eigen::Index>(g.out_channels);
                       const ConstMatrixMap k(kn.data.data(), oc, rows);
                       std::vector<double> cols(g.patch() * pix * group);
                       RowMatrix dout;
                       for (std::size_t n0 = 0; n0 < g.batch; n0 += group) {
                         const std::size_t count = std::min(group, g.batch - n0);
                         const std::size_t ld = count * pix;
                         dout.resize(oc, static_cast<Eigen::Index>(ld));
                         for (std::size_t i = 0; i < count; ++i) {
                           for (std::size_t o = 0; o < g.out_channels; ++o) {
                             const double* src = self.grad.data() + (n0 + i) * out_plane + o * pix;
                             std::copy(src, src + pix, dout.data() + o * ld + i * pix);
                           }
                         }
                         if (kn.requires_grad) {
                           for (std::size_t i = 0; i < count; ++i) {
                             im2col(g, x.data.data() + (n0 + i) * in_plane, cols.data() + i * pix, ld);
                           }
                           const ConstMatrixMap c(cols.data(), rows, static_cast<Eigen::Index>(ld));
                           MatrixMap dk(kn.ensure_grad().data(), oc, rows);
                           dk.noalias() += dout * c.transpose();
                         }
                         if (x.requires_grad) {
                           MatrixMap dc(cols.data(), rows, static_cast<Eigen::Index>(ld));
                           dc.noalias() = k.transpose() * dout;
                           auto& dx = x.ensure_grad();
                           for (std::size_t i = 0; i < count; ++i) {
                             col2im_add(g, cols.data() + i * pix, ld, dx.data() + (n0 + i) * in_plane);
                           }
                         }
                       }
                     });
}

namespace {
thread_local ReluPatternProbe* g_relu_probe = nullptr;
}  // namespace

ReluPatternProbe::ReluPatternProbe() : previous_(g_relu_probe) { g_relu_probe = this; }
ReluPatternProbe::~ReluPatternProbe() { g_relu_probe = previous_; }

void ReluPatternProbe::record(std::span<const double> x) {
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    word = (word << 1) | static_cast<std::uint64_t>(x[i] > 0.0);
    if ((i & 63) == 63 || i + 1 == x.size()) {
      hash_ = (hash_ ^ word) * 1099511628211ull;
      word = 0;
    }
  }
  if (previous_ != nullptr) previous_->record(x);
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  if (g_relu_probe != nullptr) g_relu_probe->record(in);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return make_result("relu", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& in = *self.inputs[0];
    auto& dx = in.ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.data[i] > 0.0 ? self.grad[i] : 0.0;
  });
}

Tensor channel_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, NormMode mode, RunningStats* stats,
                    NormOptions options) {
  if (x.rank() < 2) throw ShapeError("channel_norm: input needs a channel axis, got " + shape_string(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t spatial = spatial_size(x.shape());
  if (scale.numel() != channels || shift.numel() != channels) {
    throw ShapeError("channel_norm: scale/shift need " + std::to_string(channels) + " values, got " +
                     std::to_string(scale.numel()) + "/" + std::to_string(shift.numel()));
  }
  if (mode == NormMode::kInfer && stats == nullptr) {
    throw std::invalid_argument("channel_norm: infer mode requires running statistics");
  }
  if (stats != nullptr && (stats->mean.size() != channels || stats->var.size() != channels)) {
    throw ShapeError("channel_norm: running statistics have wrong channel count");
  }

  const auto in = x.data();
  const auto gamma = scale.data();
  const auto beta = shift.data();
  const double count = static_cast<double>(batch * spatial);
  std::vector<double> mean(channels), inv_std(channels);
  if (mode == NormMode::kTrain) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* p = in.data() + (n * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      }
      const double mu = s / count;
      double ss = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* p = in.data() + (n * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / count;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + options.eps);
      if (stats != nullptr) {
        const double unbiased = count > 1.0 ? ss / (count - 1.0) : var;
        stats->mean[c] = (1.0 - options.momentum) * stats->mean[c] + options.momentum * mu;
        stats->var[c] = (1.0 - options.momentum) * stats->var[c] + options.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = stats->mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats->var[c] + options.eps);
    }
  }

  std::vector<double> normalized(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double xhat = (in[base + i] - mean[c]) * inv_std[c];
        normalized[base + i] = xhat;
        out[base + i] = gamma[c] * xhat + beta[c];
      }
    }
  }

  const bool batch_stats = mode == NormMode::kTrain;
  return make_result(
      "channel_norm", x.shape(), std::move(out), {x, scale, shift},
      [batch, channels, spatial, count, batch_stats, inv_std = std::move(inv_std),
       normalized = std::move(normalized)](detail::Node& self) {
        detail::Node& xin = *self.inputs[0];
        detail::Node& g = *self.inputs[1];
        detail::Node& b = *self.inputs[2];
        const auto& dy = self.grad;
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              sum_dy += dy[base + i];
              sum_dy_xhat += dy[base + i] * normalized[base + i];
            }
          }
          if (g.requires_grad) g.ensure_grad()[c] += sum_dy_xhat;
          if (b.requires_grad) b.ensure_grad()[c] += sum_dy;
          if (!xin.requires_grad) continue;
          auto& dx = xin.ensure_grad();
          const double k = g.data[c] * inv_std[c];
          if (batch_stats) {
            const double mean_dy = sum_dy / count;
            const double mean_dy_xhat = sum_dy_xhat / count;
            for (std::size_t n = 0; n < batch; ++n) {
              const std::size_t base = (n * channels + c) * spatial;
              for (std::size_t i = 0; i < spatial; ++i) {
                dx[base + i] += k * (dy[base + i] - mean_dy - normalized[base + i] * mean_dy_xhat);
              }
            }
          } else {
            for (std::size_t n = 0; n < batch; ++n) {
              const std::size_t base = (n * channels + c) * spatial;
              for (std::size_t i = 0; i < spatial; ++i) dx[base + i] += k * dy[base + i];
            }
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be NCHW, got " + shape_string(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t spatial = x.dim(2) * x.dim(3);
  std::vector<double> out(batch * channels);
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < spatial; ++j) s += in[i * spatial + j];
    out[i] = s / static_cast<double>(spatial);
  }
  return make_result("global_avg_pool", {batch, channels}, std::move(out), {x}, [spatial](detail::Node& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(spatial);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i] * inv;
      for (std::size_t j = 0; j < spatial; ++j) dx[i * spatial + j] += g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  if (x.rank() != 2 || weight.rank() != 2) {
    throw ShapeError("linear: expected x [N,in] and W [out,in], got " + shape_string(x.shape()) + " and " +
                     shape_string(weight.shape()));
  }
  const std::size_t batch = x.dim(0), in_features = x.dim(1), out_features = weight.dim(0);
  if (weight.dim(1) != in_features) {
    throw ShapeError("linear: inner dimensions disagree, x " + shape_string(x.shape()) + " vs W " +
                     shape_string(weight.shape()));
  }
  if (bias && bias->numel() != out_features) {
    throw ShapeError("linear: bias needs " + std::to_string(out_features) + " values");
  }
  std::vector<double> out(batch * out_features);
  const auto n = static_cast<Eigen::Index>(batch);
  const auto fin = static_cast<Eigen::Index>(in_features);
  const auto fout = static_cast<Eigen::Index>(out_features);
  MatrixMap y(out.data(), n, fout);
  y.noalias() = ConstMatrixMap(x.data().data(), n, fin) * ConstMatrixMap(weight.data().data(), fout, fin).transpose();
  if (bias) {
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t c = 0; c < out_features; ++c) out[r * out_features + c] += (*bias)[c];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return make_result("linear", {batch, out_features}, std::move(out), std::move(inputs),
                     [n, fin, fout](detail::Node& self) {
                       detail::Node& xin = *self.inputs[0];
                       detail::Node& w = *self.inputs[1];
                       const ConstMatrixMap dy(self.grad.data(), n, fout);
                       if (xin.requires_grad) {
                         MatrixMap(xin.ensure_grad().data(), n, fin).noalias() +=
                             dy * ConstMatrixMap(w.data.data(), fout, fin);
                       }
                       if (w.requires_grad) {
                         MatrixMap(w.ensure_grad().data(), fout, fin).noalias() +=
                             dy.transpose() * ConstMatrixMap(xin.data.data(), n, fin);
                       }
                       if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                         auto& db = self.inputs[2]->ensure_grad();
                         for (Eigen::Index r = 0; r < n; ++r) {
                           for (Eigen::Index c = 0; c < fout; ++c) db[static_cast<std::size_t>(c)] += dy(r, c);
                         }
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      detail::Node& in = *self.inputs[static_cast<std::size_t>(k)];
      if (!in.requires_grad) continue;
      auto& d = in.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("sub: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto& d = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& d = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
  return make_result("scale", x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (const double v : x.data()) s += v;
  return make_result("sum", {1}, {s}, {x}, [](detail::Node& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (auto& v : d) v += self.grad[0];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expected rank-2 input, got " + shape_string(x.shape()));
  if (rows.empty()) throw ShapeError("gather_rows: no rows requested");
  const std::size_t width = x.dim(1);
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.dim(0)) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " + shape_string(x.shape()));
    }
    std::copy_n(x.data().data() + rows[r] * width, width, out.data() + r * width);
  }
  return make_result("gather_rows", {rows.size(), width}, std::move(out), {x},
                     [width, index = std::vector<std::size_t>(rows.begin(), rows.end())](detail::Node& self) {
                       auto& d = self.inputs[0]->ensure_grad();
                       for (std::size_t r = 0; r < index.size(); ++r) {
                         for (std::size_t j = 0; j < width; ++j) d[index[r] * width + j] += self.grad[r * width + j];
                       }
                     });
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(x[i]);
  return make_result("sigmoid", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * self.data[i] * (1.0 - self.data[i]);
  });
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_same_numel(prediction, target, "mse_loss");
  const double n = static_cast<double>(prediction.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.numel(); ++i) {
    const double diff = prediction[i] - target[i];
    s += diff * diff;
  }
  return make_result("mse_loss", {1}, {s / n}, {prediction, target}, [n](detail::Node& self) {
    detail::Node& p = *self.inputs[0];
    detail::Node& t = *self.inputs[1];
    const double g = 2.0 * self.grad[0] / n;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double diff = p.data[i] - t.data[i];
      if (p.requires_grad) p.ensure_grad()[i] += g * diff;
      if (t.requires_grad) t.ensure_grad()[i] -= g * diff;
    }
  });
}

Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& labels) {
  require_same_numel(logits, labels, "bce_with_logits_loss");
  const double n = static_cast<double>(logits.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double z = logits[i];
    const double y = labels[i];
    if (y < 0.0 || y > 1.0) throw std::invalid_argument("bce_with_logits_loss: labels must lie in [0, 1]");
    s += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return make_result("bce_with_logits_loss", {1}, {s / n}, {logits}, [n, labels](detail::Node& self) {
    detail::Node& z = *self.inputs[0];
    auto& d = z.ensure_grad();
    const double g = self.grad[0] / n;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * (sigmoid(z.data[i]) - labels[i]);
  });
}

}  // namespace pairrank::ad
