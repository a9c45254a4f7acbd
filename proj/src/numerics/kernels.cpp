#include "ectnet/numerics/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ectnet::kernels {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixView = Eigen::Map<RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstMatrixView = Eigen::Map<const RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  require(s.size() == rank, std::string(what) + ": expected rank " + std::to_string(rank) +
                                " tensor, got " + shape_string(s));
}

// Gathers the receptive fields of one channel group: row r = (n, t), column k*cg + j.
template <typename T>
void im2col_group(const Tensor<T>& x, const ConvGeometry& g, std::size_t group,
                  std::size_t out_len, std::vector<T>& cols) {
  const std::size_t n_batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
  const std::size_t cg = g.in_per_group(), k = g.kernel_size;
  const std::size_t width = k * cg;
  cols.assign(n_batch * out_len * width, T{0});
  const T* src = x.raw();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t t = 0; t < out_len; ++t) {
      T* row = cols.data() + (n * out_len + t) * width;
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * g.stride) -
                                   static_cast<std::ptrdiff_t>(g.padding);
      for (std::size_t tap = 0; tap < k; ++tap) {
        const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(tap);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
        const T* in = src + (n * len + static_cast<std::size_t>(pos)) * cin + group * cg;
        std::copy(in, in + cg, row + tap * cg);
      }
    }
  }
}

template <typename T>
void col2im_group(const std::vector<T>& dcols, const ConvGeometry& g, std::size_t group,
                  std::size_t out_len, Tensor<T>& dx) {
  const std::size_t n_batch = dx.dim(0), len = dx.dim(1), cin = dx.dim(2);
  const std::size_t cg = g.in_per_group(), k = g.kernel_size;
  const std::size_t width = k * cg;
  T* dst = dx.raw();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t t = 0; t < out_len; ++t) {
      const T* row = dcols.data() + (n * out_len + t) * width;
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * g.stride) -
                                   static_cast<std::ptrdiff_t>(g.padding);
      for (std::size_t tap = 0; tap < k; ++tap) {
        const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(tap);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
        T* out = dst + (n * len + static_cast<std::size_t>(pos)) * cin + group * cg;
        const T* in = row + tap * cg;
        for (std::size_t j = 0; j < cg; ++j) out[j] += in[j];
      }
    }
  }
}

// Weight slice of one group re-laid out as (out_per_group, k*cg) with column k*cg + j.
template <typename T>
RowMatrix<T> group_weight(const Tensor<T>& w, const ConvGeometry& g, std::size_t group) {
  const std::size_t og = g.out_per_group(), cg = g.in_per_group(), k = g.kernel_size;
  RowMatrix<T> m(og, k * cg);
  for (std::size_t o = 0; o < og; ++o) {
    for (std::size_t j = 0; j < cg; ++j) {
      for (std::size_t tap = 0; tap < k; ++tap) {
        m(o, tap * cg + j) = w.raw()[((group * og + o) * cg + j) * k + tap];
      }
    }
  }
  return m;
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_size == 1 && g.stride == 1 && g.padding == 0 && g.groups == 1;
}

template <typename T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g) {
  g.validate();
  require_rank(x.shape(), 3, "conv1d input");
  require(x.dim(2) == g.in_channels, "conv1d: input has " + std::to_string(x.dim(2)) +
                                         " channels, layer expects " +
                                         std::to_string(g.in_channels));
  require(w.shape() == g.weight_shape(), "conv1d: weight shape " + shape_string(w.shape()) +
                                             " does not match " + shape_string(g.weight_shape()));
}

}  // namespace

std::size_t output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                          std::size_t padding) {
  require(kernel >= 1 && stride >= 1, "kernel and stride must be positive");
  const std::size_t padded = length + 2 * padding;
  require(padded >= kernel, "padded length " + std::to_string(padded) +
                                " is shorter than kernel " + std::to_string(kernel) +
                                " (non-positive output length)");
  return (padded - kernel) / stride + 1;
}

void ConvGeometry::validate() const {
  require(kernel_size >= 1, "conv kernel_size must be >= 1");
  require(stride >= 1, "conv stride must be >= 1");
  require(groups >= 1, "conv groups must be >= 1");
  require(in_channels >= 1 && out_channels >= 1, "conv channel counts must be positive");
  require(in_channels % groups == 0 && out_channels % groups == 0,
          "conv channels (" + std::to_string(in_channels) + " -> " +
              std::to_string(out_channels) + ") not divisible by groups " +
              std::to_string(groups));
}

template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                         const ConvGeometry& geom) {
  check_conv_args(x, weight, geom);
  const std::size_t n_batch = x.dim(0), len = x.dim(1);
  const std::size_t out_len = geom.output_length(len);
  const std::size_t rows = n_batch * out_len;
  const std::size_t cout = geom.out_channels, og = geom.out_per_group();
  Tensor<T> y({n_batch, out_len, cout});

  if (is_pointwise(geom)) {
    ConstMatrixView<T> xm(x.raw(), rows, geom.in_channels, Eigen::OuterStride<>(geom.in_channels));
    ConstMatrixView<T> wm(weight.raw(), cout, geom.in_channels,
                          Eigen::OuterStride<>(geom.in_channels));
    MatrixView<T> ym(y.raw(), rows, cout, Eigen::OuterStride<>(cout));
    ym.noalias() = xm * wm.transpose();
  } else {
    std::vector<T> cols;
    for (std::size_t g = 0; g < geom.groups; ++g) {
      im2col_group(x, geom, g, out_len, cols);
      const std::size_t width = geom.kernel_size * geom.in_per_group();
      ConstMatrixView<T> cm(cols.data(), rows, width, Eigen::OuterStride<>(width));
      const RowMatrix<T> wg = group_weight(weight, geom, g);
      MatrixView<T> ym(y.raw() + g * og, rows, og, Eigen::OuterStride<>(cout));
      ym.noalias() = cm * wg.transpose();
    }
  }
  if (bias != nullptr) {
    require(bias->size() == cout, "conv1d: bias length mismatch");
    T* out = y.raw();
    const T* b = bias->raw();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < cout; ++o) out[r * cout + o] += b[o];
    }
  }
  return y;
}

template <typename T>
void conv1d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     const ConvGeometry& geom, Tensor<T>* dx, Tensor<T>* dweight,
                     Tensor<T>* dbias) {
  check_conv_args(x, weight, geom);
  const std::size_t n_batch = x.dim(0), len = x.dim(1);
  const std::size_t out_len = geom.output_length(len);
  const std::size_t rows = n_batch * out_len;
  const std::size_t cout = geom.out_channels, og = geom.out_per_group();
  const std::size_t cg = geom.in_per_group(), k = geom.kernel_size;
  require(dy.shape() == Shape({n_batch, out_len, cout}), "conv1d backward: bad dy shape");

  if (dbias != nullptr) {
    const T* d = dy.raw();
    T* db = dbias->raw();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < cout; ++o) db[o] += d[r * cout + o];
    }
  }
  if (dx == nullptr && dweight == nullptr) return;

  if (is_pointwise(geom)) {
    const std::size_t cin = geom.in_channels;
    ConstMatrixView<T> dym(dy.raw(), rows, cout, Eigen::OuterStride<>(cout));
    if (dweight != nullptr) {
      ConstMatrixView<T> xm(x.raw(), rows, cin, Eigen::OuterStride<>(cin));
      MatrixView<T> dwm(dweight->raw(), cout, cin, Eigen::OuterStride<>(cin));
      dwm.noalias() += dym.transpose() * xm;
    }
    if (dx != nullptr) {
      ConstMatrixView<T> wm(weight.raw(), cout, cin, Eigen::OuterStride<>(cin));
      MatrixView<T> dxm(dx->raw(), rows, cin, Eigen::OuterStride<>(cin));
      dxm.noalias() += dym * wm;
    }
    return;
  }

  std::vector<T> cols;
  std::vector<T> dcols;
  const std::size_t width = k * cg;
  for (std::size_t g = 0; g < geom.groups; ++g) {
    ConstMatrixView<T> dyg(dy.raw() + g * og, rows, og, Eigen::OuterStride<>(cout));
    if (dweight != nullptr) {
      im2col_group(x, geom, g, out_len, cols);
      ConstMatrixView<T> cm(cols.data(), rows, width, Eigen::OuterStride<>(width));
      const RowMatrix<T> dwg = dyg.transpose() * cm;
      T* dw = dweight->raw();
      for (std::size_t o = 0; o < og; ++o) {
        for (std::size_t j = 0; j < cg; ++j) {
          for (std::size_t tap = 0; tap < k; ++tap) {
            dw[((g * og + o) * cg + j) * k + tap] += dwg(o, tap * cg + j);
          }
        }
      }
    }
    if (dx != nullptr) {
      const RowMatrix<T> wg = group_weight(weight, geom, g);
      dcols.assign(rows * width, T{0});
      MatrixView<T> dcm(dcols.data(), rows, width, Eigen::OuterStride<>(width));
      dcm.noalias() = dyg * wg;
      col2im_group(dcols, geom, g, out_len, *dx);
    }
  }
}

template <typename T>
MaxPoolResult<T> maxpool1d_forward(const Tensor<T>& x, std::size_t kernel, std::size_t stride,
                                   std::size_t padding) {
  require_rank(x.shape(), 3, "maxpool1d input");
  require(padding < kernel, "maxpool1d: padding must be smaller than the kernel");
  const std::size_t n_batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
  const std::size_t out_len = output_length(len, kernel, stride, padding);
  MaxPoolResult<T> r{Tensor<T>({n_batch, out_len, ch}),
                     std::vector<std::uint32_t>(n_batch * out_len * ch)};
  const T* src = x.raw();
  T* dst = r.output.raw();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t t = 0; t < out_len; ++t) {
      const std::ptrdiff_t start =
          static_cast<std::ptrdiff_t>(t * stride) - static_cast<std::ptrdiff_t>(padding);
      for (std::size_t c = 0; c < ch; ++c) {
        T best = -std::numeric_limits<T>::infinity();
        std::uint32_t best_pos = 0;
        bool found = false;
        for (std::size_t tap = 0; tap < kernel; ++tap) {
          const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(tap);
          if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
          const T v = src[(n * len + static_cast<std::size_t>(pos)) * ch + c];
          if (!found || v > best) {  // strict: ties keep the lowest index
            best = v;
            best_pos = static_cast<std::uint32_t>(pos);
            found = true;
          }
        }
        const std::size_t o = (n * out_len + t) * ch + c;
        dst[o] = best;
        r.argmax[o] = best_pos;
      }
    }
  }
  return r;
}

template <typename T>
void maxpool1d_backward(const Tensor<T>& dy, std::span<const std::uint32_t> argmax,
                        std::size_t input_length, Tensor<T>& dx) {
  const std::size_t n_batch = dy.dim(0), out_len = dy.dim(1), ch = dy.dim(2);
  require(argmax.size() == dy.size(), "maxpool1d backward: argmax size mismatch");
  const T* d = dy.raw();
  T* out = dx.raw();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t o = (n * out_len + t) * ch + c;
        out[(n * input_length + argmax[o]) * ch + c] += d[o];
      }
    }
  }
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (T& v : y.data()) v = v > T{0} ? v : T{0};
  return y;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  const T* xs = x.raw();
  const T* d = dy.raw();
  T* out = dx.raw();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (xs[i] > T{0}) out[i] += d[i];
  }
}

namespace {

template <typename T>
std::size_t bn_channels(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  require_rank(x.shape(), 3, "batchnorm1d input");
  const std::size_t ch = x.dim(2);
  require(gamma.size() == ch && beta.size() == ch, "batchnorm1d: parameter channel mismatch");
  return ch;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_train_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                  const Tensor<T>& beta, T epsilon, BatchNormCache<T>& cache) {
  const std::size_t ch = bn_channels(x, gamma, beta);
  const std::size_t m = x.dim(0) * x.dim(1);
  require(m >= 2, "batchnorm1d training mode needs N*L >= 2");
  const T* src = x.raw();
  std::vector<double> mean(ch, 0.0), var(ch, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < ch; ++c) mean[c] += src[r * ch + c];
  }
  for (double& v : mean) v /= static_cast<double>(m);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double d = src[r * ch + c] - mean[c];
      var[c] += d * d;
    }
  }
  for (double& v : var) v /= static_cast<double>(m);

  cache.mean.assign(ch, T{0});
  cache.variance.assign(ch, T{0});
  cache.inv_std.assign(ch, T{0});
  for (std::size_t c = 0; c < ch; ++c) {
    cache.mean[c] = static_cast<T>(mean[c]);
    cache.variance[c] = static_cast<T>(var[c]);
    cache.inv_std[c] = static_cast<T>(1.0 / std::sqrt(var[c] + static_cast<double>(epsilon)));
  }
  cache.normalized = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  T* xh = cache.normalized.raw();
  T* out = y.raw();
  const T* gm = gamma.raw();
  const T* bt = beta.raw();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = r * ch + c;
      xh[i] = (src[i] - cache.mean[c]) * cache.inv_std[c];
      out[i] = gm[c] * xh[i] + bt[c];
    }
  }
  return y;
}

template <typename T>
void batchnorm_train_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                              const BatchNormCache<T>& cache, Tensor<T>* dx, Tensor<T>* dgamma,
                              Tensor<T>* dbeta) {
  const std::size_t ch = gamma.size();
  const std::size_t m = dy.size() / ch;
  const T* d = dy.raw();
  const T* xh = cache.normalized.raw();
  std::vector<double> sum_dy(ch, 0.0), sum_dy_xh(ch, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = r * ch + c;
      sum_dy[c] += d[i];
      sum_dy_xh[c] += static_cast<double>(d[i]) * xh[i];
    }
  }
  if (dgamma != nullptr) {
    for (std::size_t c = 0; c < ch; ++c) dgamma->raw()[c] += static_cast<T>(sum_dy_xh[c]);
  }
  if (dbeta != nullptr) {
    for (std::size_t c = 0; c < ch; ++c) dbeta->raw()[c] += static_cast<T>(sum_dy[c]);
  }
  if (dx == nullptr) return;
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<T> scale(ch), mean_dy(ch), mean_dy_xh(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    scale[c] = gamma.raw()[c] * cache.inv_std[c];
    mean_dy[c] = static_cast<T>(sum_dy[c] * inv_m);
    mean_dy_xh[c] = static_cast<T>(sum_dy_xh[c] * inv_m);
  }
  T* out = dx->raw();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = r * ch + c;
      out[i] += scale[c] * (d[i] - mean_dy[c] - xh[i] * mean_dy_xh[c]);
    }
  }
}

template <typename T>
Tensor<T> batchnorm_infer_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                  const Tensor<T>& beta, const Tensor<T>& running_mean,
                                  const Tensor<T>& running_var, T epsilon) {
  const std::size_t ch = bn_channels(x, gamma, beta);
  require(running_mean.size() == ch && running_var.size() == ch,
          "batchnorm1d: running statistics channel mismatch");
  std::vector<T> scale(ch), shift(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    const T inv_std = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(running_var[c]) + static_cast<double>(epsilon)));
    scale[c] = gamma[c] * inv_std;
    shift[c] = beta[c] - running_mean[c] * scale[c];
  }
  Tensor<T> y(x.shape());
  const std::size_t m = x.size() / ch;
  const T* src = x.raw();
  T* out = y.raw();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < ch; ++c) out[r * ch + c] = src[r * ch + c] * scale[c] + shift[c];
  }
  return y;
}

template <typename T>
void batchnorm_infer_backward(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& gamma,
                              const Tensor<T>& running_mean, const Tensor<T>& running_var,
                              T epsilon, Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta) {
  const std::size_t ch = gamma.size();
  const std::size_t m = x.size() / ch;
  std::vector<T> inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    inv_std[c] = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(running_var[c]) + static_cast<double>(epsilon)));
  }
  const T* src = x.raw();
  const T* d = dy.raw();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = r * ch + c;
      if (dx != nullptr) dx->raw()[i] += d[i] * gamma[c] * inv_std[c];
      if (dgamma != nullptr) dgamma->raw()[c] += d[i] * (src[i] - running_mean[c]) * inv_std[c];
      if (dbeta != nullptr) dbeta->raw()[c] += d[i];
    }
  }
}

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "global_avg_pool input");
  const std::size_t n_batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
  Tensor<T> y({n_batch, ch});
  std::vector<double> acc(ch);
  for (std::size_t n = 0; n < n_batch; ++n) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      const T* row = x.raw() + (n * len + t) * ch;
      for (std::size_t c = 0; c < ch; ++c) acc[c] += row[c];
    }
    for (std::size_t c = 0; c < ch; ++c) {
      y.raw()[n * ch + c] = static_cast<T>(acc[c] / static_cast<double>(len));
    }
  }
  return y;
}

template <typename T>
void global_avg_pool_backward(const Tensor<T>& dy, std::size_t length, Tensor<T>& dx) {
  const std::size_t n_batch = dy.dim(0), ch = dy.dim(1);
  const T scale = static_cast<T>(1.0 / static_cast<double>(length));
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t t = 0; t < length; ++t) {
      T* row = dx.raw() + (n * length + t) * ch;
      for (std::size_t c = 0; c < ch; ++c) row[c] += dy.raw()[n * ch + c] * scale;
    }
  }
}

template <typename T>
Tensor<T> fully_connected_forward(const Tensor<T>& x, const Tensor<T>& weight,
                                  const Tensor<T>& bias) {
  require_rank(x.shape(), 2, "fully_connected input");
  require_rank(weight.shape(), 2, "fully_connected weight");
  const std::size_t n_batch = x.dim(0), din = x.dim(1), dout = weight.dim(1);
  require(weight.dim(0) == din, "fully_connected: input width " + std::to_string(din) +
                                    " does not match weight " + shape_string(weight.shape()));
  require(bias.size() == dout, "fully_connected: bias length mismatch");
  Tensor<T> y({n_batch, dout});
  // Plain loops keep each output row independent of the batch composition.
  for (std::size_t n = 0; n < n_batch; ++n) {
    T* out = y.raw() + n * dout;
    std::copy(bias.raw(), bias.raw() + dout, out);
    for (std::size_t i = 0; i < din; ++i) {
      const T xi = x.raw()[n * din + i];
      const T* wrow = weight.raw() + i * dout;
      for (std::size_t o = 0; o < dout; ++o) out[o] += xi * wrow[o];
    }
  }
  return y;
}

template <typename T>
void fully_connected_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                              Tensor<T>* dx, Tensor<T>* dweight, Tensor<T>* dbias) {
  const std::size_t n_batch = x.dim(0), din = x.dim(1), dout = weight.dim(1);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* d = dy.raw() + n * dout;
    if (dbias != nullptr) {
      for (std::size_t o = 0; o < dout; ++o) dbias->raw()[o] += d[o];
    }
    for (std::size_t i = 0; i < din; ++i) {
      const T* wrow = weight.raw() + i * dout;
      if (dx != nullptr) {
        T acc{0};
        for (std::size_t o = 0; o < dout; ++o) acc += d[o] * wrow[o];
        dx->raw()[n * din + i] += acc;
      }
      if (dweight != nullptr) {
        const T xi = x.raw()[n * din + i];
        T* dw = dweight->raw() + i * dout;
        for (std::size_t o = 0; o < dout; ++o) dw[o] += xi * d[o];
      }
    }
  }
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax input");
  const std::size_t n_batch = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* z = logits.raw() + n * k;
    T* out = p.raw() + n * k;
    const double zmax = *std::max_element(z, z + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(z[j]) - zmax);
    for (std::size_t j = 0; j < k; ++j) {
      out[j] = static_cast<T>(std::exp(static_cast<double>(z[j]) - zmax) / total);
    }
  }
  return p;
}

template <typename T>
SoftmaxCrossEntropy<T> softmax_cross_entropy_forward(const Tensor<T>& logits,
                                                     std::span<const int> labels,
                                                     double smoothing) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  const std::size_t n_batch = logits.dim(0), k = logits.dim(1);
  require(labels.size() == n_batch, "softmax_cross_entropy: label count mismatch");
  SoftmaxCrossEntropy<T> r{0.0, softmax(logits)};
  double total = 0.0;
  for (std::size_t n = 0; n < n_batch; ++n) {
    const int label = labels[n];
    require(label >= 0 && static_cast<std::size_t>(label) < k,
            "softmax_cross_entropy: label " + std::to_string(label) + " out of range");
    const T* z = logits.raw() + n * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - zmax);
    const double log_norm = zmax + std::log(sum);
    double row = -(static_cast<double>(z[label]) - log_norm) * (1.0 - smoothing);
    if (smoothing > 0.0) {
      for (std::size_t j = 0; j < k; ++j) {
        row -= smoothing / static_cast<double>(k) * (static_cast<double>(z[j]) - log_norm);
      }
    }
    total += row;
  }
  r.loss = total / static_cast<double>(n_batch);
  return r;
}

template <typename T>
void softmax_cross_entropy_backward(const Tensor<T>& probs, std::span<const int> labels,
                                    double upstream, double smoothing, Tensor<T>& dlogits) {
  const std::size_t n_batch = probs.dim(0), k = probs.dim(1);
  const double scale = upstream / static_cast<double>(n_batch);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t j = 0; j < k; ++j) {
      double target = smoothing / static_cast<double>(k);
      if (static_cast<int>(j) == labels[n]) target += 1.0 - smoothing;
      dlogits.raw()[n * k + j] +=
          static_cast<T>((static_cast<double>(probs.raw()[n * k + j]) - target) * scale);
    }
  }
}

#define ECTNET_INSTANTIATE_KERNELS(T)                                                          \
  template Tensor<T> conv1d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,      \
                                    const ConvGeometry&);                                      \
  template void conv1d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                const ConvGeometry&, Tensor<T>*, Tensor<T>*, Tensor<T>*);      \
  template MaxPoolResult<T> maxpool1d_forward(const Tensor<T>&, std::size_t, std::size_t,      \
                                              std::size_t);                                    \
  template void maxpool1d_backward(const Tensor<T>&, std::span<const std::uint32_t>,           \
                                   std::size_t, Tensor<T>&);                                   \
  template Tensor<T> relu_forward(const Tensor<T>&);                                           \
  template void relu_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                 \
  template Tensor<T> batchnorm_train_forward(const Tensor<T>&, const Tensor<T>&,               \
                                             const Tensor<T>&, T, BatchNormCache<T>&);         \
  template void batchnorm_train_backward(const Tensor<T>&, const Tensor<T>&,                   \
                                         const BatchNormCache<T>&, Tensor<T>*, Tensor<T>*,     \
                                         Tensor<T>*);                                          \
  template Tensor<T> batchnorm_infer_forward(const Tensor<T>&, const Tensor<T>&,               \
                                             const Tensor<T>&, const Tensor<T>&,               \
                                             const Tensor<T>&, T);                             \
  template void batchnorm_infer_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         const Tensor<T>&, const Tensor<T>&, T, Tensor<T>*,    \
                                         Tensor<T>*, Tensor<T>*);                              \
  template Tensor<T> global_avg_pool_forward(const Tensor<T>&);                                \
  template void global_avg_pool_backward(const Tensor<T>&, std::size_t, Tensor<T>&);           \
  template Tensor<T> fully_connected_forward(const Tensor<T>&, const Tensor<T>&,               \
                                             const Tensor<T>&);                                \
  template void fully_connected_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         Tensor<T>*, Tensor<T>*, Tensor<T>*);                  \
  template Tensor<T> softmax(const Tensor<T>&);                                                \
  template SoftmaxCrossEntropy<T> softmax_cross_entropy_forward(                               \
      const Tensor<T>&, std::span<const int>, double);                                         \
  template void softmax_cross_entropy_backward(const Tensor<T>&, std::span<const int>, double, \
                                               double, Tensor<T>&);

ECTNET_INSTANTIATE_KERNELS(float)
ECTNET_INSTANTIATE_KERNELS(double)

#undef ECTNET_INSTANTIATE_KERNELS

}  // namespace ectnet::kernels
