#pragma once

// Standard layers over channel-last tensors. Every backward accumulates into
// Parameter::grad and returns the input gradient.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spiralmlp/kernels.hpp"
#include "spiralmlp/tensor.hpp"

namespace spiralmlp {

namespace detail {

template <typename T>
std::size_t leading_rows(const Tensor<T>& x, std::size_t trailing,
                         const char* op) {
  if (x.rank() == 0 || x.shape().back() != trailing)
    throw ShapeError(std::string(op) + ": input " + to_string(x.shape()) +
                     " does not end in " + std::to_string(trailing));
  return x.size() / trailing;
}

}  // namespace detail

// ---------------------------------------------------------------- linear

template <typename T>
Tensor<T> linear_forward(const Parameter<T>& w, const Parameter<T>& b,
                         const Tensor<T>& x) {
  const std::size_t c_in = w.value.dim(0), c_out = w.value.dim(1);
  if (b.value.size() != c_out)
    throw ShapeError("linear: bias " + to_string(b.value.shape()) +
                     " does not match weight " + to_string(w.value.shape()));
  if (x.rank() == 0 || x.shape().back() != c_in)
    throw ShapeError("linear: input " + to_string(x.shape()) +
                     " incompatible with weight " + to_string(w.value.shape()));
  const std::size_t rows = x.size() / c_in;
  Shape out_shape = x.shape();
  out_shape.back() = c_out;
  Tensor<T> y(out_shape);
  T* yp = y.ptr();
  const T* bp = b.value.ptr();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < c_out; ++o) yp[r * c_out + o] = bp[o];
  kernels::omp::matmul(x.ptr(), w.value.ptr(), yp, rows, c_in, c_out, true);
  return y;
}

template <typename T>
Tensor<T> linear_backward(Parameter<T>& w, Parameter<T>& b, const Tensor<T>& x,
                          const Tensor<T>& gy) {
  const std::size_t c_in = w.value.dim(0), c_out = w.value.dim(1);
  const std::size_t rows = detail::leading_rows(x, c_in, "linear backward");
  if (gy.size() != rows * c_out)
    throw ShapeError("linear backward: grad " + to_string(gy.shape()) +
                     " does not match output rows");
  kernels::omp::matmul_at_b(x.ptr(), gy.ptr(), w.grad.ptr(), rows, c_in, c_out);
  kernels::omp::column_sums(gy.ptr(), b.grad.ptr(), rows, c_out);
  Tensor<T> gx(x.shape());
  kernels::omp::matmul_a_bt(gy.ptr(), w.value.ptr(), gx.ptr(), rows, c_in, c_out);
  return gx;
}

/// Dense projection [.. x C_in] -> [.. x C_out].
template <typename T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t c_in, std::size_t c_out)
      : weight(name + ".weight", {c_in, c_out}, true),
        bias(name + ".bias", {c_out}, false) {}

  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }

  Tensor<T> forward(const Tensor<T>& x) const {
    return linear_forward(weight, bias, x);
  }
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy) {
    return linear_backward(weight, bias, x, gy);
  }
  std::size_t macs(std::size_t rows) const {
    return rows * in_features() * out_features();
  }
};

// ------------------------------------------------------------- layernorm

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
Tensor<T> layernorm_forward(const Parameter<T>& gamma, const Parameter<T>& beta,
                            const Tensor<T>& x, double eps = kLayerNormEps) {
  const std::size_t c = gamma.value.size();
  const std::size_t rows = detail::leading_rows(x, c, "layernorm");
  Tensor<T> y(x.shape());
  const T* xp = x.ptr();
  T* yp = y.ptr();
  const T* g = gamma.value.ptr();
  const T* b = beta.value.ptr();
#pragma omp parallel for schedule(static) if (rows * c >= kernels::kParallelThreshold)
  for (std::int64_t rr = 0; rr < std::int64_t(rows); ++rr) {
    const T* row = xp + std::size_t(rr) * c;
    T* out = yp + std::size_t(rr) * c;
    T mean{0};
    for (std::size_t k = 0; k < c; ++k) mean += row[k];
    mean /= T(c);
    T var{0};
    for (std::size_t k = 0; k < c; ++k) var += (row[k] - mean) * (row[k] - mean);
    var /= T(c);
    const T rstd = T(1) / std::sqrt(var + T(eps));
    for (std::size_t k = 0; k < c; ++k) out[k] = (row[k] - mean) * rstd * g[k] + b[k];
  }
  return y;
}

template <typename T>
Tensor<T> layernorm_backward(Parameter<T>& gamma, Parameter<T>& beta,
                             const Tensor<T>& x, const Tensor<T>& gy,
                             double eps = kLayerNormEps) {
  const std::size_t c = gamma.value.size();
  const std::size_t rows = detail::leading_rows(x, c, "layernorm backward");
  Tensor<T> gx(x.shape());
  Tensor<T> xhat(x.shape());
  const T* xp = x.ptr();
  const T* gyp = gy.ptr();
  const T* g = gamma.value.ptr();
#pragma omp parallel for schedule(static) if (rows * c >= kernels::kParallelThreshold)
  for (std::int64_t rr = 0; rr < std::int64_t(rows); ++rr) {
    const std::size_t r = std::size_t(rr);
    const T* row = xp + r * c;
    const T* grow = gyp + r * c;
    T* xh = xhat.ptr() + r * c;
    T* out = gx.ptr() + r * c;
    T mean{0};
    for (std::size_t k = 0; k < c; ++k) mean += row[k];
    mean /= T(c);
    T var{0};
    for (std::size_t k = 0; k < c; ++k) var += (row[k] - mean) * (row[k] - mean);
    var /= T(c);
    const T rstd = T(1) / std::sqrt(var + T(eps));
    T mean_g{0}, mean_gx{0};
    for (std::size_t k = 0; k < c; ++k) {
      xh[k] = (row[k] - mean) * rstd;
      const T gk = grow[k] * g[k];
      mean_g += gk;
      mean_gx += gk * xh[k];
    }
    mean_g /= T(c);
    mean_gx /= T(c);
    for (std::size_t k = 0; k < c; ++k)
      out[k] = rstd * (grow[k] * g[k] - mean_g - xh[k] * mean_gx);
  }
  T* dg = gamma.grad.ptr();
  T* db = beta.grad.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      dg[k] += gyp[r * c + k] * xhat[r * c + k];
      db[k] += gyp[r * c + k];
    }
  }
  return gx;
}

/// LayerNorm over the trailing axis. Neither gamma nor beta is decayed.
template <typename T>
struct LayerNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  double eps = kLayerNormEps;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t c)
      : gamma(name + ".gamma", {c}, false), beta(name + ".beta", {c}, false) {
    gamma.value.fill(T{1});
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return layernorm_forward(gamma, beta, x, eps);
  }
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy) {
    return layernorm_backward(gamma, beta, x, gy, eps);
  }
};

// ------------------------------------------------------------------ gelu

/// Exact GeLU, x * Phi(x) with Phi(x) = (1 + erf(x / sqrt 2)) / 2.
template <typename T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static) if (n >= kernels::kParallelThreshold)
  for (std::int64_t i = 0; i < std::int64_t(n); ++i) y[i] = gelu_scalar(x[i]);
  return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  Tensor<T> gx(x.shape());
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static) if (n >= kernels::kParallelThreshold)
  for (std::int64_t i = 0; i < std::int64_t(n); ++i)
    gx[i] = gy[i] * gelu_grad_scalar(x[i]);
  return gx;
}

// --------------------------------------------------------------- softmax

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

template <typename T>
AxisSplit split_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " out of range for " + to_string(x.shape()));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= x.dim(i);
  s.len = x.dim(axis);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) s.inner *= x.dim(i);
  return s;
}

}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x, axis);
  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      T sum{0};
      for (std::size_t k = 0; k < s.len; ++k) {
        const T e = std::exp(x[base + k * s.inner] - mx);
        y[base + k * s.inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) y[base + k * s.inner] /= sum;
    }
  }
  return y;
}

/// Vector-Jacobian product of softmax given its output y.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& gy,
                           std::size_t axis) {
  const auto s = detail::split_axis(y, axis);
  Tensor<T> gx(y.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      T dot{0};
      for (std::size_t k = 0; k < s.len; ++k)
        dot += y[base + k * s.inner] * gy[base + k * s.inner];
      for (std::size_t k = 0; k < s.len; ++k) {
        const std::size_t idx = base + k * s.inner;
        gx[idx] = y[idx] * (gy[idx] - dot);
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------- conv2d

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

inline std::size_t conv_out_size(std::size_t in, std::size_t kernel,
                                 std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel || stride == 0)
    throw ConfigError("conv2d: kernel " + std::to_string(kernel) +
                      " does not fit padded input " + std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

// cols[(oi*Wo+oj) x (kh*Kw+kw)*C + c]
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kh, std::size_t kw,
                 Conv2dGeometry g, std::size_t ho, std::size_t wo) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t row_len = kh * kw * c;
  Tensor<T> cols({ho * wo, row_len});
#pragma omp parallel for schedule(static) if (ho * wo * row_len >= kernels::kParallelThreshold)
  for (std::int64_t oo = 0; oo < std::int64_t(ho); ++oo) {
    const std::size_t oi = std::size_t(oo);
    for (std::size_t oj = 0; oj < wo; ++oj) {
      T* row = cols.ptr() + (oi * wo + oj) * row_len;
      for (std::size_t a = 0; a < kh; ++a) {
        const std::ptrdiff_t si = std::ptrdiff_t(oi * g.stride + a) - std::ptrdiff_t(g.padding);
        for (std::size_t b = 0; b < kw; ++b) {
          const std::ptrdiff_t sj = std::ptrdiff_t(oj * g.stride + b) - std::ptrdiff_t(g.padding);
          T* dst = row + (a * kw + b) * c;
          if (si < 0 || sj < 0 || si >= std::ptrdiff_t(h) || sj >= std::ptrdiff_t(w)) {
            for (std::size_t k = 0; k < c; ++k) dst[k] = T{0};
          } else {
            const T* src = x.ptr() + (std::size_t(si) * w + std::size_t(sj)) * c;
            for (std::size_t k = 0; k < c; ++k) dst[k] = src[k];
          }
        }
      }
    }
  }
  return cols;
}

}  // namespace detail

/// Cross-correlation of x [H x W x C_in] with w [K_h x K_w x C_in x C_out],
/// zero padding.
template <typename T>
Tensor<T> conv2d_forward(const Parameter<T>& w, const Parameter<T>& b,
                         const Tensor<T>& x, Conv2dGeometry g) {
  if (w.value.rank() != 4 || x.rank() != 3 || x.dim(2) != w.value.dim(2))
    throw ShapeError("conv2d: input " + to_string(x.shape()) +
                     " incompatible with kernel " + to_string(w.value.shape()));
  const std::size_t kh = w.value.dim(0), kw = w.value.dim(1);
  const std::size_t c_in = w.value.dim(2), c_out = w.value.dim(3);
  const std::size_t ho = conv_out_size(x.dim(0), kh, g.stride, g.padding);
  const std::size_t wo = conv_out_size(x.dim(1), kw, g.stride, g.padding);
  const Tensor<T> cols = detail::im2col(x, kh, kw, g, ho, wo);
  Tensor<T> y({ho, wo, c_out});
  for (std::size_t p = 0; p < ho * wo; ++p)
    for (std::size_t o = 0; o < c_out; ++o) y[p * c_out + o] = b.value[o];
  kernels::omp::matmul(cols.ptr(), w.value.ptr(), y.ptr(), ho * wo,
                       kh * kw * c_in, c_out, true);
  return y;
}

template <typename T>
Tensor<T> conv2d_backward(Parameter<T>& w, Parameter<T>& b, const Tensor<T>& x,
                          const Tensor<T>& gy, Conv2dGeometry g) {
  const std::size_t kh = w.value.dim(0), kw = w.value.dim(1);
  const std::size_t c_in = w.value.dim(2), c_out = w.value.dim(3);
  const std::size_t h = x.dim(0), wd = x.dim(1);
  const std::size_t ho = gy.dim(0), wo = gy.dim(1);
  const std::size_t row_len = kh * kw * c_in;
  const Tensor<T> cols = detail::im2col(x, kh, kw, g, ho, wo);
  kernels::omp::matmul_at_b(cols.ptr(), gy.ptr(), w.grad.ptr(), ho * wo, row_len, c_out);
  kernels::omp::column_sums(gy.ptr(), b.grad.ptr(), ho * wo, c_out);
  Tensor<T> gcols({ho * wo, row_len});
  kernels::omp::matmul_a_bt(gy.ptr(), w.value.ptr(), gcols.ptr(), ho * wo, row_len, c_out);
  Tensor<T> gx(x.shape());
  for (std::size_t oi = 0; oi < ho; ++oi) {
    for (std::size_t oj = 0; oj < wo; ++oj) {
      const T* row = gcols.ptr() + (oi * wo + oj) * row_len;
      for (std::size_t a = 0; a < kh; ++a) {
        const std::ptrdiff_t si = std::ptrdiff_t(oi * g.stride + a) - std::ptrdiff_t(g.padding);
        if (si < 0 || si >= std::ptrdiff_t(h)) continue;
        for (std::size_t bb = 0; bb < kw; ++bb) {
          const std::ptrdiff_t sj = std::ptrdiff_t(oj * g.stride + bb) - std::ptrdiff_t(g.padding);
          if (sj < 0 || sj >= std::ptrdiff_t(wd)) continue;
          T* dst = gx.ptr() + (std::size_t(si) * wd + std::size_t(sj)) * c_in;
          const T* src = row + (a * kw + bb) * c_in;
          for (std::size_t k = 0; k < c_in; ++k) dst[k] += src[k];
        }
      }
    }
  }
  return gx;
}

template <typename T>
struct Conv2d {
  Parameter<T> weight;
  Parameter<T> bias;
  Conv2dGeometry geometry;

  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t kernel, std::size_t c_in,
         std::size_t c_out, Conv2dGeometry g)
      : weight(name + ".weight", {kernel, kernel, c_in, c_out}, true),
        bias(name + ".bias", {c_out}, false),
        geometry(g) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d_forward(weight, bias, x, geometry);
  }
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy) {
    return conv2d_backward(weight, bias, x, gy, geometry);
  }
  std::pair<std::size_t, std::size_t> output_size(std::size_t h, std::size_t w) const {
    return {conv_out_size(h, weight.value.dim(0), geometry.stride, geometry.padding),
            conv_out_size(w, weight.value.dim(1), geometry.stride, geometry.padding)};
  }
};

// --------------------------------------------------------- cross entropy

template <typename T>
struct CrossEntropyResult {
  T loss{0};
  Tensor<T> grad;  ///< d(mean loss)/d(logits)
};

/// Mean negative log-softmax of the true class over N rows of logits [N x K].
template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& logits,
                                    std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) +
                     " vs " + std::to_string(labels.size()) + " labels");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  CrossEntropyResult<T> r{T{0}, Tensor<T>(logits.shape())};
  if (n == 0) return r;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || std::size_t(label) >= k)
      throw std::domain_error("cross_entropy: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(k) + ")");
    const T* row = logits.ptr() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    total += double(lse - row[label]);
    T* g = r.grad.ptr() + i * k;
    for (std::size_t j = 0; j < k; ++j) g[j] = std::exp(row[j] - lse) / T(n);
    g[label] -= T(1) / T(n);
  }
  r.loss = T(total / double(n));
  return r;
}

}  // namespace spiralmlp
