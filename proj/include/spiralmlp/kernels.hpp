#pragma once

// Dense inner loops used by every layer, in two flavours:
//
//   kernels::serial  plain reference loops, kept for testing and benchmarks
//   kernels::omp     OpenMP-parallel versions used by the layers
//
// Each parallel kernel splits work over disjoint output rows (or columns) and
// keeps the serial summation order inside each output element, so both
// flavours produce bit-identical results for any thread count.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace spiralmlp::kernels {

/// One read of a gather: channel `c` of output position p takes
/// weight * x[p + (di, dj), c], zero outside the map.
struct Tap {
  int di = 0;
  int dj = 0;
  double weight = 1.0;
};

/// Per-channel taps resolved for one spatial size.
struct GatherPlan {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::size_t> tap_begin;  ///< channels + 1 entries
  std::vector<Tap> taps;
  std::vector<std::ptrdiff_t> flat_delta;  ///< (di*W + dj)*C per tap
};

inline int num_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_num_threads(int n) {
#if defined(_OPENMP)
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

// Below this many multiply-accumulates the parallel region costs more than it
// saves.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

namespace serial {

/// C[M x N] (+)= A[M x K] * B[K x N]
template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// OUT[K x N] += A[M x K]^T * G[M x N]
template <typename T>
void matmul_at_b(const T* a, const T* g, T* out, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    T* orow = out + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[i * k + p];
      const T* grow = g + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

/// OUT[M x K] += G[M x N] * B[K x N]^T
template <typename T>
void matmul_a_bt(const T* g, const T* b, T* out, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    T* orow = out + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      orow[p] += acc;
    }
  }
}

/// out[j] += sum_i g[i, j], rows summed in ascending order.
template <typename T>
void column_sums(const T* g, T* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += g[i * n + j];
}

/// dst[H*W x C] = gathered reads of src[H x W x C] following `plan`.
template <typename T>
void gather(const GatherPlan& plan, const T* src, T* dst) {
  const std::size_t h = plan.height, w = plan.width, cn = plan.channels;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      for (std::size_t c = 0; c < cn; ++c) {
        T acc{0};
        for (std::size_t t = plan.tap_begin[c]; t < plan.tap_begin[c + 1]; ++t) {
          const Tap& tap = plan.taps[t];
          const std::ptrdiff_t si = std::ptrdiff_t(i) + tap.di;
          const std::ptrdiff_t sj = std::ptrdiff_t(j) + tap.dj;
          if (si < 0 || sj < 0 || si >= std::ptrdiff_t(h) || sj >= std::ptrdiff_t(w))
            continue;
          acc += static_cast<T>(tap.weight) *
                 src[std::ptrdiff_t(p * cn + c) + plan.flat_delta[t]];
        }
        dst[p * cn + c] = acc;
      }
    }
  }
}

/// Adjoint of gather: dst[H x W x C] += scatter of src[H*W x C].
template <typename T>
void scatter_add(const GatherPlan& plan, const T* src, T* dst) {
  const std::size_t h = plan.height, w = plan.width, cn = plan.channels;
  for (std::size_t c = 0; c < cn; ++c) {
    for (std::size_t t = plan.tap_begin[c]; t < plan.tap_begin[c + 1]; ++t) {
      const Tap& tap = plan.taps[t];
      const T wt = static_cast<T>(tap.weight);
      for (std::size_t i = 0; i < h; ++i) {
        const std::ptrdiff_t si = std::ptrdiff_t(i) + tap.di;
        if (si < 0 || si >= std::ptrdiff_t(h)) continue;
        for (std::size_t j = 0; j < w; ++j) {
          const std::ptrdiff_t sj = std::ptrdiff_t(j) + tap.dj;
          if (sj < 0 || sj >= std::ptrdiff_t(w)) continue;
          const std::size_t p = i * w + j;
          dst[std::ptrdiff_t(p * cn + c) + plan.flat_delta[t]] += wt * src[p * cn + c];
        }
      }
    }
  }
}

}  // namespace serial

namespace omp {

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t ii = 0; ii < std::int64_t(m); ++ii) {
    const std::size_t i = std::size_t(ii);
    T* crow = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_at_b(const T* a, const T* g, T* out, std::size_t m, std::size_t k,
                 std::size_t n) {
  const bool par = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t pp = 0; pp < std::int64_t(k); ++pp) {
    const std::size_t p = std::size_t(pp);
    T* orow = out + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[i * k + p];
      const T* grow = g + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

template <typename T>
void matmul_a_bt(const T* g, const T* b, T* out, std::size_t m, std::size_t k,
                 std::size_t n) {
  const bool par = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t ii = 0; ii < std::int64_t(m); ++ii) {
    const std::size_t i = std::size_t(ii);
    const T* grow = g + i * n;
    T* orow = out + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      orow[p] += acc;
    }
  }
}

template <typename T>
void column_sums(const T* g, T* out, std::size_t m, std::size_t n) {
  const bool par = m * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t jj = 0; jj < std::int64_t(n); ++jj) {
    const std::size_t j = std::size_t(jj);
    T acc = out[j];
    for (std::size_t i = 0; i < m; ++i) acc += g[i * n + j];
    out[j] = acc;
  }
}

template <typename T>
void gather(const GatherPlan& plan, const T* src, T* dst) {
  const std::size_t h = plan.height, w = plan.width, cn = plan.channels;
  const bool par = h * w * cn >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t ii = 0; ii < std::int64_t(h); ++ii) {
    const std::size_t i = std::size_t(ii);
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      for (std::size_t c = 0; c < cn; ++c) {
        T acc{0};
        for (std::size_t t = plan.tap_begin[c]; t < plan.tap_begin[c + 1]; ++t) {
          const Tap& tap = plan.taps[t];
          const std::ptrdiff_t si = std::ptrdiff_t(i) + tap.di;
          const std::ptrdiff_t sj = std::ptrdiff_t(j) + tap.dj;
          if (si < 0 || sj < 0 || si >= std::ptrdiff_t(h) || sj >= std::ptrdiff_t(w))
            continue;
          acc += static_cast<T>(tap.weight) *
                 src[std::ptrdiff_t(p * cn + c) + plan.flat_delta[t]];
        }
        dst[p * cn + c] = acc;
      }
    }
  }
}

/// Channels are independent, so the parallel split is over channels; taps of
/// one channel are applied in order.
template <typename T>
void scatter_add(const GatherPlan& plan, const T* src, T* dst) {
  const std::size_t h = plan.height, w = plan.width, cn = plan.channels;
  const bool par = h * w * cn >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t cc = 0; cc < std::int64_t(cn); ++cc) {
    const std::size_t c = std::size_t(cc);
    for (std::size_t t = plan.tap_begin[c]; t < plan.tap_begin[c + 1]; ++t) {
      const Tap& tap = plan.taps[t];
      const T wt = static_cast<T>(tap.weight);
      for (std::size_t i = 0; i < h; ++i) {
        const std::ptrdiff_t si = std::ptrdiff_t(i) + tap.di;
        if (si < 0 || si >= std::ptrdiff_t(h)) continue;
        for (std::size_t j = 0; j < w; ++j) {
          const std::ptrdiff_t sj = std::ptrdiff_t(j) + tap.dj;
          if (sj < 0 || sj >= std::ptrdiff_t(w)) continue;
          const std::size_t p = i * w + j;
          dst[std::ptrdiff_t(p * cn + c) + plan.flat_delta[t]] += wt * src[p * cn + c];
        }
      }
    }
  }
}

}  // namespace omp

}  // namespace spiralmlp::kernels
