#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "spiralmlp/kernels.hpp"
#include "spiralmlp/nn.hpp"
#include "spiralmlp/offsets.hpp"
#include "spiralmlp/tensor.hpp"

namespace spiralmlp {

/// Gather taps of each channel for a table, before resolving a spatial size.
/// NearestInteger reads the rounded cell; Bilinear reads the four cells
/// around the real offset with the usual tent weights (zero-weight taps are
/// dropped).
inline std::vector<std::vector<kernels::Tap>> offset_taps(const OffsetTable& t) {
  std::vector<std::vector<kernels::Tap>> out(t.size());
  for (std::size_t c = 0; c < t.size(); ++c) {
    if (t.rounding == Rounding::NearestInteger) {
      out[c].push_back({t.rounded[c].di, t.rounded[c].dj, 1.0});
      continue;
    }
    const double fi = std::floor(t.entries[c].di), fj = std::floor(t.entries[c].dj);
    const double ai = t.entries[c].di - fi, aj = t.entries[c].dj - fj;
    const int i0 = int(fi), j0 = int(fj);
    const kernels::Tap taps[4] = {{i0, j0, (1 - ai) * (1 - aj)},
                                  {i0, j0 + 1, (1 - ai) * aj},
                                  {i0 + 1, j0, ai * (1 - aj)},
                                  {i0 + 1, j0 + 1, ai * aj}};
    for (const auto& tap : taps)
      if (tap.weight != 0.0) out[c].push_back(tap);
  }
  return out;
}

/// Resolves per-tap flat index deltas for one (H, W).
inline kernels::GatherPlan make_gather_plan(
    const std::vector<std::vector<kernels::Tap>>& taps, std::size_t h,
    std::size_t w) {
  kernels::GatherPlan plan;
  plan.height = h;
  plan.width = w;
  plan.channels = taps.size();
  plan.tap_begin.push_back(0);
  for (const auto& ch : taps) {
    for (const auto& tap : ch) {
      plan.taps.push_back(tap);
      plan.flat_delta.push_back(
          (std::ptrdiff_t(tap.di) * std::ptrdiff_t(w) + tap.dj) *
          std::ptrdiff_t(taps.size()));
    }
    plan.tap_begin.push_back(plan.taps.size());
  }
  return plan;
}

/// Channel-wise sparse projection: output position (i, j) reads channel c of
/// the input at (i + di(c), j + dj(c)) (zero outside the map), then projects
/// the gathered C_in vector with W [C_in x C_out] and adds b.
template <typename T>
class SpiralFC {
 public:
  SpiralFC() = default;
  SpiralFC(const std::string& name, OffsetTable table, std::size_t c_out)
      : weight_(name + ".weight", {table.size(), c_out}, true),
        bias_(name + ".bias", {c_out}, false),
        table_(std::move(table)),
        taps_(offset_taps(table_)),
        cache_(std::make_shared<PlanCache>()) {}

  Parameter<T>& weight() { return weight_; }
  const Parameter<T>& weight() const { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& bias() const { return bias_; }
  const OffsetTable& offsets() const { return table_; }
  std::size_t in_channels() const { return weight_.value.dim(0); }
  std::size_t out_channels() const { return weight_.value.dim(1); }

  /// Cached plan for (h, w); plans never change once built.
  std::shared_ptr<const kernels::GatherPlan> plan(std::size_t h, std::size_t w) const {
    std::lock_guard lock(cache_->mutex);
    auto& slot = cache_->plans[{h, w}];
    if (!slot)
      slot = std::make_shared<const kernels::GatherPlan>(make_gather_plan(taps_, h, w));
    return slot;
  }

  /// [H*W x C_in] matrix of gathered reads.
  Tensor<T> gather(const Tensor<T>& x) const {
    check_input(x);
    const auto p = plan(x.dim(0), x.dim(1));
    Tensor<T> g({x.dim(0) * x.dim(1), in_channels()});
    kernels::omp::gather(*p, x.ptr(), g.ptr());
    return g;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    const Tensor<T> g = gather(x);
    const std::size_t rows = g.dim(0), c_out = out_channels();
    Tensor<T> y({x.dim(0), x.dim(1), c_out});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < c_out; ++o) y[r * c_out + o] = bias_.value[o];
    kernels::omp::matmul(g.ptr(), weight_.value.ptr(), y.ptr(), rows,
                         in_channels(), c_out, true);
    return y;
  }

  /// Accumulates weight/bias gradients and returns d loss / d x.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy) {
    require_shape(gy, {x.dim(0), x.dim(1), out_channels()}, "spiral fc backward");
    const Tensor<T> g = gather(x);
    const std::size_t rows = g.dim(0), c_in = in_channels(), c_out = out_channels();
    kernels::omp::matmul_at_b(g.ptr(), gy.ptr(), weight_.grad.ptr(), rows, c_in, c_out);
    kernels::omp::column_sums(gy.ptr(), bias_.grad.ptr(), rows, c_out);
    Tensor<T> gg({rows, c_in});
    kernels::omp::matmul_a_bt(gy.ptr(), weight_.value.ptr(), gg.ptr(), rows, c_in, c_out);
    Tensor<T> gx(x.shape());
    kernels::omp::scatter_add(*plan(x.dim(0), x.dim(1)), gg.ptr(), gx.ptr());
    return gx;
  }

  /// Multiply-accumulates of one forward projection, H*W*C_in*C_out.
  std::size_t macs(std::size_t h, std::size_t w) const {
    return h * w * in_channels() * out_channels();
  }

 private:
  struct PlanCache {
    std::mutex mutex;
    std::map<std::pair<std::size_t, std::size_t>,
             std::shared_ptr<const kernels::GatherPlan>>
        plans;
  };

  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(2) != in_channels() || x.dim(0) == 0 || x.dim(1) == 0)
      throw ShapeError("spiral fc: input " + to_string(x.shape()) +
                       " is not [H x W x " + std::to_string(in_channels()) + "]");
  }

  Parameter<T> weight_;
  Parameter<T> bias_;
  OffsetTable table_;
  std::vector<std::vector<kernels::Tap>> taps_;
  std::shared_ptr<PlanCache> cache_;
};

/// Builds the dense (2E+1)^2 x C_in x C_out kernel that is zero except at each
/// channel's rounded offset (E = table extent), where it carries that
/// channel's projection row, and evaluates it as an ordinary zero-padded
/// stride-1 convolution.
template <typename T>
Tensor<T> masked_conv_oracle(const SpiralFC<T>& layer, const Tensor<T>& x) {
  const OffsetTable& t = layer.offsets();
  if (t.rounding != Rounding::NearestInteger)
    throw std::invalid_argument(
        "masked_conv_oracle: only NearestInteger offsets select exact cells");
  const std::size_t ext = std::size_t(t.extent());
  const std::size_t k = 2 * ext + 1;
  const std::size_t c_in = layer.in_channels(), c_out = layer.out_channels();
  Parameter<T> dense("oracle.weight", {k, k, c_in, c_out});
  Parameter<T> bias("oracle.bias", {c_out});
  bias.value = layer.bias().value;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      for (std::size_t c = 0; c < c_in; ++c) {
        const bool selected = t.rounded[c].di == int(a) - int(ext) &&
                              t.rounded[c].dj == int(b) - int(ext);
        const T mask = selected ? T{1} : T{0};
        for (std::size_t o = 0; o < c_out; ++o)
          dense.value[((a * k + b) * c_in + c) * c_out + o] =
              mask * layer.weight().value.at(c, o);
      }
    }
  }
  return conv2d_forward(dense, bias, x, Conv2dGeometry{1, ext});
}

/// Count of (y, x, c) cells the oracle mask selects.
inline std::size_t oracle_mask_nonzeros(const OffsetTable& t) {
  const int ext = t.extent();
  std::size_t count = 0;
  for (int a = -ext; a <= ext; ++a)
    for (int b = -ext; b <= ext; ++b)
      for (const auto& g : t.rounded)
        if (g.di == a && g.dj == b) ++count;
  return count;
}

/// Distinct rounded displacements a table reads from.
inline std::set<GridOffset> receptive_field(const OffsetTable& t) {
  return {t.rounded.begin(), t.rounded.end()};
}

template <typename T>
std::set<GridOffset> receptive_field(const SpiralFC<T>& layer) {
  return receptive_field(layer.offsets());
}

}  // namespace spiralmlp
