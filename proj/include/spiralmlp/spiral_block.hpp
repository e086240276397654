#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "spiralmlp/nn.hpp"
#include "spiralmlp/offsets.hpp"
#include "spiralmlp/rng.hpp"
#include "spiralmlp/spiral_fc.hpp"
#include "spiralmlp/tensor.hpp"

namespace spiralmlp {

// ------------------------------------------------------------ merge head

template <typename T>
struct MergeOutput {
  Tensor<T> weights;  ///< a, [2 x C]; column c sums to one
  Tensor<T> merged;   ///< [H x W x C]
};

/// Input-dependent convex combination of the self and cross branches.
///
///   m[c]       = mean over positions of (x_self + x_cross)[., ., c]
///   logit[r,c] = w_merge[r] * m[c]
///   a[:, c]    = softmax over r of logit[:, c]
///   out        = a[0, c] * x_self + a[1, c] * x_cross
template <typename T>
struct MergeHead {
  Parameter<T> w_merge;  ///< [2 x 1], zero-initialised

  MergeHead() = default;
  explicit MergeHead(const std::string& name) : w_merge(name + ".w_merge", {2, 1}, true) {}

  MergeOutput<T> forward(const Tensor<T>& xs, const Tensor<T>& xc) const {
    if (xs.shape() != xc.shape() || xs.rank() != 3)
      throw ShapeError("merge head: branch shapes " + to_string(xs.shape()) +
                       " and " + to_string(xc.shape()) + " differ");
    const std::size_t c = xs.dim(2), rows = xs.size() / c;
    const Tensor<T> m = channel_mean(xs, xc);
    Tensor<T> logits({2, c});
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t k = 0; k < c; ++k) logits.at(r, k) = w_merge.value[r] * m[k];
    MergeOutput<T> out{softmax(logits, 0), Tensor<T>(xs.shape())};
    // a0 * xs + (1 - a0) * xc
    const T* a0 = out.weights.ptr();
    for (std::size_t p = 0; p < rows; ++p)
      for (std::size_t k = 0; k < c; ++k)
        out.merged[p * c + k] = xc[p * c + k] + a0[k] * (xs[p * c + k] - xc[p * c + k]);
    return out;
  }

  /// Returns (d/dx_self, d/dx_cross); accumulates into w_merge.grad.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& xs, const Tensor<T>& xc,
                                           const Tensor<T>& a, const Tensor<T>& gy) {
    const std::size_t c = xs.dim(2), rows = xs.size() / c;
    const Tensor<T> m = channel_mean(xs, xc);
    Tensor<T> ga({2, c});
    for (std::size_t p = 0; p < rows; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        ga[k] += gy[p * c + k] * xs[p * c + k];
        ga[c + k] += gy[p * c + k] * xc[p * c + k];
      }
    }
    const Tensor<T> glogits = softmax_backward(a, ga, 0);
    Tensor<T> gm({c});
    for (std::size_t r = 0; r < 2; ++r) {
      T acc{0};
      for (std::size_t k = 0; k < c; ++k) {
        acc += glogits.at(r, k) * m[k];
        gm[k] += glogits.at(r, k) * w_merge.value[r];
      }
      w_merge.grad[r] += acc;
    }
    std::pair<Tensor<T>, Tensor<T>> g{Tensor<T>(xs.shape()), Tensor<T>(xs.shape())};
    for (std::size_t p = 0; p < rows; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        const T shared = gm[k] / T(rows);
        g.first[p * c + k] = a[k] * gy[p * c + k] + shared;
        g.second[p * c + k] = (T{1} - a[k]) * gy[p * c + k] + shared;
      }
    }
    return g;
  }

  /// Operation count of one forward pass: one add per element for the sum,
  /// one pass for the mean, 2C logits, two multiply-adds per element to mix.
  static std::size_t ops(std::size_t h, std::size_t w, std::size_t c) {
    return h * w * c /* add */ + h * w * c /* mean */ + 2 * c /* logits */ +
           2 * h * w * c /* mix */;
  }

 private:
  static Tensor<T> channel_mean(const Tensor<T>& xs, const Tensor<T>& xc) {
    const std::size_t c = xs.dim(2), rows = xs.size() / c;
    Tensor<T> m({c});
    for (std::size_t p = 0; p < rows; ++p)
      for (std::size_t k = 0; k < c; ++k) m[k] += xs[p * c + k] + xc[p * c + k];
    for (std::size_t k = 0; k < c; ++k) m[k] /= T(rows);
    return m;
  }
};

// ---------------------------------------------------------- spiral mixing

template <typename T>
struct SpiralMixingTape {
  Tensor<T> self_out, cross_out, weights;
};

/// Self-Spiral FC (zero offsets) and Cross-Spiral FC run on the same input
/// and are fused by the merge head.
template <typename T>
struct SpiralMixing {
  SpiralFC<T> self_fc;
  SpiralFC<T> cross_fc;
  MergeHead<T> merge;

  SpiralMixing() = default;
  SpiralMixing(const std::string& name, const SpiralConfig& cross, std::size_t c_out) {
    SpiralConfig self_cfg = cross;
    self_cfg.a_max = 0;
    self_fc = SpiralFC<T>(name + ".self_fc", spiral_offsets(self_cfg), c_out);
    cross_fc = SpiralFC<T>(name + ".cross_fc", spiral_offsets(cross), c_out);
    merge = MergeHead<T>(name + ".merge");
  }

  Tensor<T> forward(const Tensor<T>& x, SpiralMixingTape<T>* tape = nullptr) const {
    Tensor<T> xs = self_fc.forward(x);
    Tensor<T> xc = cross_fc.forward(x);
    MergeOutput<T> out = merge.forward(xs, xc);
    if (tape) {
      tape->self_out = std::move(xs);
      tape->cross_out = std::move(xc);
      tape->weights = std::move(out.weights);
    }
    return std::move(out.merged);
  }

  Tensor<T> backward(const Tensor<T>& x, const SpiralMixingTape<T>& tape,
                     const Tensor<T>& gy) {
    auto [gs, gc] = merge.backward(tape.self_out, tape.cross_out, tape.weights, gy);
    Tensor<T> gx = self_fc.backward(x, gs);
    const Tensor<T> gx2 = cross_fc.backward(x, gc);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gx2[i];
    return gx;
  }
};

// --------------------------------------------------------- channel mixing

template <typename T>
struct ChannelMixingTape {
  Tensor<T> hidden_pre, hidden;
};

/// Per-position MLP: Linear(C, E*C) -> GeLU -> Linear(E*C, C).
template <typename T>
struct ChannelMixing {
  Linear<T> fc1;
  Linear<T> fc2;

  ChannelMixing() = default;
  ChannelMixing(const std::string& name, std::size_t c, std::size_t expansion)
      : fc1(name + ".fc1", c, c * expansion), fc2(name + ".fc2", c * expansion, c) {}

  std::size_t hidden_width() const { return fc1.out_features(); }

  Tensor<T> forward(const Tensor<T>& x, ChannelMixingTape<T>* tape = nullptr) const {
    Tensor<T> pre = fc1.forward(x);
    Tensor<T> act = gelu(pre);
    Tensor<T> y = fc2.forward(act);
    if (tape) {
      tape->hidden_pre = std::move(pre);
      tape->hidden = std::move(act);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const ChannelMixingTape<T>& tape,
                     const Tensor<T>& gy) {
    const Tensor<T> g_act = fc2.backward(tape.hidden, gy);
    const Tensor<T> g_pre = gelu_backward(tape.hidden_pre, g_act);
    return fc1.backward(x, g_pre);
  }
};

// ------------------------------------------------------------ spiral block

/// Where a forward pass runs. Drop-path masks are drawn from
/// CounterRng(seed, stream = 2*block + branch) at counter step * 2^20 + sample,
/// so a mask depends only on (seed, step, block, branch, sample).
struct ForwardContext {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t sample = 0;
};

template <typename T>
struct SpiralBlockTape {
  Tensor<T> x, ln1_out, x_mid, ln2_out;
  SpiralMixingTape<T> mixing;
  ChannelMixingTape<T> channel;
  T scale_mix{1}, scale_chn{1};  ///< 0 when the branch was dropped, else 1/(1-p)
};

/// x' = x + SpiralMixing(LN(x)); y = x' + ChannelMixing(LN(x')).
template <typename T>
struct SpiralBlock {
  LayerNorm<T> ln1;
  SpiralMixing<T> mixing;
  LayerNorm<T> ln2;
  ChannelMixing<T> channel;
  double drop_path = 0.0;
  std::size_t index = 0;  ///< global block index, keys the drop-path stream

  SpiralBlock() = default;
  SpiralBlock(const std::string& name, const SpiralConfig& cfg, std::size_t expansion,
              double drop, std::size_t block_index)
      : ln1(name + ".ln1", cfg.c_in),
        mixing(name + ".mixing", cfg, cfg.c_in),
        ln2(name + ".ln2", cfg.c_in),
        channel(name + ".channel", cfg.c_in, expansion),
        drop_path(drop),
        index(block_index) {}

  T branch_scale(const ForwardContext& ctx, std::uint64_t branch) const {
    if (!ctx.training || drop_path <= 0.0) return T{1};
    CounterRng rng(ctx.seed, 2 * index + branch, (ctx.step << 20) + ctx.sample);
    const bool keep = rng.uniform01() >= drop_path;
    return keep ? T(1.0 / (1.0 - drop_path)) : T{0};
  }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx = {},
                    SpiralBlockTape<T>* tape = nullptr) const {
    const T s1 = branch_scale(ctx, 0), s2 = branch_scale(ctx, 1);
    Tensor<T> n1 = ln1.forward(x);
    Tensor<T> m = mixing.forward(n1, tape ? &tape->mixing : nullptr);
    Tensor<T> mid = x;
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i] += s1 * m[i];
    Tensor<T> n2 = ln2.forward(mid);
    Tensor<T> ch = channel.forward(n2, tape ? &tape->channel : nullptr);
    Tensor<T> y = mid;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s2 * ch[i];
    if (tape) {
      tape->x = x;
      tape->ln1_out = std::move(n1);
      tape->x_mid = std::move(mid);
      tape->ln2_out = std::move(n2);
      tape->scale_mix = s1;
      tape->scale_chn = s2;
    }
    return y;
  }

  Tensor<T> backward(const SpiralBlockTape<T>& tape, const Tensor<T>& gy) {
    Tensor<T> g_mid = gy;
    {
      Tensor<T> g_ch = gy;
      for (auto& v : g_ch.data()) v *= tape.scale_chn;
      const Tensor<T> g_n2 = channel.backward(tape.ln2_out, tape.channel, g_ch);
      const Tensor<T> g = ln2.backward(tape.x_mid, g_n2);
      for (std::size_t i = 0; i < g_mid.size(); ++i) g_mid[i] += g[i];
    }
    Tensor<T> gx = g_mid;
    Tensor<T> g_m = g_mid;
    for (auto& v : g_m.data()) v *= tape.scale_mix;
    const Tensor<T> g_n1 = mixing.backward(tape.ln1_out, tape.mixing, g_m);
    const Tensor<T> g = ln1.backward(tape.x, g_n1);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    return gx;
  }

  template <typename F>
  void for_each_parameter(F&& f) {
    f(ln1.gamma); f(ln1.beta);
    f(mixing.self_fc.weight()); f(mixing.self_fc.bias());
    f(mixing.cross_fc.weight()); f(mixing.cross_fc.bias());
    f(mixing.merge.w_merge);
    f(ln2.gamma); f(ln2.beta);
    f(channel.fc1.weight); f(channel.fc1.bias);
    f(channel.fc2.weight); f(channel.fc2.bias);
  }

  /// Multiply-accumulates of one forward pass (projections only).
  std::size_t macs(std::size_t h, std::size_t w) const {
    return mixing.self_fc.macs(h, w) + mixing.cross_fc.macs(h, w) +
           channel.fc1.macs(h * w) + channel.fc2.macs(h * w);
  }
};

}  // namespace spiralmlp
