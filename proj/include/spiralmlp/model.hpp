#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spiralmlp/model_config.hpp"
#include "spiralmlp/nn.hpp"
#include "spiralmlp/rng.hpp"
#include "spiralmlp/spiral_block.hpp"
#include "spiralmlp/tensor.hpp"

namespace spiralmlp {

// ------------------------------------------------------- patch embedding

template <typename T>
struct EmbedTape {
  Tensor<T> input, projected;
};

/// Downsampling by `stride` followed by LayerNorm.
///
/// PVT style: overlapping convolution with kernel 2s-1, padding s-1
/// (7/4/3 for s=4, 3/2/1 for s=2).
/// Swin style: space-to-depth over s x s cells, then a linear projection.
template <typename T>
struct PatchEmbed {
  Style style = Style::PVT;
  std::size_t stride = 1;
  Conv2d<T> conv;
  Linear<T> proj;
  LayerNorm<T> norm;

  PatchEmbed() = default;
  PatchEmbed(const std::string& name, Style st, std::size_t s, std::size_t c_in,
             std::size_t c_out)
      : style(st), stride(s), norm(name + ".norm", c_out) {
    if (style == Style::PVT)
      conv = Conv2d<T>(name + ".conv", 2 * s - 1, c_in, c_out, {s, s - 1});
    else
      proj = Linear<T>(name + ".proj", s * s * c_in, c_out);
  }

  std::pair<std::size_t, std::size_t> output_size(std::size_t h, std::size_t w) const {
    if (style == Style::PVT) return conv.output_size(h, w);
    if (h % stride || w % stride)
      throw ShapeError("patch merge: " + std::to_string(h) + "x" + std::to_string(w) +
                       " not divisible by " + std::to_string(stride));
    return {h / stride, w / stride};
  }

  Tensor<T> space_to_depth(const Tensor<T>& x) const {
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2), s = stride;
    const auto [ho, wo] = output_size(h, w);
    Tensor<T> out({ho, wo, s * s * c});
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        for (std::size_t a = 0; a < s; ++a)
          for (std::size_t b = 0; b < s; ++b)
            for (std::size_t k = 0; k < c; ++k)
              out[((i * wo + j) * s * s + a * s + b) * c + k] =
                  x[((i * s + a) * w + (j * s + b)) * c + k];
    return out;
  }

  Tensor<T> depth_to_space_grad(const Tensor<T>& g, const Shape& in_shape) const {
    const std::size_t w = in_shape[1], c = in_shape[2], s = stride;
    const std::size_t ho = g.dim(0), wo = g.dim(1);
    Tensor<T> out(in_shape);
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        for (std::size_t a = 0; a < s; ++a)
          for (std::size_t b = 0; b < s; ++b)
            for (std::size_t k = 0; k < c; ++k)
              out[((i * s + a) * w + (j * s + b)) * c + k] =
                  g[((i * wo + j) * s * s + a * s + b) * c + k];
    return out;
  }

  Tensor<T> forward(const Tensor<T>& x, EmbedTape<T>* tape = nullptr) const {
    Tensor<T> projected = style == Style::PVT ? conv.forward(x) : proj.forward(space_to_depth(x));
    Tensor<T> y = norm.forward(projected);
    if (tape) {
      tape->input = x;
      tape->projected = std::move(projected);
    }
    return y;
  }

  Tensor<T> backward(const EmbedTape<T>& tape, const Tensor<T>& gy) {
    const Tensor<T> g = norm.backward(tape.projected, gy);
    if (style == Style::PVT) return conv.backward(tape.input, g);
    const Tensor<T> gs = proj.backward(space_to_depth(tape.input), g);
    return depth_to_space_grad(gs, tape.input.shape());
  }

  template <typename F>
  void for_each_parameter(F&& f) {
    if (style == Style::PVT) {
      f(conv.weight);
      f(conv.bias);
    } else {
      f(proj.weight);
      f(proj.bias);
    }
    f(norm.gamma);
    f(norm.beta);
  }

  std::size_t macs(std::size_t h, std::size_t w) const {
    const auto [ho, wo] = output_size(h, w);
    if (style == Style::PVT) {
      const auto& k = conv.weight.value;
      return ho * wo * k.dim(0) * k.dim(1) * k.dim(2) * k.dim(3);
    }
    return proj.macs(ho * wo);
  }
};

// ------------------------------------------------------------------ model

template <typename T>
struct ModelTape {
  std::vector<EmbedTape<T>> embeds;
  std::vector<std::vector<SpiralBlockTape<T>>> blocks;
  std::vector<Shape> stage_shapes;  ///< output shape of each stage
  Tensor<T> features, normed, pooled;
};

/// Four-stage SpiralMLP: per stage a patch embedding and `depth` Spiral
/// Blocks; then LayerNorm, global average pooling and a linear classifier.
template <typename T>
class SpiralMLPModel {
 public:
  SpiralMLPModel(const ModelConfig& cfg, std::uint64_t seed = 0)
      : SpiralMLPModel(cfg, SpiralOverrides{}, seed) {}

  SpiralMLPModel(const ModelConfig& base, const SpiralOverrides& overrides,
                 std::uint64_t seed)
      : cfg_(apply_overrides(base, overrides)) {
    cfg_.validate();
    std::size_t total_blocks = 0;
    for (const auto& s : cfg_.stages) total_blocks += s.depth;
    std::size_t c_prev = 3, block_index = 0;
    for (std::size_t si = 0; si < 4; ++si) {
      const auto& st = cfg_.stages[si];
      const std::string sname = "stage" + std::to_string(si + 1);
      embeds_.emplace_back(sname + ".embed", cfg_.style, st.stride, c_prev, st.channels);
      SpiralConfig sc{st.channels, st.a_max, st.period, st.partitions, cfg_.rounding};
      sc.validate();
      std::vector<SpiralBlock<T>> blocks;
      for (std::size_t b = 0; b < st.depth; ++b, ++block_index) {
        const double rate = total_blocks > 1
                                ? cfg_.drop_path * double(block_index) / double(total_blocks - 1)
                                : 0.0;
        blocks.emplace_back(sname + ".block" + std::to_string(b), sc, st.expansion, rate,
                            block_index);
      }
      stages_.push_back(std::move(blocks));
      c_prev = st.channels;
    }
    norm_ = LayerNorm<T>("norm", c_prev);
    head_ = Linear<T>("head", c_prev, cfg_.num_classes);
    initialize(seed);
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t num_classes() const { return cfg_.num_classes; }

  /// Projection weights ~ truncated normal(0, 0.02) from
  /// CounterRng(seed, stream = parameter index); biases and LayerNorm shifts
  /// zero, LayerNorm scales one, merge weights zero.
  void initialize(std::uint64_t seed) {
    std::uint64_t stream = 0;
    for (Parameter<T>* p : parameters()) {
      CounterRng rng(seed, stream++);
      const bool is_merge = p->name.ends_with(".w_merge");
      const bool is_scale = p->name.ends_with(".gamma");
      for (auto& v : p->value.data()) {
        if (is_scale) v = T{1};
        else if (p->decay && !is_merge) v = T(rng.truncated_normal(0.02));
        else v = T{0};
      }
      p->zero_grad();
    }
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    auto push = [&](Parameter<T>& p) { out.push_back(&p); };
    for (std::size_t si = 0; si < 4; ++si) {
      embeds_[si].for_each_parameter(push);
      for (auto& b : stages_[si]) b.for_each_parameter(push);
    }
    push(norm_.gamma);
    push(norm_.beta);
    push(head_.weight);
    push(head_.bias);
    return out;
  }

  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    for (Parameter<T>* p : const_cast<SpiralMLPModel*>(this)->parameters()) out.push_back(p);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Parameter<T>* p : parameters()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (Parameter<T>* p : parameters()) p->zero_grad();
  }

  void check_input(std::size_t h, std::size_t w, std::size_t c = 3) const {
    const std::size_t s = cfg_.total_stride();
    if (c != 3 || h == 0 || w == 0 || h % s != 0 || w % s != 0)
      throw ShapeError("model input " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                       std::to_string(c) + ": spatial size must be divisible by " +
                       std::to_string(s) + " with 3 channels");
  }

  /// Spatial size after each stage for an H x W input.
  std::vector<std::pair<std::size_t, std::size_t>> stage_sizes(std::size_t h, std::size_t w) const {
    check_input(h, w);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& e : embeds_) {
      std::tie(h, w) = e.output_size(h, w);
      out.emplace_back(h, w);
    }
    return out;
  }

  /// Multiply-accumulates of one forward pass (projections, convolutions and
  /// the classifier; normalisation and elementwise work excluded).
  std::size_t macs(std::size_t h, std::size_t w) const {
    check_input(h, w);
    std::size_t total = 0;
    for (std::size_t si = 0; si < 4; ++si) {
      total += embeds_[si].macs(h, w);
      std::tie(h, w) = embeds_[si].output_size(h, w);
      for (const auto& b : stages_[si]) total += b.macs(h, w);
    }
    return total + head_.macs(1);
  }

  /// Logits [num_classes] of one image [H x W x 3].
  Tensor<T> forward_image(const Tensor<T>& image, const ForwardContext& ctx = {},
                          ModelTape<T>* tape = nullptr) const {
    if (image.rank() != 3) throw ShapeError("model: image must be [H x W x 3]");
    check_input(image.dim(0), image.dim(1), image.dim(2));
    if (tape) {
      tape->embeds.assign(4, {});
      tape->blocks.assign(4, {});
      tape->stage_shapes.clear();
    }
    Tensor<T> x = image;
    for (std::size_t si = 0; si < 4; ++si) {
      x = embeds_[si].forward(x, tape ? &tape->embeds[si] : nullptr);
      if (tape) tape->blocks[si].resize(stages_[si].size());
      for (std::size_t b = 0; b < stages_[si].size(); ++b)
        x = stages_[si][b].forward(x, ctx, tape ? &tape->blocks[si][b] : nullptr);
      if (tape) tape->stage_shapes.push_back(x.shape());
    }
    Tensor<T> normed = norm_.forward(x);
    const std::size_t c = normed.dim(2), rows = normed.size() / c;
    Tensor<T> pooled({1, c});
    for (std::size_t p = 0; p < rows; ++p)
      for (std::size_t k = 0; k < c; ++k) pooled[k] += normed[p * c + k];
    for (std::size_t k = 0; k < c; ++k) pooled[k] /= T(rows);
    Tensor<T> logits = head_.forward(pooled).reshaped({cfg_.num_classes});
    if (tape) {
      tape->features = std::move(x);
      tape->normed = std::move(normed);
      tape->pooled = std::move(pooled);
    }
    return logits;
  }

  /// Accumulates parameter gradients for one image given d loss / d logits.
  void backward_image(const ModelTape<T>& tape, const Tensor<T>& g_logits) {
    const Tensor<T> g_pooled = head_.backward(tape.pooled, g_logits.reshaped({1, cfg_.num_classes}));
    const std::size_t c = tape.normed.dim(2), rows = tape.normed.size() / c;
    Tensor<T> g_normed(tape.normed.shape());
    for (std::size_t p = 0; p < rows; ++p)
      for (std::size_t k = 0; k < c; ++k) g_normed[p * c + k] = g_pooled[k] / T(rows);
    Tensor<T> g = norm_.backward(tape.features, g_normed);
    for (std::size_t si = 4; si-- > 0;) {
      for (std::size_t b = stages_[si].size(); b-- > 0;)
        g = stages_[si][b].backward(tape.blocks[si][b], g);
      g = embeds_[si].backward(tape.embeds[si], g);
    }
  }

  /// Logits [N x num_classes] for a batch [N x H x W x 3], evaluation mode.
  Tensor<T> forward(const Tensor<T>& batch) const {
    if (batch.rank() != 4)
      throw ShapeError("model: batch must be [N x H x W x 3], got " + to_string(batch.shape()));
    const std::size_t n = batch.dim(0), per = batch.size() / std::max<std::size_t>(n, 1);
    check_input(batch.dim(1), batch.dim(2), batch.dim(3));
    Tensor<T> logits({n, cfg_.num_classes});
    for (std::size_t i = 0; i < n; ++i) {
      Tensor<T> img({batch.dim(1), batch.dim(2), batch.dim(3)},
                    std::vector<T>(batch.ptr() + i * per, batch.ptr() + (i + 1) * per));
      const Tensor<T> l = forward_image(img);
      std::copy(l.data().begin(), l.data().end(), logits.ptr() + i * cfg_.num_classes);
    }
    return logits;
  }

  std::vector<PatchEmbed<T>>& embeds() { return embeds_; }
  std::vector<std::vector<SpiralBlock<T>>>& stages() { return stages_; }
  Linear<T>& head() { return head_; }
  LayerNorm<T>& norm() { return norm_; }

 private:
  ModelConfig cfg_;
  std::vector<PatchEmbed<T>> embeds_;
  std::vector<std::vector<SpiralBlock<T>>> stages_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

}  // namespace spiralmlp
