#include <gtest/gtest.h>

#include "spiralmlp/errors.hpp"
#include "spiralmlp/grad_check.hpp"
#include "spiralmlp/spiral_fc.hpp"
#include "test_util.hpp"

using namespace spiralmlp;
using namespace testutil;

namespace {

SpiralConfig cfg(std::size_t c_in, std::size_t a_max, std::size_t period = 8, std::size_t k = 1,
                 Rounding r = Rounding::NearestInteger) {
  return {c_in, a_max, period, k, r};
}

SpiralFC<double> random_layer(OffsetTable t, std::size_t c_out, std::uint64_t seed) {
  SpiralFC<double> l("fc", std::move(t), c_out);
  randomize(l.weight(), seed);
  randomize(l.bias(), seed + 1);
  return l;
}

// Direct evaluation of the sum: y[i,j,o] = b[o] + sum_c W[c,o] * read(c),
// where read(c) is the rounded-offset cell or the four-cell bilinear blend.
Tensor<double> direct_reference(const SpiralFC<double>& l, const Tensor<double>& x) {
  const long h = long(x.dim(0)), w = long(x.dim(1));
  const std::size_t ci = l.in_channels(), co = l.out_channels();
  const OffsetTable& t = l.offsets();
  auto at = [&](long i, long j, std::size_t c) {
    if (i < 0 || j < 0 || i >= h || j >= w) return 0.0;
    return x[(std::size_t(i) * std::size_t(w) + std::size_t(j)) * ci + c];
  };
  Tensor<double> y({x.dim(0), x.dim(1), co});
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j)
      for (std::size_t o = 0; o < co; ++o) {
        double acc = l.bias().value[o];
        for (std::size_t c = 0; c < ci; ++c) {
          double v;
          if (t.rounding == Rounding::NearestInteger) {
            v = at(i + t.rounded[c].di, j + t.rounded[c].dj, c);
          } else {
            const double fi = std::floor(t.entries[c].di), fj = std::floor(t.entries[c].dj);
            const double ai = t.entries[c].di - fi, aj = t.entries[c].dj - fj;
            const long i0 = i + long(fi), j0 = j + long(fj);
            v = (1 - ai) * (1 - aj) * at(i0, j0, c) + (1 - ai) * aj * at(i0, j0 + 1, c) +
                ai * (1 - aj) * at(i0 + 1, j0, c) + ai * aj * at(i0 + 1, j0 + 1, c);
          }
          acc += v * l.weight().value[c * co + o];
        }
        y[(std::size_t(i) * std::size_t(w) + std::size_t(j)) * co + o] = acc;
      }
  return y;
}

}  // namespace

TEST(SpiralFC, ZeroAmplitudeIsChannelFC) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SpiralFC<double> l = random_layer(spiral_offsets(cfg(12, 0)), 7, seed);
    Linear<double> lin("lin", 12, 7);
    lin.weight.value = l.weight().value;
    lin.bias.value = l.bias().value;
    const Tensor<double> x = random_tensor({5, 6, 12}, seed + 10);
    EXPECT_LE(max_abs_diff(l.forward(x), lin.forward(x)), 1e-12);
  }
}

TEST(SpiralFC, SingleDeltaReadsThroughChannelOffset) {
  SpiralFC<double> l("fc", spiral_offsets(cfg(20, 3)), 1);
  for (std::size_t c = 0; c < 20; ++c) l.weight().value[c] = c == 10 ? 1.0 : 0.0;
  Tensor<double> x({11, 11, 20});
  x.at(5, 5, 10) = 1.0;
  const Tensor<double> y = l.forward(x);
  for (std::size_t i = 0; i < 11; ++i)
    for (std::size_t j = 0; j < 11; ++j)
      EXPECT_EQ(y.at(i, j, 0), (i == 5 && j == 2) ? 1.0 : 0.0) << i << "," << j;
}

TEST(SpiralFC, MatchesDirectSumBothModes) {
  for (Rounding r : {Rounding::NearestInteger, Rounding::Bilinear})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const SpiralFC<double> l = random_layer(spiral_offsets(cfg(16, 3, 8, 2, r)), 5, seed);
      const Tensor<double> x = random_tensor({7, 9, 16}, seed + 20);
      EXPECT_LE(max_abs_diff(l.forward(x), direct_reference(l, x)), 1e-12);
    }
}

TEST(SpiralFC, OracleEquivalenceAcrossTables) {
  CounterRng rng(77);
  int instances = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    const std::size_t k = 1 + rng.uniform_int(3), c_in = k * (2 + rng.uniform_int(10));
    OffsetTable t;
    switch (seed % 3) {
      case 0: t = spiral_offsets(cfg(c_in, rng.uniform_int(5), 1 + rng.uniform_int(10), k)); break;
      case 1: t = random_offsets(c_in, rng.uniform_int(4), seed); break;
      default: t = cycle_offsets(c_in, 1 + rng.uniform_int(4), 1 + rng.uniform_int(4)); break;
    }
    const SpiralFC<double> l = random_layer(t, 1 + rng.uniform_int(6), seed);
    const std::size_t h = 1 + rng.uniform_int(16), w = 1 + rng.uniform_int(16);
    const Tensor<double> x = random_tensor({h, w, c_in}, seed + 30);
    EXPECT_LE(max_abs_diff(l.forward(x), masked_conv_oracle(l, x)), 1e-10) << "seed " << seed;
    ++instances;
  }
  EXPECT_GE(instances, 20);
}

TEST(SpiralFC, OneInstanceServesManySizes) {
  const SpiralFC<double> l = random_layer(spiral_offsets(cfg(20, 3)), 4, 1);
  for (auto [h, w] : {std::pair{9, 9}, {4, 13}, {16, 16}, {9, 9}, {1, 1}}) {
    const Tensor<double> x = random_tensor({std::size_t(h), std::size_t(w), 20}, h * 31 + w);
    const Tensor<double> y = l.forward(x);
    EXPECT_EQ(y.shape(), (Shape{std::size_t(h), std::size_t(w), 4}));
    EXPECT_LE(max_abs_diff(y, masked_conv_oracle(l, x)), 1e-10);
  }
}

TEST(SpiralFC, OracleMaskHasOneCellPerChannel) {
  for (std::size_t a : {0, 1, 3, 5}) {
    const OffsetTable t = spiral_offsets(cfg(20, a));
    EXPECT_EQ(oracle_mask_nonzeros(t), 20u);
  }
  const SpiralFC<double> zero = random_layer(spiral_offsets(cfg(6, 0)), 3, 2);
  EXPECT_EQ(zero.offsets().extent(), 0);
}

TEST(SpiralFC, OracleRejectsBilinear) {
  const SpiralFC<double> l("fc", spiral_offsets(cfg(8, 2, 8, 1, Rounding::Bilinear)), 2);
  EXPECT_THROW(masked_conv_oracle(l, Tensor<double>({4, 4, 8})), std::invalid_argument);
}

TEST(SpiralFC, ShapeErrors) {
  const SpiralFC<double> l("fc", spiral_offsets(cfg(8, 2)), 2);
  EXPECT_THROW(l.forward(Tensor<double>({4, 4, 7})), ShapeError);
  EXPECT_THROW(l.forward(Tensor<double>({16, 8})), ShapeError);
}

TEST(SpiralFC, InteriorShiftEquivariance) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SpiralFC<double> l = random_layer(spiral_offsets(cfg(16, 3, 8, 2)), 3, seed);
    const int e = l.offsets().extent();
    const std::size_t n = 24, si = 2 + seed, sj = 3;
    const Tensor<double> patch = random_tensor({8, 8, 16}, seed + 40);
    Tensor<double> a({n, n, 16}), b({n, n, 16});
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        for (std::size_t c = 0; c < 16; ++c) {
          a.at(i + 6, j + 6, c) = patch.at(i, j, c);
          b.at(i + 6 + si, j + 6 + sj, c) = patch.at(i, j, c);
        }
    const Tensor<double> ya = l.forward(a), yb = l.forward(b);
    for (std::size_t i = std::size_t(e); i + si + std::size_t(e) < n; ++i)
      for (std::size_t j = std::size_t(e); j + sj + std::size_t(e) < n; ++j)
        for (std::size_t o = 0; o < 3; ++o)
          ASSERT_EQ(ya.at(i, j, o), yb.at(i + si, j + sj, o));
  }
}

TEST(SpiralFC, AdditiveInX) {
  const SpiralFC<double> l = random_layer(spiral_offsets(cfg(12, 2)), 4, 3);
  Linear<double> none("none", 12, 4);
  const Tensor<double> a = random_tensor({6, 6, 12}, 1), b = random_tensor({6, 6, 12}, 2);
  Tensor<double> ab = a;
  for (std::size_t i = 0; i < ab.size(); ++i) ab[i] += b[i];
  const Tensor<double> ya = l.forward(a), yb = l.forward(b), yab = l.forward(ab);
  const Tensor<double> y0 = l.forward(Tensor<double>(a.shape()));
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_NEAR(yab[i] + y0[i], ya[i] + yb[i], 1e-10);
}

TEST(SpiralFC, ZeroUpstreamGradientGivesZeroGradients) {
  SpiralFC<double> l = random_layer(spiral_offsets(cfg(8, 2)), 3, 4);
  const Tensor<double> gx = l.backward(random_tensor({5, 5, 8}, 5), Tensor<double>({5, 5, 3}));
  for (double v : gx.data()) EXPECT_EQ(v, 0.0);
  for (double v : l.weight().grad.data()) EXPECT_EQ(v, 0.0);
  for (double v : l.bias().grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(SpiralFC, ZeroAmplitudeGradientsEqualLinear) {
  SpiralFC<double> l = random_layer(spiral_offsets(cfg(6, 0)), 4, 6);
  Linear<double> lin("lin", 6, 4);
  lin.weight.value = l.weight().value;
  lin.bias.value = l.bias().value;
  const Tensor<double> x = random_tensor({3, 5, 6}, 7), g = random_tensor({3, 5, 4}, 8);
  EXPECT_LE(max_abs_diff(l.backward(x, g), lin.backward(x, g)), 1e-12);
  EXPECT_LE(max_abs_diff(l.weight().grad, lin.weight.grad), 1e-12);
  EXPECT_LE(max_abs_diff(l.bias().grad, lin.bias.grad), 1e-12);
}

TEST(SpiralFC, GradCheckNearest) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SpiralFC<double> l = random_layer(spiral_offsets(cfg(8, 1 + seed % 4, 8, 1 + seed % 2)), 3, seed);
    Tensor<double> x = random_tensor({6, 5, 8}, seed + 1);
    const Tensor<double> r = random_tensor({6, 5, 3}, seed + 2);
    const Tensor<double> gx = l.backward(x, r);
    auto loss = [&] { return dot(l.forward(x), r); };
    const auto rep = grad_check(loss, {target(l.weight()), target(l.bias()), target("x", x, gx)});
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
  }
}

TEST(SpiralFC, GradCheckBilinear) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SpiralFC<double> l = random_layer(
        spiral_offsets(cfg(8, 1 + seed % 4, 8, 1 + seed % 2, Rounding::Bilinear)), 3, seed);
    Tensor<double> x = random_tensor({6, 5, 8}, seed + 1);
    const Tensor<double> r = random_tensor({6, 5, 3}, seed + 2);
    const Tensor<double> gx = l.backward(x, r);
    auto loss = [&] { return dot(l.forward(x), r); };
    const auto rep = grad_check(loss, {target(l.weight()), target(l.bias()), target("x", x, gx)},
                                {.tolerance = 1e-5});
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
  }
}

TEST(SpiralFC, ParallelGatherMatchesSerial) {
  const int prev = kernels::num_threads();
  kernels::set_num_threads(3);
  for (Rounding r : {Rounding::NearestInteger, Rounding::Bilinear}) {
    const OffsetTable t = spiral_offsets(cfg(32, 3, 8, 2, r));
    const auto plan = make_gather_plan(offset_taps(t), 40, 37);
    const Tensor<double> x = random_tensor({40, 37, 32}, 9);
    Tensor<double> a({40 * 37, 32}), b({40 * 37, 32});
    kernels::serial::gather(plan, x.ptr(), a.ptr());
    kernels::omp::gather(plan, x.ptr(), b.ptr());
    EXPECT_EQ(a, b);
    Tensor<double> sa(x.shape()), sb(x.shape());
    kernels::serial::scatter_add(plan, a.ptr(), sa.ptr());
    kernels::omp::scatter_add(plan, a.ptr(), sb.ptr());
    EXPECT_EQ(sa, sb);
  }
  kernels::set_num_threads(prev);
}

TEST(ReceptiveField, Examples) {
  EXPECT_EQ(receptive_field(spiral_offsets(cfg(16, 0))), (std::set<GridOffset>{{0, 0}}));
  for (const auto& g : receptive_field(cycle_offsets(9, 3, 3))) {
    EXPECT_GE(g.di, -1);
    EXPECT_LE(g.di, 1);
    EXPECT_GE(g.dj, -1);
    EXPECT_LE(g.dj, 1);
  }
  const SpiralFC<double> l("fc", spiral_offsets(cfg(20, 3)), 2);
  bool off_axis = false;
  for (const auto& g : receptive_field(l)) off_axis |= g.di != 0 && g.dj != 0;
  EXPECT_TRUE(off_axis);
}

TEST(SpiralFC, MacCountIsLinearInPositionsAndOutputs) {
  const SpiralFC<double> a("a", spiral_offsets(cfg(16, 3)), 8), b("b", spiral_offsets(cfg(16, 3)), 16);
  EXPECT_EQ(a.macs(32, 32), 32u * 32 * 16 * 8);
  EXPECT_EQ(a.macs(64, 64), 4 * a.macs(32, 32));
  EXPECT_EQ(b.macs(20, 30), 2 * a.macs(20, 30));
}
