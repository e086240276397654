#include <gtest/gtest.h>

#include "spiralmlp/errors.hpp"
#include "spiralmlp/grad_check.hpp"
#include "spiralmlp/spiral_block.hpp"
#include "test_util.hpp"

using namespace spiralmlp;
using namespace testutil;

namespace {

SpiralConfig cfg(std::size_t c, std::size_t a_max = 3, std::size_t k = 2) {
  return {c, a_max, 8, k, Rounding::NearestInteger};
}

// Scalar loop version of the merge head.
std::pair<Tensor<double>, Tensor<double>> merge_reference(double w0, double w1,
                                                          const Tensor<double>& xs,
                                                          const Tensor<double>& xc) {
  const std::size_t h = xs.dim(0), w = xs.dim(1), c = xs.dim(2);
  Tensor<double> a({2, c}), out(xs.shape());
  for (std::size_t k = 0; k < c; ++k) {
    double m = 0;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) m += xs.at(i, j, k) + xc.at(i, j, k);
    m /= double(h * w);
    const double e0 = std::exp(w0 * m), e1 = std::exp(w1 * m);
    a.at(0, k) = e0 / (e0 + e1);
    a.at(1, k) = e1 / (e0 + e1);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out.at(i, j, k) = a.at(0, k) * xs.at(i, j, k) + a.at(1, k) * xc.at(i, j, k);
  }
  return {a, out};
}

void randomize_block(SpiralBlock<double>& b, std::uint64_t seed) {
  std::uint64_t s = seed;
  b.for_each_parameter([&](Parameter<double>& p) { randomize(p, s++, 0.4); });
}

}  // namespace

// ------------------------------------------------------------ merge head

TEST(MergeHead, ZeroWeightsGiveEvenMix) {
  const MergeHead<double> mh("m");
  const Tensor<double> xs = random_tensor({4, 5, 6}, 1), xc = random_tensor({4, 5, 6}, 2);
  const auto out = mh.forward(xs, xc);
  for (double v : out.weights.data()) EXPECT_EQ(v, 0.5);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(out.merged[i], 0.5 * xs[i] + 0.5 * xc[i], 1e-15);
}

TEST(MergeHead, EqualBranchesReturnTheSharedInput) {
  MergeHead<double> mh("m");
  mh.w_merge.value[0] = 1.3;
  mh.w_merge.value[1] = -0.4;
  const Tensor<double> x({3, 3, 4}, std::vector<double>(36, 0.625));
  EXPECT_EQ(mh.forward(x, x).merged, x);
  const Tensor<double> r = random_tensor({3, 3, 4}, 3);
  EXPECT_EQ(mh.forward(r, r).merged, r);
}

TEST(MergeHead, MatchesScalarLoopAndColumnsSumToOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    MergeHead<double> mh("m");
    randomize(mh.w_merge, seed, 2.0);
    const Tensor<double> xs = random_tensor({3, 4, 5}, seed + 1), xc = random_tensor({3, 4, 5}, seed + 2);
    const auto out = mh.forward(xs, xc);
    const auto [a, merged] = merge_reference(mh.w_merge.value[0], mh.w_merge.value[1], xs, xc);
    EXPECT_LE(max_abs_diff(out.weights, a), 1e-14);
    EXPECT_LE(max_abs_diff(out.merged, merged), 1e-14);
    for (std::size_t c = 0; c < 5; ++c)
      EXPECT_NEAR(out.weights.at(0, c) + out.weights.at(1, c), 1.0, 1e-12);
  }
}

TEST(MergeHead, ShapeMismatch) {
  const MergeHead<double> mh("m");
  EXPECT_THROW(mh.forward(Tensor<double>({2, 2, 3}), Tensor<double>({2, 3, 3})), ShapeError);
}

TEST(MergeHead, ScalingBothBranchesKeepsTheFavouredBranch) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    MergeHead<double> mh("m");
    randomize(mh.w_merge, seed, 2.0);
    const Tensor<double> xs = random_tensor({3, 3, 6}, seed + 1), xc = random_tensor({3, 3, 6}, seed + 2);
    Tensor<double> xs2 = xs, xc2 = xc;
    for (auto& v : xs2.data()) v *= 3.7;
    for (auto& v : xc2.data()) v *= 3.7;
    const auto a = mh.forward(xs, xc).weights, b = mh.forward(xs2, xc2).weights;
    for (std::size_t c = 0; c < 6; ++c)
      EXPECT_EQ(a.at(0, c) > a.at(1, c), b.at(0, c) > b.at(1, c)) << c;
  }
}

TEST(MergeHead, OperationCountIsLinear) {
  EXPECT_EQ(MergeHead<double>::ops(32, 32, 64) - 2 * 64, 4 * (MergeHead<double>::ops(16, 16, 64) - 2 * 64));
  EXPECT_EQ(MergeHead<double>::ops(10, 10, 8), 4u * 100 * 8 + 16);
}

TEST(MergeHead, GradCheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    MergeHead<double> mh("m");
    randomize(mh.w_merge, seed, 1.5);
    Tensor<double> xs = random_tensor({3, 4, 5}, seed + 1), xc = random_tensor({3, 4, 5}, seed + 2);
    const Tensor<double> r = random_tensor({3, 4, 5}, seed + 3);
    const auto out = mh.forward(xs, xc);
    const auto [gs, gc] = mh.backward(xs, xc, out.weights, r);
    auto loss = [&] { return dot(mh.forward(xs, xc).merged, r); };
    const auto rep = grad_check(loss, {target(mh.w_merge), target("x_self", xs, gs), target("x_cross", xc, gc)});
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
  }
}

// --------------------------------------------------------- spiral mixing

TEST(SpiralMixing, IdenticalBranchesReduceToSelf) {
  SpiralMixing<double> sm("sm", cfg(8, 0, 1), 8);
  randomize(sm.self_fc.weight(), 1);
  randomize(sm.self_fc.bias(), 2);
  sm.cross_fc.weight().value = sm.self_fc.weight().value;
  sm.cross_fc.bias().value = sm.self_fc.bias().value;
  const Tensor<double> x = random_tensor({5, 5, 8}, 3);
  EXPECT_LE(max_abs_diff(sm.forward(x), sm.self_fc.forward(x)), 1e-15);
}

TEST(SpiralMixing, BranchesShareInputButNotWeights) {
  SpiralMixing<double> sm("sm", cfg(8), 8);
  EXPECT_EQ(sm.self_fc.offsets().extent(), 0);
  EXPECT_GT(sm.cross_fc.offsets().extent(), 0);
  EXPECT_NE(&sm.self_fc.weight(), &sm.cross_fc.weight());
  EXPECT_NE(sm.self_fc.weight().name, sm.cross_fc.weight().name);
}

TEST(SpiralMixing, ZeroInputMergesBiases) {
  SpiralMixing<double> sm("sm", cfg(6), 6);
  randomize(sm.self_fc.bias(), 1);
  randomize(sm.cross_fc.bias(), 2);
  const Tensor<double> y = sm.forward(Tensor<double>({3, 3, 6}));
  for (std::size_t p = 0; p < 9; ++p)
    for (std::size_t c = 0; c < 6; ++c)
      EXPECT_NEAR(y[p * 6 + c], 0.5 * (sm.self_fc.bias().value[c] + sm.cross_fc.bias().value[c]), 1e-15);
}

TEST(SpiralMixing, EqualsExplicitComposition) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SpiralMixing<double> sm("sm", cfg(8), 8);
    randomize(sm.self_fc.weight(), seed);
    randomize(sm.cross_fc.weight(), seed + 1);
    randomize(sm.merge.w_merge, seed + 2);
    const Tensor<double> x = random_tensor({6, 7, 8}, seed + 3);
    const Tensor<double> expect = sm.merge.forward(sm.self_fc.forward(x), sm.cross_fc.forward(x)).merged;
    EXPECT_EQ(sm.forward(x), expect);
  }
}

// -------------------------------------------------------- channel mixing

TEST(ChannelMixing, ExpansionAndZeroWeights) {
  ChannelMixing<double> cm("cm", 6, 4);
  EXPECT_EQ(cm.hidden_width(), 24u);
  randomize(cm.fc1.bias, 1);
  randomize(cm.fc2.bias, 2);
  const Tensor<double> y = cm.forward(random_tensor({2, 2, 6}, 3));
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(y[p * 6 + c], cm.fc2.bias.value[c]);
}

TEST(ChannelMixing, MatchesPerPositionLoops) {
  ChannelMixing<double> cm("cm", 4, 3);
  randomize(cm.fc1.weight, 1);
  randomize(cm.fc1.bias, 2);
  randomize(cm.fc2.weight, 3);
  randomize(cm.fc2.bias, 4);
  const Tensor<double> x = random_tensor({3, 2, 4}, 5);
  const Tensor<double> y = cm.forward(x);
  for (std::size_t p = 0; p < 6; ++p) {
    std::vector<double> hid(12);
    for (std::size_t h = 0; h < 12; ++h) {
      double acc = cm.fc1.bias.value[h];
      for (std::size_t c = 0; c < 4; ++c) acc += x[p * 4 + c] * cm.fc1.weight.value[c * 12 + h];
      hid[h] = 0.5 * acc * std::erfc(-acc / std::sqrt(2.0));
    }
    for (std::size_t o = 0; o < 4; ++o) {
      double acc = cm.fc2.bias.value[o];
      for (std::size_t h = 0; h < 12; ++h) acc += hid[h] * cm.fc2.weight.value[h * 4 + o];
      EXPECT_NEAR(y[p * 4 + o], acc, 1e-13);
    }
  }
}

TEST(ChannelMixing, GradCheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ChannelMixing<double> cm("cm", 5, 2);
    randomize(cm.fc1.weight, seed);
    randomize(cm.fc1.bias, seed + 1);
    randomize(cm.fc2.weight, seed + 2);
    randomize(cm.fc2.bias, seed + 3);
    Tensor<double> x = random_tensor({3, 3, 5}, seed + 4);
    const Tensor<double> r = random_tensor({3, 3, 5}, seed + 5);
    ChannelMixingTape<double> tape;
    cm.forward(x, &tape);
    const Tensor<double> gx = cm.backward(x, tape, r);
    auto loss = [&] { return dot(cm.forward(x), r); };
    const auto rep = grad_check(loss, {target(cm.fc1.weight), target(cm.fc1.bias), target(cm.fc2.weight),
                                       target(cm.fc2.bias), target("x", x, gx)});
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
  }
}

// ---------------------------------------------------------- spiral block

TEST(SpiralBlock, ZeroProjectionsAreIdentity) {
  const SpiralBlock<double> b("b", cfg(8), 4, 0.0, 0);
  const Tensor<double> x = random_tensor({5, 6, 8}, 1);
  EXPECT_EQ(b.forward(x), x);
}

TEST(SpiralBlock, ShapePreserved) {
  SpiralBlock<double> b("b", cfg(8), 4, 0.0, 0);
  randomize_block(b, 2);
  for (auto [h, w] : {std::pair{1, 1}, {3, 9}, {12, 12}}) {
    const Tensor<double> x = random_tensor({std::size_t(h), std::size_t(w), 8}, 3);
    EXPECT_EQ(b.forward(x).shape(), x.shape());
  }
}

TEST(SpiralBlock, GradCheckAllParametersAndInput) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SpiralBlock<double> b("b", cfg(8, 1 + seed % 3), 2, 0.0, 0);
    randomize_block(b, seed * 31);
    Tensor<double> x = random_tensor({5, 4, 8}, seed + 1);
    const Tensor<double> r = random_tensor({5, 4, 8}, seed + 2);
    SpiralBlockTape<double> tape;
    b.forward(x, {}, &tape);
    const Tensor<double> gx = b.backward(tape, r);
    std::vector<GradCheckTarget> targets{target("x", x, gx)};
    b.for_each_parameter([&](Parameter<double>& p) { targets.push_back(target(p)); });
    auto loss = [&] { return dot(b.forward(x), r); };
    const auto rep = grad_check(loss, targets, {.tolerance = 1e-5});
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
  }
}

TEST(SpiralBlock, DropPathIsDeterministicAndRescales) {
  SpiralBlock<double> b("b", cfg(8), 2, 0.5, 3);
  randomize_block(b, 5);
  const Tensor<double> x = random_tensor({4, 4, 8}, 6);
  std::size_t dropped = 0, kept = 0;
  for (std::uint64_t sample = 0; sample < 200; ++sample) {
    const ForwardContext ctx{true, 9, 4, sample};
    const double s = b.branch_scale(ctx, 0);
    EXPECT_EQ(s, b.branch_scale(ctx, 0));
    EXPECT_TRUE(s == 0.0 || s == 2.0);
    (s == 0.0 ? dropped : kept)++;
  }
  EXPECT_GT(dropped, 70u);
  EXPECT_GT(kept, 70u);
  EXPECT_EQ(b.branch_scale({false, 9, 4, 0}, 0), 1.0);
  EXPECT_EQ(b.forward(x, {true, 9, 4, 1}), b.forward(x, {true, 9, 4, 1}));
  EXPECT_EQ(b.forward(x), b.forward(x, {false, 9, 4, 1}));
}

TEST(SpiralBlock, GradCheckWithDropPathMask) {
  SpiralBlock<double> b("b", cfg(8), 2, 0.4, 1);
  randomize_block(b, 11);
  Tensor<double> x = random_tensor({4, 4, 8}, 12);
  const Tensor<double> r = random_tensor({4, 4, 8}, 13);
  for (std::uint64_t sample = 0; sample < 4; ++sample) {
    const ForwardContext ctx{true, 3, 7, sample};
    for (auto* p : {&b.ln1.gamma, &b.channel.fc1.weight, &b.mixing.cross_fc.weight()}) p->zero_grad();
    SpiralBlockTape<double> tape;
    b.forward(x, ctx, &tape);
    const Tensor<double> gx = b.backward(tape, r);
    auto loss = [&] { return dot(b.forward(x, ctx), r); };
    const auto rep = grad_check(loss, {target("x", x, gx), target(b.ln1.gamma), target(b.channel.fc1.weight),
                                       target(b.mixing.cross_fc.weight())},
                                {.tolerance = 1e-5});
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
  }
}
