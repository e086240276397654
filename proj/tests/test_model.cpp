#include <gtest/gtest.h>

#include "spiralmlp/errors.hpp"
#include "spiralmlp/model.hpp"
#include "spiralmlp/nn.hpp"
#include "test_util.hpp"

using namespace spiralmlp;
using namespace testutil;

namespace {

// Independent per-layer count for a PVT-style config.
std::size_t hand_count(const ModelConfig& cfg) {
  std::size_t total = 0, c_prev = 3;
  for (const auto& st : cfg.stages) {
    const std::size_t c = st.channels, k = 2 * st.stride - 1, e = st.expansion;
    total += k * k * c_prev * c + c + 2 * c;
    const std::size_t block = 2 * c + 2 * c      // two LayerNorms
                              + 2 * (c * c + c)  // self and cross Spiral FC
                              + 2                // merge
                              + (c * e * c + e * c) + (e * c * c + c);
    total += st.depth * block;
    c_prev = c;
  }
  return total + 2 * c_prev + c_prev * cfg.num_classes + cfg.num_classes;
}

}  // namespace

TEST(Presets, KnownValues) {
  const ModelConfig b1 = preset("B1");
  EXPECT_EQ(b1.stages[2].channels, 320u);
  EXPECT_EQ(b1.stages[0].stride, 4u);
  EXPECT_EQ(b1.stages[3].depth, 2u);
  const ModelConfig b5 = preset("B5");
  EXPECT_EQ(b5.stages[0].channels, 96u);
  EXPECT_EQ(b5.stages[2].depth, 24u);
  const ModelConfig sb = preset("B");
  EXPECT_EQ(sb.style, Style::Swin);
  EXPECT_EQ(sb.stages[3].channels, 768u);
  EXPECT_EQ(sb.stages[0].a_max, 3u);
  EXPECT_EQ(sb.stages[0].partitions, 2u);
  const ModelConfig td = preset("tiny-desk");
  EXPECT_EQ(td.stages[3].channels, 128u);
  EXPECT_EQ(td.stages[2].depth, 2u);
  for (const auto& name : preset_names()) EXPECT_NO_THROW(preset(name).validate()) << name;
}

TEST(Presets, UnknownNameListsValidOnes) {
  try {
    preset("B9");
    FAIL();
  } catch (const std::out_of_range& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("B9"), std::string::npos);
    for (const auto& name : preset_names()) EXPECT_NE(msg.find(name), std::string::npos) << name;
  }
}

TEST(ParamCount, PyramidPresetsNearPublishedSizes) {
  const double b1 = double(SpiralMLPModel<float>(preset("B1")).param_count());
  const double b5 = double(SpiralMLPModel<float>(preset("B5")).param_count());
  EXPECT_NEAR(b1, 14e6, 0.15 * 14e6);
  EXPECT_NEAR(b5, 68e6, 0.15 * 68e6);
}

TEST(ParamCount, TinyDeskFrozenAndHandCounted) {
  const SpiralMLPModel<float> m(preset("tiny-desk"));
  EXPECT_EQ(m.param_count(), 363300u);
  EXPECT_EQ(m.param_count(), hand_count(preset("tiny-desk")));
  ModelConfig two = preset("tiny-desk");
  two.num_classes = 2;
  EXPECT_EQ(SpiralMLPModel<float>(two).param_count(), hand_count(two));
  EXPECT_EQ(SpiralMLPModel<float>(preset("B1")).param_count(), hand_count(preset("B1")));
}

TEST(Model, StageSizes) {
  const SpiralMLPModel<float> m(preset("tiny-desk"));
  const auto s = m.stage_sizes(224, 224);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0], std::make_pair(std::size_t(56), std::size_t(56)));
  EXPECT_EQ(s[1].first, 28u);
  EXPECT_EQ(s[2].first, 14u);
  EXPECT_EQ(s[3].first, 7u);
  const auto r = m.stage_sizes(64, 96);
  EXPECT_EQ(r[3], std::make_pair(std::size_t(2), std::size_t(3)));
}

TEST(Model, SameSeedSameParameters) {
  SpiralMLPModel<float> a(preset("tiny-desk"), 7), b(preset("tiny-desk"), 7), c(preset("tiny-desk"), 8);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    differs |= pa[i]->value != pc[i]->value;
  }
  EXPECT_TRUE(differs);
}

TEST(Model, ParameterNamesUnique) {
  SpiralMLPModel<float> m(preset("tiny-desk"));
  std::set<std::string> names;
  for (auto* p : m.parameters()) EXPECT_TRUE(names.insert(p->name).second) << p->name;
}

TEST(Model, LogitsShape) {
  const SpiralMLPModel<float> m(preset("tiny-desk"), 1);
  const Tensor<float> img = Tensor<float>(random_tensor({32, 32, 3}, 2).shape());
  EXPECT_EQ(m.forward_image(img).shape(), Shape({10}));
  const Tensor<double> batch = random_tensor({3, 32, 32, 3}, 3);
  const SpiralMLPModel<double> md(preset("tiny-desk"), 1);
  EXPECT_EQ(md.forward(batch).shape(), Shape({3, 10}));
}

TEST(Model, ZeroHeadGivesUniformLogits) {
  SpiralMLPModel<double> m(preset("tiny-desk"), 1);
  m.head().weight.value.fill(0.0);
  const Tensor<double> l = m.forward_image(Tensor<double>({32, 32, 3}));
  for (std::size_t k = 0; k < l.size(); ++k) EXPECT_EQ(l[k], l[0]);
  const std::vector<int> labels{3};
  const auto ce = cross_entropy(l.reshaped({1, 10}), labels);
  EXPECT_NEAR(ce.loss, std::log(10.0), 1e-12);
}

TEST(Model, IdenticalImagesGiveIdenticalRows) {
  const SpiralMLPModel<double> m(preset("tiny-desk"), 4);
  const Tensor<double> img = random_tensor({32, 32, 3}, 5);
  Tensor<double> batch({2, 32, 32, 3});
  for (std::size_t r = 0; r < 2; ++r)
    std::copy(img.data().begin(), img.data().end(), batch.ptr() + r * img.size());
  const Tensor<double> l = m.forward(batch);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(l.at(0, k), l.at(1, k));
}

TEST(Model, IndivisibleSizeRejected) {
  const SpiralMLPModel<float> m(preset("tiny-desk"));
  EXPECT_THROW(m.forward_image(Tensor<float>({33, 32, 3})), ShapeError);
  EXPECT_THROW(m.forward_image(Tensor<float>({32, 32, 4})), ShapeError);
  EXPECT_THROW(m.stage_sizes(100, 100), ShapeError);
  try {
    m.check_input(40, 32);
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("32"), std::string::npos);
  }
}

TEST(Model, RunsAtHighResolutions) {
  const SpiralMLPModel<float> m(preset("tiny-desk"), 1);
  for (std::size_t r : {224, 320, 512}) {
    const Tensor<float> img({r, r, 3}, std::vector<float>(r * r * 3, 0.25f));
    const Tensor<float> l = m.forward_image(img);
    EXPECT_EQ(l.size(), 10u);
    for (float v : l.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Model, SwinStyleForwardAndSizes) {
  ModelConfig cfg = preset("tiny-desk");
  cfg.style = Style::Swin;
  const SpiralMLPModel<double> m(cfg, 2);
  EXPECT_EQ(m.stage_sizes(64, 64)[0].first, 16u);
  const Tensor<double> l = m.forward_image(random_tensor({64, 64, 3}, 3));
  EXPECT_EQ(l.size(), 10u);
  EXPECT_LT(m.param_count(), SpiralMLPModel<double>(preset("tiny-desk"), 2).param_count());
}

TEST(Model, MacsScaleWithArea) {
  const SpiralMLPModel<float> m(preset("tiny-desk"));
  const std::size_t head = 128 * 10;
  EXPECT_EQ(m.macs(64, 64) - head, 4 * (m.macs(32, 32) - head));
}

TEST(Model, EveryParameterReceivesGradient) {
  ModelConfig cfg = preset("tiny-desk");
  cfg.drop_path = 0.0;
  SpiralMLPModel<double> m(cfg, 3);
  // Break the zero-initialised merge symmetry so no path is flat.
  std::uint64_t s = 100;
  for (auto* p : m.parameters())
    if (p->name.ends_with(".w_merge") || p->name.ends_with(".bias") || p->name.ends_with(".beta"))
      randomize(*p, s++, 0.1);
  std::set<std::string> live;
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    m.zero_grad();
    ModelTape<double> tape;
    const Tensor<double> logits = m.forward_image(random_tensor({32, 32, 3}, 10 + trial), {}, &tape);
    const std::vector<int> label{int(trial % 10)};
    const auto ce = cross_entropy(logits.reshaped({1, 10}), label);
    m.backward_image(tape, ce.grad.reshaped({10}));
    for (auto* p : m.parameters())
      for (double g : p->grad.data())
        if (g != 0.0) {
          live.insert(p->name);
          break;
        }
  }
  for (auto* p : m.parameters()) EXPECT_TRUE(live.count(p->name)) << p->name;
}

TEST(ModelConfigText, RoundTrip) {
  for (const auto& name : preset_names()) {
    const ModelConfig cfg = preset(name);
    const ModelConfig back = model_config_from(parse_key_values(serialize_model_config(cfg)));
    EXPECT_EQ(back, cfg) << name;
  }
  ModelConfig custom = preset("tiny-desk");
  custom.drop_path = 0.123456789;
  custom.rounding = Rounding::Bilinear;
  custom.stages[1].a_max = 5;
  EXPECT_EQ(model_config_from(parse_key_values(serialize_model_config(custom))), custom);
}

TEST(ModelConfigText, OverridesAndErrors) {
  const ModelConfig c = model_config_from(parse_key_values("preset = B1\na_max = 2\nstage4 = depth=1\n"));
  EXPECT_EQ(c.stages[0].a_max, 2u);
  EXPECT_EQ(c.stages[3].depth, 1u);
  EXPECT_EQ(c.stages[2].channels, 320u);
  EXPECT_THROW(model_config_from(parse_key_values("stage1 = stride=3")), ConfigError);
  EXPECT_THROW(model_config_from(parse_key_values("partitions = 3")), ConfigError);
  EXPECT_THROW(model_config_from(parse_key_values("num_classes = -1")), ConfigError);
  EXPECT_THROW(model_config_from(parse_key_values("drop_path = 1.0")), ConfigError);
  EXPECT_THROW(model_config_from(parse_key_values("stage2 = width=3")), ConfigError);
  EXPECT_THROW(parse_key_values("a = 1\na = 2"), ConfigError);
  EXPECT_THROW(parse_key_values("nothing here"), ConfigError);
  EXPECT_THROW(model_config_from(parse_key_values("preset = nope")), std::out_of_range);
}
