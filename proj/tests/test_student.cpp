#include <gtest/gtest.h>

#include <cmath>

#include "pedkd/distillation.hpp"
#include "pedkd/error.hpp"
#include "pedkd/gradcheck.hpp"
#include "pedkd/rng.hpp"
#include "pedkd/student.hpp"

using namespace pedkd;

namespace {

StudentConfig tiny(Backbone b) {
  StudentConfig c;
  c.backbone = b;
  c.height = 8;
  c.width = 8;
  c.embed_dim = 6;
  c.num_classes = 5;
  c.conv_channels = {3, 4, 5};
  c.token_dim = 8;
  c.heads = 2;
  c.blocks = 2;
  return c;
}

Tensor random_images(std::size_t b, std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor t({b, 3, h, w});
  Rng rng(seed);
  for (auto& v : t.data()) v = rng.uniform(0.0, 1.0);
  return t;
}

Tensor logits_of(StudentEncoder& enc, const Tensor& x) {
  Graph g;
  return g.value(enc.forward(g, g.constant(x), ParamMode::frozen).logits);
}

class Backbones : public ::testing::TestWithParam<Backbone> {};

}  // namespace

TEST_P(Backbones, ZeroInitHeadGivesHalfProbabilities) {
  StudentConfig c = tiny(GetParam());
  c.zero_init_head_output = true;
  StudentEncoder enc(c, 3);
  Graph g;
  auto out = enc.forward(g, g.constant(random_images(2, 8, 8, 1)), ParamMode::frozen);
  const Tensor& p = g.value(g.sigmoid(out.logits));
  ASSERT_EQ(p.shape(), Shape({2, 5}));
  for (double v : g.value(out.logits).data()) EXPECT_EQ(v, 0.0);
  for (double v : p.data()) EXPECT_EQ(v, 0.5);
}

TEST_P(Backbones, ForwardIsBitIdentical) {
  StudentEncoder a(tiny(GetParam()), 11), b(tiny(GetParam()), 11);
  const Tensor x = random_images(3, 8, 8, 2);
  const Tensor la = logits_of(a, x);
  EXPECT_EQ(la, logits_of(a, x));
  EXPECT_EQ(la, logits_of(b, x));
}

TEST_P(Backbones, BceGradientMatchesFiniteDifferences) {
  StudentEncoder enc(tiny(GetParam()), 5);
  const Tensor x = random_images(2, 8, 8, 3);
  Tensor y({2, 5});
  for (std::size_t i = 0; i < y.numel(); i += 2) y[i] = 1.0;
  auto r = grad_check(
      [&](Graph& g) { return bce_loss(g, enc.forward(g, g.constant(x), ParamMode::trainable).logits, y); },
      enc.parameters(), 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_EQ(r.coords_checked, enc.parameter_count());
}

TEST_P(Backbones, ActivationsFiniteOnUnitRangeInputs) {
  StudentConfig c;
  c.backbone = GetParam();
  c.height = 32;
  c.width = 32;
  StudentEncoder enc(c, 9);
  for (double fill : {0.0, 1.0}) {
    Tensor x({1, 3, 32, 32}, fill);
    Graph g;
    auto out = enc.forward(g, g.constant(x), ParamMode::frozen);
    for (double v : g.value(out.embedding).data()) EXPECT_TRUE(std::isfinite(v));
    for (double v : g.value(out.logits).data()) EXPECT_TRUE(std::isfinite(v));
  }
  for (double v : enc.embed_values(random_images(2, 32, 32, 4)).data()) EXPECT_TRUE(std::isfinite(v));
}

TEST_P(Backbones, ShapeMismatchRejected) {
  StudentEncoder enc(tiny(GetParam()), 1);
  Graph g;
  EXPECT_THROW(enc.forward(g, g.constant(random_images(1, 16, 16, 1)), ParamMode::frozen), ContractError);
  EXPECT_THROW(enc.forward(g, g.constant(Tensor({3, 8, 8})), ParamMode::frozen), ContractError);
}

namespace pedkd {
void PrintTo(Backbone b, std::ostream* os) { *os << backbone_name(b); }
}  // namespace pedkd

INSTANTIATE_TEST_SUITE_P(Student, Backbones, ::testing::Values(Backbone::conv, Backbone::attention),
                         [](const auto& info) { return backbone_name(info.param); });

TEST(Student, DefaultParameterCountsWithinFactorTwo) {
  StudentConfig c;
  c.height = 32;
  c.width = 32;
  c.backbone = Backbone::conv;
  const double conv = static_cast<double>(StudentEncoder(c, 1).parameter_count());
  c.backbone = Backbone::attention;
  const double attn = static_cast<double>(StudentEncoder(c, 1).parameter_count());
  EXPECT_LE(std::max(conv, attn) / std::min(conv, attn), 2.0);
}

TEST(Student, EmbeddingAndLogitShapes) {
  StudentEncoder enc(tiny(Backbone::conv), 1);
  Graph g;
  auto out = enc.forward(g, g.constant(random_images(4, 8, 8, 1)), ParamMode::frozen);
  EXPECT_EQ(g.shape(out.embedding), Shape({4, 6}));
  EXPECT_EQ(g.shape(out.logits), Shape({4, 5}));
}

TEST(Student, BackboneNamesRoundTrip) {
  for (auto b : {Backbone::conv, Backbone::attention}) EXPECT_EQ(parse_backbone(backbone_name(b)), b);
  EXPECT_THROW(parse_backbone("resnet"), ContractError);
}

TEST(Student, InvalidConfigRejected) {
  StudentConfig c = tiny(Backbone::attention);
  c.patch = 3;
  EXPECT_THROW(StudentEncoder(c, 1), ContractError);
  c = tiny(Backbone::conv);
  c.num_classes = 0;
  EXPECT_THROW(StudentEncoder(c, 1), ContractError);
}
