#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace masrc;
using namespace masrc::mcd;
using testing_util::random_tensor;

TEST(ContextSimilarity, ShapeForWindow14) {
  Rng rng(1);
  const auto m = context_similarity(random_tensor(Shape{14, 5}, rng), random_tensor(Shape{14, 3}, rng));
  EXPECT_EQ(m.shape(), (Shape{7, 7}));
  for (auto v : m.values()) {
    EXPECT_GE(v, -2.0 - 1e-12);
    EXPECT_LE(v, 2.0 + 1e-12);
  }
}

TEST(ContextSimilarity, ConstantFeaturesGiveTwo) {
  const auto m = context_similarity(Tensor<double>(Shape{8, 3}, 0.4), Tensor<double>(Shape{8, 2}, -1.5));
  for (auto v : m.values()) EXPECT_NEAR(v, 2.0, 1e-12);
}

TEST(ContextSimilarity, OrthogonalHalvesGiveZero) {
  Tensor<double> x = Tensor<double>::matrix(8, 2);
  for (std::size_t i = 0; i < 8; ++i) x(i, i < 4 ? 0 : 1) = 1.0 + static_cast<double>(i);
  const auto m = context_similarity(x, x);
  for (auto v : m.values()) EXPECT_EQ(v, 0.0);
}

TEST(ContextSimilarity, RowsAreLeftHalfColumnsRightHalf) {
  Rng rng(2);
  const auto x = random_tensor(Shape{8, 4}, rng);
  const auto m = context_term(x);
  const auto full = cosine_matrix(x);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b) EXPECT_NEAR(m(a, b), full(a, 4 + b), 1e-12);
}

TEST(ContextSimilarity, FusionCommutesAndIsScaleInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 4 + 2 * rng.below(6);
    const auto lr = random_tensor(Shape{t, 5}, rng), sr = random_tensor(Shape{t, 5}, rng);
    const auto m = context_similarity(lr, sr);
    const auto swapped = context_similarity(sr, lr);
    auto lrs = lr, srs = sr;
    for (std::size_t i = 0; i < t; ++i) {
      const double a = std::exp(rng.uniform(-4.0, 4.0)), b = std::exp(rng.uniform(-4.0, 4.0));
      for (auto& v : lrs.row(i)) v *= a;
      for (auto& v : srs.row(i)) v *= b;
    }
    const auto scaled = context_similarity(lrs, srs);
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_NEAR(m[i], swapped[i], 1e-15);
      EXPECT_NEAR(m[i], scaled[i], 1e-6);
    }
  }
}

TEST(ContextSimilarity, ZeroRowRejected) {
  Tensor<double> x(Shape{8, 3}, 1.0);
  for (auto& v : x.row(5)) v = 0.0;
  EXPECT_THROW(context_term(x), ValidationError);
  EXPECT_THROW(context_term(Tensor<double>(Shape{7, 3}, 1.0)), ValidationError);
}

TEST(Detector, SpatialTraceSide7) {
  EXPECT_EQ(encoded_side(7), 1u);
  EXPECT_EQ(flattened_length(7), 64u);
  EXPECT_EQ(encoded_side(8), 2u);
  EXPECT_EQ(flattened_length(8), 256u);
  ParamStore<double> store;
  const auto p = McdParams::add(store, 7);
  EXPECT_EQ(store.value(p.fc1_weight).shape(), (Shape{128, 64}));
  McdCache<double> c;
  Rng rng(4);
  p.init(store, rng);
  encode_logit(store, p, random_tensor(Shape{7, 7}, rng), &c);
  EXPECT_EQ(c.conv_pre[0].shape(), (Shape{32, 7, 7}));
  EXPECT_EQ(c.conv_pre[1].shape(), (Shape{64, 7, 7}));
  EXPECT_EQ(c.pools[0].out.shape(), (Shape{64, 3, 3}));
  EXPECT_EQ(c.conv_pre[3].shape(), (Shape{64, 3, 3}));
  EXPECT_EQ(c.pools[1].out.shape(), (Shape{64, 1, 1}));
}

TEST(Detector, ZeroInputGivesHalf) {
  ParamStore<double> store;
  const auto p = McdParams::add(store, 7);
  Rng rng(5);
  p.init(store, rng);
  EXPECT_DOUBLE_EQ(encode_and_classify(store, p, Tensor<double>::matrix(7, 7)), 0.5);
}

TEST(Detector, SideBelowFourRejected) {
  ParamStore<double> store;
  EXPECT_THROW(McdParams::add(store, 3), ValidationError);
}

TEST(Detector, ProbabilityStrictlyInsideUnitInterval) {
  Rng rng(6);
  ParamStore<double> store;
  const auto p = McdParams::add(store, 4);
  p.init(store, rng);
  for (auto& v : store.value(p.fc2_bias).values()) v = 1e3;
  const double hi = encode_and_classify(store, p, random_tensor(Shape{4, 4}, rng));
  EXPECT_LT(hi, 1.0);
  for (auto& v : store.value(p.fc2_bias).values()) v = -1e3;
  const double lo = encode_and_classify(store, p, random_tensor(Shape{4, 4}, rng));
  EXPECT_GT(lo, 0.0);
}

class McdGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(McdGradients, BceOverAllParams) {
  Rng rng(GetParam());
  ParamStore<double> store;
  const auto p = McdParams::add(store, 7);
  p.init(store, rng);
  testing_util::jitter(store, rng, 0.05);
  const auto m = random_tensor(Shape{7, 7}, rng, -2.0, 2.0);
  const double y = static_cast<double>(GetParam() % 2);
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>* g, KinkTrace* t) {
    McdCache<double> c;
    const double z = encode_logit(s, p, m, &c, t);
    if (g) encode_backward(s, p, c, bce_logit_grad(z, y), *g);
    return bce_with_logit(z, y, t);
  };
  GradCheckOptions opt = testing_util::component_check();
  opt.max_entries_per_slot = 48;
  opt.sample_seed = GetParam();
  const auto report = grad_check(f, store, opt);
  EXPECT_EQ(report.slots.size(), 12u);
  for (const auto& s : report.slots) EXPECT_TRUE(s.passed) << s.name << " " << s.max_rel_error;
}

TEST_P(McdGradients, InputGradient) {
  Rng rng(GetParam() + 50);
  ParamStore<double> params;
  const auto p = McdParams::add(params, 5);
  p.init(params, rng);
  ParamStore<double> input;
  const auto ms = input.add("m", {5, 5});
  input.value(ms) = random_tensor(Shape{5, 5}, rng, -2.0, 2.0);
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>* g, KinkTrace* t) {
    McdCache<double> c;
    const double z = encode_logit(params, p, s.value(ms), &c, t);
    if (g) {
      auto scratch = params.make_grad_buffer();
      (*g)[ms] += encode_backward(params, p, c, 1.0, scratch);
    }
    return z;
  };
  EXPECT_TRUE(grad_check(f, input, testing_util::component_check()).passed());
}

TEST_P(McdGradients, ContextTermGradient) {
  Rng rng(GetParam() + 70);
  ParamStore<double> input;
  const auto xs = input.add("x", {8, 3});
  input.value(xs) = random_tensor(Shape{8, 3}, rng);
  const auto r = testing_util::make_readout(Shape{4, 4}, rng);
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>* g, KinkTrace*) {
    if (g) (*g)[xs] += context_term_backward(s.value(xs), r.weights);
    return r.value(context_term(s.value(xs)));
  };
  EXPECT_TRUE(grad_check(f, input, testing_util::component_check()).passed());
}

INSTANTIATE_TEST_SUITE_P(Seeds, McdGradients, ::testing::Range<std::uint64_t>(1, 6));
