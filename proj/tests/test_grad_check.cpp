#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace masrc;

TEST(GradCheck, QuadraticIsExact) {
  ParamStore<double> p;
  const auto th = p.add("theta", {1});
  p.value(th)[0] = 3.0;
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>* g, KinkTrace*) {
    const double v = s.value(th)[0];
    if (g) (*g)[th][0] = 2.0 * v;
    return v * v;
  };
  const auto r = grad_check(f, p);
  ASSERT_EQ(r.slots.size(), 1u);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.slots[0].checked, 1u);
  EXPECT_NEAR(r.slots[0].worst_numeric, 6.0, 1e-9);
  EXPECT_LT(r.max_rel_error(), 1e-9);
  EXPECT_EQ(p.value(th)[0], 3.0);
}

TEST(GradCheck, ReluAtExactZeroIsExcluded) {
  ParamStore<double> p;
  const auto x = p.add("x", {3});
  p.value(x) = Tensor<double>(Shape{3}, {0.0, 0.5, -0.7});
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>* g, KinkTrace* t) {
    const auto y = relu(s.value(x), t);
    if (g) (*g)[x] += relu_backward(s.value(x), Tensor<double>(Shape{3}, 1.0));
    return y[0] + y[1] + y[2];
  };
  GradCheckOptions opt;
  opt.directional = false;
  const auto r = grad_check(f, p, opt);
  EXPECT_EQ(r.slots[0].excluded, 1u);
  EXPECT_EQ(r.slots[0].checked, 2u);
  EXPECT_TRUE(r.passed());
}

TEST(GradCheck, DetectsWrongGradient) {
  ParamStore<double> p;
  const auto th = p.add("theta", {2});
  p.value(th) = Tensor<double>(Shape{2}, {1.0, 2.0});
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>* g, KinkTrace*) {
    const auto& v = s.value(th);
    if (g) {
      (*g)[th][0] = 2.0 * v[0];
      (*g)[th][1] = 1.01 * 3.0 * v[1] * v[1];  // 1% off
    }
    return v[0] * v[0] + v[1] * v[1] * v[1];
  };
  const auto r = grad_check(f, p);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.slots[0].max_rel_error, 1e-3);
}

TEST(GradCheck, NonFiniteObjectiveThrows) {
  ParamStore<double> p;
  const auto th = p.add("theta", {1});
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>*, KinkTrace*) {
    return std::log(s.value(th)[0]);  // log(0)
  };
  EXPECT_THROW(grad_check(f, p), NumericError);
}

TEST(GradCheck, SamplingLimitsCheckedEntries) {
  Rng rng(3);
  ParamStore<double> p;
  const auto w = p.add("w", {40});
  p.value(w) = testing_util::random_tensor(Shape{40}, rng);
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>* g, KinkTrace*) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 40; ++i) {
      const double v = s.value(w)[i];
      acc += std::sin(v) * static_cast<double>(i + 1);
      if (g) (*g)[w][i] = std::cos(v) * static_cast<double>(i + 1);
    }
    return acc;
  };
  GradCheckOptions opt;
  opt.max_entries_per_slot = 7;
  const auto r = grad_check(f, p, opt);
  EXPECT_EQ(r.slots[0].checked, 7u);
  EXPECT_TRUE(r.slots[0].directional_checked);
  EXPECT_TRUE(r.passed());
}

TEST(GradCheck, DirectionalCatchesErrorOutsideSample) {
  ParamStore<double> p;
  const auto w = p.add("w", {50});
  p.value(w).fill(0.3);
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>* g, KinkTrace*) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
      acc += 0.5 * s.value(w)[i] * s.value(w)[i];
      if (g) (*g)[w][i] = s.value(w)[i];
    }
    if (g) {
      for (std::size_t i = 0; i < 50; ++i) (*g)[w][i] *= 3.0;  // wrong everywhere
    }
    return acc;
  };
  GradCheckOptions opt;
  opt.max_entries_per_slot = 1;
  const auto r = grad_check(f, p, opt);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.slots[0].directional_rel_error, 0.5);
}
