#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "pvmlab/optim.h"
#include "pvmlab/params.h"

using namespace pvmlab;

namespace {

void quadratic_grad(Tensor& x, double target) {
  auto g = x.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (x.at(i) - target);
}

}  // namespace

TEST(Adam, FirstStepMovesEachCoordinateByLr) {
  ParameterStore p;
  Tensor& x = p.add("x", Tensor({3}, {1.0, -2.0, 10.0}, true));
  quadratic_grad(x, 0.0);
  Adam adam(AdamConfig{.lr = 0.1, .clip_norm = 0.0});
  adam.step(p, 0.1);
  EXPECT_NEAR(x.at(0), 0.9, 1e-6);
  EXPECT_NEAR(x.at(1), -1.9, 1e-6);
  EXPECT_NEAR(x.at(2), 9.9, 1e-6);
  EXPECT_EQ(adam.steps_taken(), 1u);
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Adam, ConvergesOnQuadratic) {
  ParameterStore p;
  Tensor& x = p.add("x", Tensor({4}, {5.0, -3.0, 0.5, 8.0}, true));
  Adam adam(AdamConfig{});
  for (int i = 0; i < 2000; ++i) {
    quadratic_grad(x, 1.5);
    adam.step(p, cosine_lr(i, 2000, 0.05));
  }
  for (double v : x.data()) EXPECT_NEAR(v, 1.5, 1e-3);
}

TEST(Adam, FrozenParametersUntouched) {
  ParameterStore p;
  Tensor& a = p.add("a", Tensor({2}, {1.0, 1.0}, true));
  Tensor& b = p.add("b", Tensor({2}, {1.0, 1.0}, true));
  quadratic_grad(a, 0.0);
  quadratic_grad(b, 0.0);
  p.set_trainable("b", false);
  Adam adam(AdamConfig{});
  adam.step(p, 0.1);
  EXPECT_LT(a.at(0), 1.0);
  EXPECT_EQ(b.at(0), 1.0);
  EXPECT_EQ(b.at(1), 1.0);
}

TEST(Adam, ClipReturnsPreClipNorm) {
  ParameterStore p;
  Tensor& x = p.add("x", Tensor({2}, {3.0, 4.0}, true));
  quadratic_grad(x, 0.0);  // grad (6, 8)
  EXPECT_DOUBLE_EQ(grad_norm(p), 10.0);
  Adam adam(AdamConfig{.clip_norm = 1.0});
  EXPECT_DOUBLE_EQ(adam.step(p, 0.01), 10.0);
}

TEST(CosineLr, Schedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1.0, 10), 0.1);
  EXPECT_DOUBLE_EQ(cosine_lr(9, 100, 1.0, 10), 1.0);
  EXPECT_DOUBLE_EQ(cosine_lr(10, 100, 1.0, 10), 1.0);
  EXPECT_NEAR(cosine_lr(55, 100, 1.0, 10), 0.5, 1e-12);
  EXPECT_NEAR(cosine_lr(100, 100, 1.0, 10, 0.1), 0.1, 1e-12);
  EXPECT_NEAR(cosine_lr(25, 100, 2.0), 1.0 + std::cos(std::numbers::pi * 0.25), 1e-12);
}
