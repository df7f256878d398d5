#include <gtest/gtest.h>

#include <cmath>

#include "phlearn/autodiff.hpp"
#include "phlearn/tensor.hpp"
#include "testing_util.hpp"

using namespace phlearn;

namespace {

// H(q, p) = 1/2 M^-1 p^2 + a (1 - cos q), scalars on the tape.
Tensor pendulum_energy(const Tensor& q, const Tensor& p, double m_inv, double a) {
  Tensor kinetic = scalar_mul(mul(p, p), 0.5 * m_inv);
  Tensor potential = scalar_mul(sub(ones(Shape{}), cos(q)), a);
  return add(kinetic, potential);
}

}  // namespace

TEST(Backward, SumOfSquares) {
  Tape tape;
  Tensor x = tape.leaf(vec({1.0, 2.0, 3.0}));
  Gradients g = backward(sum(mul(x, x)));
  Tensor gx = g.at(x);
  EXPECT_DOUBLE_EQ(gx.at(0), 2.0);
  EXPECT_DOUBLE_EQ(gx.at(1), 4.0);
  EXPECT_DOUBLE_EQ(gx.at(2), 6.0);
}

TEST(Backward, SinAtZero) {
  Tape tape;
  Tensor q = tape.leaf(scalar(0.0));
  Gradients g = backward(sin(q));
  EXPECT_DOUBLE_EQ(g.at(q).value(), 1.0);
}

TEST(Backward, PendulumEnergyGradients) {
  // H = 1.5 p^2 + 5 (1 - cos q) at (q, p) = (pi/2, 1): dH/dq = 5, dH/dp = 3.
  Tape tape;
  Tensor q = tape.leaf(scalar(M_PI / 2));
  Tensor p = tape.leaf(scalar(1.0));
  Gradients g = backward(pendulum_energy(q, p, 3.0, 5.0));
  EXPECT_NEAR(g.at(q).value(), 5.0, 1e-12);
  EXPECT_NEAR(g.at(p).value(), 3.0, 1e-12);
}

TEST(GradWrt, QuadraticMomentum) {
  // d/dp [ 1/2 M^-1 p^2 ] = M^-1 p = 6 at M^-1 = 3, p = 2.
  Tape tape;
  Tensor p = tape.leaf(scalar(2.0));
  Tensor h = scalar_mul(mul(p, p), 0.5 * 3.0);
  Tensor dh = grad_wrt(h, p);
  EXPECT_TRUE(dh.tracked());
  EXPECT_NEAR(dh.value(), 6.0, 1e-12);
}

TEST(GradWrt, UnreachableInputGivesZeros) {
  Tape tape;
  Tensor q = tape.leaf(scalar(0.7));
  Tensor p = tape.leaf(scalar(0.2));
  Tensor v = scalar_mul(sub(ones(Shape{}), cos(q)), 5.0);
  EXPECT_DOUBLE_EQ(grad_wrt(v, p).value(), 0.0);

  Tensor c = tape.leaf(scalar(3.0));
  EXPECT_DOUBLE_EQ(grad_wrt(c, q).value(), 0.0);  // constant leaf
}

TEST(GradWrt, ResultIsDifferentiable) {
  // g = d sin(q) / dq = cos(q); then d g / d q = -sin(q).
  Tape tape;
  Tensor q = tape.leaf(scalar(0.6));
  Tensor s = sin(q);
  Tensor ds = grad_wrt(s, q);
  EXPECT_NEAR(ds.value(), std::cos(0.6), 1e-12);
  Gradients g2 = backward(ds);
  EXPECT_NEAR(g2.at(q).value(), -std::sin(0.6), 1e-12);
}

TEST(GradWrt, MatchesBackwardOnComposite) {
  phlearn::Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> xs = phtest::random_values(rng, 4);
    Tape tape;
    Tensor x = tape.leaf(Shape{4}, xs);
    Tensor y = sum(mul(tanh(x), sin(x)));
    Tensor via_graph = grad_wrt(y, x);
    Gradients via_values = backward(y);
    for (int i = 0; i < 4; ++i)
      EXPECT_NEAR(via_graph.at(i), via_values.at(x).at(i), 1e-13);
  }
}

TEST(SecondOrder, ThroughMassInverseParameter) {
  // M^-1 = l^2 + eps; s = (dH/dp) * v with H = 1/2 M^-1 p^2.
  // ds/dl = 2 l p v, checked against finite differences through the
  // grad_wrt graph (rel err <= 1e-4 gate).
  const double p0 = 1.3, v0 = 0.8, eps = 0.01;

  auto eval = [&](const std::vector<double>& ls) {
    Tape tape;
    Tensor l = tape.leaf(scalar(ls[0]));
    Tensor p = tape.leaf(scalar(p0));
    Tensor m_inv = add(mul(l, l), full(Shape{}, eps));
    Tensor h = scalar_mul(mul(mul(p, p), m_inv), 0.5);
    Tensor dhdp = grad_wrt(h, p);
    return scalar_mul(dhdp, v0).value();
  };

  std::vector<double> l0 = {0.9};
  Tape tape;
  Tensor l = tape.leaf(scalar(l0[0]));
  Tensor p = tape.leaf(scalar(p0));
  Tensor m_inv = add(mul(l, l), full(Shape{}, eps));
  Tensor h = scalar_mul(mul(mul(p, p), m_inv), 0.5);
  Tensor dhdp = grad_wrt(h, p);
  Tensor s = scalar_mul(dhdp, v0);

  Gradients g = backward(s);
  const double analytic = g.at(l).value();
  EXPECT_NEAR(analytic, 2.0 * l0[0] * p0 * v0, 1e-10);

  const double fd = phtest::fd_gradient(eval, l0)[0];
  EXPECT_LE(phtest::max_rel_err({analytic}, {fd}), 1e-4);
}
