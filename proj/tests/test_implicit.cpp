#include "scenarios.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/implicit_grad.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace steadyop;
using implicit::BackwardKind;
using implicit::BackwardMode;

namespace {

BackwardMode phantom(double tau, int s) { return {BackwardKind::Phantom, {tau, s}}; }
const BackwardMode kExact{BackwardKind::Exact, {}};
const BackwardMode kJfree{BackwardKind::JacobianFree, {}};

double rel_diff(const ad::GradientMap& a, const ad::GradientMap& b) {
  double num = 0.0, den = 0.0;
  for (const auto& [n, t] : b) {
    const Tensor& x = a.at(n);
    for (Index i = 0; i < t.size(); ++i) {
      num += (x[i] - t[i]) * (x[i] - t[i]);
      den += t[i] * t[i];
    }
  }
  return std::sqrt(num / den);
}

struct DeqCase {
  fno::Model model;
  Tensor g, z_star, grad_z;
  implicit::BlockBuilder block;
};

DeqCase deq_case(std::uint64_t seed) {
  DeqCase c;
  c.model = scenario::contractive_deq(seed, 4, 3, 0.5);
  auto rng = make_rng(seed, 77);
  c.g = oracle::random_field(rng, {8, 8, 4});
  c.grad_z = oracle::random_field(rng, {8, 8, 4});
  const fno::Params* params = &c.model.params;
  const Tensor gv = c.g;
  c.block = [params, gv](ad::Graph& g, ad::Var z) {
    return fno::fno_block(z, g.constant(gv), fno::bind_block(g, *params, 0, 3));
  };
  Tensor z({8, 8, 4});
  for (int i = 0; i < 200; ++i) z = fno::block_value(z, c.g, c.model.params, 0, 3);
  c.z_star = z;
  return c;
}

}  // namespace

TEST(ImplicitScalar, ExactJfreeAndPhantomHandValues) {
  EXPECT_NEAR(scenario::scalar_grad(kExact, 0.5), 2.0, 1e-12);
  EXPECT_EQ(scenario::scalar_grad(kJfree, 0.5), 1.0);
  // d_{k+1} = (1 - tau + tau a) d_k + tau, d_0 = 0: 0.5, 0.875, 1.15625.
  EXPECT_DOUBLE_EQ(scenario::scalar_grad(phantom(0.5, 1), 0.5), 0.5);
  EXPECT_DOUBLE_EQ(scenario::scalar_grad(phantom(0.5, 3), 0.5), 1.15625);
}

TEST(ImplicitScalar, ConstantBlockHasNoFeedback) {
  // G(z) = theta: J = 0 and every mode agrees with one application.
  for (const auto& m : {kExact, kJfree, phantom(1.0, 1)}) EXPECT_DOUBLE_EQ(scenario::scalar_grad(m, 0.0), 1.0);
}

TEST(ImplicitScalar, PhantomConvergesToExact) {
  double prev = 1.0;
  for (int s : {1, 5, 20, 50}) {
    const double err = std::abs(scenario::scalar_grad(phantom(0.5, s), 0.5) - 2.0) / 2.0;
    EXPECT_LT(err, prev) << s;
    prev = err;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(Implicit, ZeroLossGradientGivesZeroGradients) {
  const DeqCase c = deq_case(1);
  const Tensor zero(c.z_star.shape());
  for (const auto& m : {kExact, kJfree, phantom(0.5, 2)}) {
    const auto grads = implicit::implicit_grad(m, c.block, c.z_star, zero);
    for (const auto& [n, t] : grads) EXPECT_EQ(norm(t), 0.0) << n;
  }
}

TEST(Implicit, PhantomOneStepIsJacobianFreeBitwise) {
  const DeqCase c = deq_case(2);
  const auto a = implicit::implicit_grad(phantom(1.0, 1), c.block, c.z_star, c.grad_z);
  const auto b = implicit::implicit_grad(kJfree, c.block, c.z_star, c.grad_z);
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [n, t] : b) EXPECT_TRUE(a.at(n) == t) << n;
}

TEST(Implicit, PhantomErrorDecreasesInUnrollLength) {
  const DeqCase c = deq_case(3);
  implicit::AdjointConfig cfg;
  cfg.tol = 1e-13;
  const auto exact = implicit::implicit_grad(kExact, c.block, c.z_star, c.grad_z, cfg);
  double prev = 1e300;
  for (int s : {1, 5, 20, 50}) {
    const double err = rel_diff(implicit::implicit_grad(phantom(0.5, s), c.block, c.z_star, c.grad_z), exact);
    EXPECT_LT(err, prev) << s;
    prev = err;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(Implicit, ExactSatisfiesAdjointEquation) {
  // Independent check: the exact gradient equals the sum over k of
  // jfree gradients propagated through k Jacobian transposes, i.e. a long
  // undamped unroll.
  const DeqCase c = deq_case(4);
  implicit::AdjointConfig cfg;
  cfg.tol = 1e-13;
  implicit::AdjointStats st;
  const auto exact = implicit::exact_implicit_grad(c.block, c.z_star, c.grad_z, cfg, &st);
  EXPECT_LT(st.residual, 1e-13);
  EXPECT_LT(rel_diff(implicit::implicit_grad(phantom(1.0, 80), c.block, c.z_star, c.grad_z), exact), 1e-10);
}

TEST(Implicit, AllModesFinite) {
  const DeqCase c = deq_case(5);
  for (const auto& m : {kExact, kJfree, phantom(0.8, 3)})
    for (const auto& [n, t] : implicit::implicit_grad(m, c.block, c.z_star, c.grad_z)) EXPECT_TRUE(t.all_finite()) << n;
}

TEST(Implicit, ExpansiveBlockIsIllConditioned) {
  // z = 2 z + theta: the adjoint fixed-point iteration diverges and
  // (1 - 2) w = 1 is solvable, so GMRES recovers dz/dtheta = -1.
  EXPECT_NEAR(scenario::scalar_grad(kExact, 2.0), -1.0, 1e-10);
  // z = z + theta: I - J is singular.
  EXPECT_THROW(scenario::scalar_grad(kExact, 1.0), NumericalError);
}

TEST(Implicit, ParseBackwardModes) {
  EXPECT_EQ(implicit::parse_backward("exact").kind, BackwardKind::Exact);
  EXPECT_EQ(implicit::parse_backward("jfree").kind, BackwardKind::JacobianFree);
  const auto p = implicit::parse_backward("phantom(0.8,3)");
  EXPECT_EQ(p.kind, BackwardKind::Phantom);
  EXPECT_DOUBLE_EQ(p.phantom.tau, 0.8);
  EXPECT_EQ(p.phantom.steps, 3);
  EXPECT_EQ(implicit::to_string(p), "phantom(0.8,3)");
  EXPECT_THROW(implicit::parse_backward("phantom(0,3)"), DomainError);
  EXPECT_THROW(implicit::parse_backward("phantom(0.5,0)"), DomainError);
  EXPECT_THROW(implicit::parse_backward("broyden"), DomainError);
}

TEST(MemoryContract, IndependentOfForwardSteps) {
  const fno::Model m = scenario::contractive_deq(6);
  const Tensor f = scenario::random_input(6, 16);
  const Index block = scenario::block_activations(m, f);
  ASSERT_GT(block, 0);
  for (const auto& mode : {kExact, kJfree}) {
    const Index p8 = scenario::deq_backward_peak(m, f, 8, mode);
    const Index p32 = scenario::deq_backward_peak(m, f, 32, mode);
    EXPECT_LE(std::abs(p32 - p8), block) << implicit::to_string(mode);
  }
  // Phantom keeps S applications alive.
  const Index s1 = scenario::deq_backward_peak(m, f, 8, phantom(0.5, 1));
  const Index s4 = scenario::deq_backward_peak(m, f, 8, phantom(0.5, 4));
  EXPECT_GE(s4 - s1, 3 * block);
  EXPECT_LE(s4 - s1, 3 * block + 3 * 3 * f.dim(0) * f.dim(0) * m.arch.dv);
}
