#include "scenarios.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/fixedpoint.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace steadyop;
namespace fp = steadyop::fixedpoint;
using scenario::tight;

namespace {

fp::Vec scalar(double x) { return fp::Vec::Constant(1, x); }

const fp::Map kIdentity = [](const fp::Vec& z) { return z; };
const fp::Map kHalfPlusOne = [](const fp::Vec& z) -> fp::Vec { return (0.5 * z.array() + 1.0).matrix(); };
const fp::Map kCos = [](const fp::Vec& z) -> fp::Vec { return z.array().cos().matrix(); };

// Dottie number by 2000 plain iterations in long double.
double dottie() {
  long double x = 0.0L;
  for (int i = 0; i < 2000; ++i) x = std::cos(x);
  return static_cast<double>(x);
}

}  // namespace

TEST(Picard, IdentityAndGeometric) {
  const fp::Vec z0 = scalar(3.0);
  const auto id = fp::picard(kIdentity, z0, tight(10));
  EXPECT_TRUE(id.trace.converged);
  EXPECT_EQ(id.trace.steps, 1);
  EXPECT_EQ(id.trace.abs_residual[0], 0.0);
  EXPECT_EQ(id.z(0), 3.0);

  const auto r = fp::picard(kHalfPlusOne, scalar(0.0), tight(100, 1e-12));
  EXPECT_NEAR(r.z(0), 2.0, 1e-12);
  for (std::size_t t = 1; t < r.trace.abs_residual.size(); ++t)
    EXPECT_DOUBLE_EQ(r.trace.abs_residual[t], 0.5 * r.trace.abs_residual[t - 1]);
}

TEST(Picard, CosineFixedPoint) {
  const auto r = fp::picard(kCos, scalar(0.0), tight(200, 1e-12));
  EXPECT_NEAR(r.z(0), dottie(), 1e-9);
  EXPECT_NEAR(r.z(0), 0.7390851332, 1e-9);
}

TEST(Picard, ContractionResidualMonotone) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = scenario::affine_contraction(s);
    const auto r = fp::picard(a.map(), fp::Vec::Zero(16), tight(300, 1e-13));
    // Symmetric A: ||A e|| <= 0.9 ||e||.
    for (std::size_t t = 1; t < r.trace.abs_residual.size(); ++t)
      EXPECT_LE(r.trace.abs_residual[t], r.trace.abs_residual[t - 1]) << s;
  }
}

TEST(Solvers, NonFiniteIsDivergence) {
  const fp::Map blow = [](const fp::Vec& z) -> fp::Vec { return (z.array() * 1e300 + 1e300).matrix(); };
  EXPECT_THROW(fp::picard(blow, scalar(1.0), tight(10)), NumericalError);
  EXPECT_THROW(fp::anderson(blow, scalar(1.0), tight(10)), NumericalError);
  EXPECT_THROW(fp::broyden(blow, scalar(1.0), tight(10)), NumericalError);
  fp::SolverConfig bad;
  bad.max_steps = 0;
  EXPECT_THROW(fp::picard(kIdentity, scalar(0.0), bad), DomainError);
}

TEST(Anderson, IdentityAndCosine) {
  const auto id = fp::anderson(kIdentity, scalar(-1.0), tight(10));
  EXPECT_TRUE(id.trace.converged);
  EXPECT_EQ(id.trace.steps, 1);
  const auto c = fp::anderson(kCos, scalar(0.0), tight(50, 1e-13));
  EXPECT_NEAR(c.z(0), dottie(), 1e-10);
}

TEST(Anderson, SolvesAffineFamily) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto a = scenario::affine_contraction(s);
    const auto r = fp::anderson(a.map(), fp::Vec::Zero(16), tight(200, 1e-12));
    ASSERT_TRUE(r.trace.converged);
    EXPECT_LT((r.z - a.solution()).norm(), 1e-10);
  }
}

TEST(Anderson, AtMostHalfPicardStepsOnAffineFamily) {
  int wins = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto race = scenario::affine_race(s);
    ASSERT_TRUE(race.both_converged) << s;
    if (2 * race.anderson_steps <= race.picard_steps) ++wins;
  }
  EXPECT_GE(wins, 45);
}

TEST(Anderson, BestSoFarBeatsPicardAtEqualBudget) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = scenario::affine_contraction(s);
    for (int budget : {2, 4, 8, 16, 32}) {
      const auto p = fp::picard(a.map(), fp::Vec::Zero(16), tight(budget, 1e-300));
      const auto q = fp::anderson(a.map(), fp::Vec::Zero(16), tight(budget, 1e-300));
      EXPECT_LE(q.trace.best_abs(), p.trace.best_abs() * (1.0 + 1e-12)) << "seed " << s << " budget " << budget;
    }
  }
}

TEST(Anderson, ReturnsLowestResidualIterate) {
  const auto a = scenario::affine_contraction(3);
  const auto r = fp::anderson(a.map(), fp::Vec::Zero(16), tight(6, 1e-300));
  EXPECT_DOUBLE_EQ((a.map()(r.z) - r.z).norm(), r.trace.best_abs());
}

TEST(Broyden, LinearSystem) {
  const auto a = scenario::affine_contraction(7, 8, 0.9);
  // At most 2 * dim updates on a linear map; the trace also holds z0.
  const auto r = fp::broyden(a.map(), fp::Vec::Zero(8), tight(17, 1e-10));
  EXPECT_TRUE(r.trace.converged);
  EXPECT_LE(r.trace.steps - 1, 16);
  EXPECT_LT((r.z - a.solution()).norm(), 1e-9);
}

TEST(Broyden, IdentityAndCosine) {
  EXPECT_TRUE(fp::broyden(kIdentity, scalar(2.0), tight(5)).trace.converged);
  const auto c = fp::broyden(kCos, scalar(0.0), tight(50, 1e-13));
  EXPECT_NEAR(c.z(0), dottie(), 1e-10);
}

TEST(Solvers, BitwiseDeterministic) {
  const auto a = scenario::affine_contraction(11);
  for (auto kind : {fp::SolverKind::Picard, fp::SolverKind::Anderson, fp::SolverKind::Broyden}) {
    const auto r1 = fp::solve(kind, a.map(), fp::Vec::Zero(16), tight(40));
    const auto r2 = fp::solve(kind, a.map(), fp::Vec::Zero(16), tight(40));
    EXPECT_TRUE(r1.z == r2.z);
    EXPECT_EQ(r1.trace.abs_residual, r2.trace.abs_residual);
  }
}

TEST(Gmres, MatchesDirectSolve) {
  auto rng = make_rng(40);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(30, 30) * 6.0;
  for (Index i = 0; i < A.size(); ++i) A.data()[i] += nd(rng);
  Eigen::VectorXd b(30);
  for (Index i = 0; i < 30; ++i) b(i) = nd(rng);
  const fp::Map op = [&](const fp::Vec& x) -> fp::Vec { return A * x; };
  const auto r = fp::gmres(op, b, fp::Vec::Zero(30), 1e-13, 200, 10);
  EXPECT_TRUE(r.converged);
  EXPECT_LT((r.x - A.partialPivLu().solve(b)).norm(), 1e-10);
  const auto zero = fp::gmres(op, fp::Vec::Zero(30), fp::Vec::Zero(30), 1e-12, 10);
  EXPECT_EQ(zero.x.norm(), 0.0);
}

TEST(Newton, ScalarCubicSquaresError) {
  const fp::Map L = [](const fp::Vec& u) -> fp::Vec { return (u.array() + u.array().cube()).matrix(); };
  const fp::Derivative dL = [](const fp::Vec& u, const fp::Vec& p) -> fp::Vec {
    return ((1.0 + 3.0 * u.array().square()) * p.array()).matrix();
  };
  fp::NewtonConfig cfg;
  cfg.tol = 1e-14;
  const auto r = fp::newton(L, dL, scalar(2.0), scalar(0.5), cfg);
  EXPECT_NEAR(r.z(0), 1.0, 1e-14);
  // Hand iteration of u <- u - (u + u^3 - 2) / (1 + 3 u^2).
  long double u = 0.5L;
  std::vector<double> err;
  for (int t = 0; t < 5; ++t) {
    u -= (u + u * u * u - 2.0L) / (1.0L + 3.0L * u * u);
    err.push_back(static_cast<double>(std::fabs(u - 1.0L)));
  }
  EXPECT_LT(err[3], 1e-5);
  EXPECT_LT(err[4], 1e-10);
  for (int t = 1; t < 4; ++t) EXPECT_LT(err[static_cast<std::size_t>(t)], 2.0 * err[static_cast<std::size_t>(t - 1)] * err[static_cast<std::size_t>(t - 1)]);
  EXPECT_LE(r.trace.abs_residual.size(), 7u);
}

TEST(Newton, LinearConvergesInOneStep) {
  const auto a = scenario::affine_contraction(41, 10);
  const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(10, 10) - a.A;
  const fp::Map L = [&](const fp::Vec& u) -> fp::Vec { return M * u; };
  const fp::Derivative dL = [&](const fp::Vec&, const fp::Vec& p) -> fp::Vec { return M * p; };
  fp::NewtonConfig cfg;
  cfg.tol = 1e-10;
  const auto r = fp::newton(L, dL, a.b, fp::Vec::Zero(10), cfg);
  EXPECT_TRUE(r.trace.converged);
  EXPECT_EQ(r.trace.abs_residual.size(), 2u);
  EXPECT_LT((r.z - a.solution()).norm(), 1e-10);
}

TEST(Newton, SingularDerivativeIsAnError) {
  const fp::Map L = [](const fp::Vec& u) -> fp::Vec { return u.array().square().matrix(); };
  const fp::Derivative dL = [](const fp::Vec& u, const fp::Vec& p) -> fp::Vec {
    return (2.0 * u.array() * p.array()).matrix();
  };
  EXPECT_THROW(fp::newton(L, dL, scalar(1.0), scalar(0.0), {}), NumericalError);
}

TEST(Newton, CubicEllipticQuadraticConvergence) {
  double cmin = std::numeric_limits<double>::infinity(), cmax = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto run = scenario::newton_cubic(s);
    EXPECT_TRUE(run.converged) << s;
    EXPECT_LE(run.initial_residual, 0.5);
    EXPECT_LE(run.iterations, 6) << s;
    EXPECT_LE(run.fitted_c, run.bound_c) << s;
    cmin = std::min(cmin, run.fitted_c);
    cmax = std::max(cmax, run.fitted_c);
  }
  EXPECT_GT(cmin, 0.0);
  EXPECT_LE(cmax / cmin, 10.0);
}
