#pragma once

// Residual operators and classical solvers for the two data-generating PDEs.
//
// Darcy: -div(a grad u) = f on the unit square with u = 0 on the boundary.
// Fields are [n, n] node values including the boundary, h = 1/(n - 1).
//
// Navier-Stokes (vorticity form) on the 2*pi torus, fields [n, n]:
//   d_t w + u . grad w = nu lap w + g,  u = (-d_2 psi, d_1 psi),  lap psi = w.

#include "steadyop/tensor.hpp"

#include <utility>

namespace steadyop::pde {

// ---- Darcy -----------------------------------------------------------------

struct DarcyProblem {
  Tensor a;  // coefficient, strictly positive
  Tensor f;  // forcing
};

/// Throws DimensionError on shape mismatch, DomainError when min(a) <= 0.
void check_darcy(const DarcyProblem& p);

/// Five-point flux form of -div(a grad u) at interior nodes with harmonic
/// face averages of a; boundary entries are zero. u is read as zero on the
/// boundary.
Tensor darcy_apply(const Tensor& a, const Tensor& u);
/// darcy_apply(a, u) - f on the interior, zero on the boundary.
Tensor darcy_residual(const DarcyProblem& p, const Tensor& u);

struct CgStats {
  int iterations = 0;
  double rel_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradients on the interior unknowns until
/// ||f - A u|| <= tol ||f||. Throws ConvergenceError after `max_iters`
/// (default: 4 n^2).
Tensor darcy_solve(const DarcyProblem& p, double tol, int max_iters = 0, CgStats* stats = nullptr);

// ---- Navier-Stokes ----------------------------------------------------------

/// Velocity (u1, u2) of a zero-mean vorticity field; curl u = w, div u = 0.
std::pair<Tensor, Tensor> velocity_from_vorticity(const Tensor& omega);

/// Scalar curl d_1 v2 - d_2 v1 and divergence d_1 v1 + d_2 v2, spectrally.
Tensor curl(const Tensor& v1, const Tensor& v2);
Tensor divergence(const Tensor& v1, const Tensor& v2);

/// u . grad w for the velocity induced by w itself.
Tensor advection(const Tensor& omega);

/// Forcing of the time-dependent stepper, curl of sin(5 x1) e2 = 5 cos(5 x1).
Tensor kolmogorov_forcing(Index n);

struct StepInfo {
  double cfl = 0.0;  // max|u| dt / h
};

/// One integrating-factor Heun step with 2/3-rule dealiasing of the
/// nonlinear term. Logs a warning when the CFL number exceeds 1.
Tensor ns_step(const Tensor& omega, double nu, const Tensor& forcing, double dt, StepInfo* info = nullptr);

/// f = u . grad w - nu lap w, the forcing for which w is steady.
Tensor ns_force_from_solution(const Tensor& omega, double nu);

/// u . grad w - nu lap w - f.
Tensor ns_residual(const Tensor& omega, double nu, const Tensor& f);

}  // namespace steadyop::pde
