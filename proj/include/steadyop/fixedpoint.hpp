#pragma once

// Fixed-point and root solvers on flat vectors. Every solver records the
// residual of each iterate it evaluates, in evaluation order.

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

namespace steadyop::fixedpoint {

using Vec = Eigen::VectorXd;
using Map = std::function<Vec(const Vec&)>;

enum class SolverKind { Picard, Anderson, Broyden };

SolverKind parse_solver(const std::string& name);
std::string to_string(SolverKind kind);

struct SolverConfig {
  int max_steps = 32;
  double tol_abs = 1e-12;
  double tol_rel = 1e-10;
  int anderson_memory = 5;
  double anderson_damping = 1.0;
  /// Tikhonov weight of the Anderson least-squares, relative to the largest
  /// diagonal entry of the residual Gram matrix.
  double anderson_reg = 1e-8;
  int broyden_memory = 64;
  /// Step length of the Picard fallback Broyden takes on a stalled step.
  double broyden_fallback_damping = 0.5;
};

struct SolverTrace {
  /// ||G(z_t) - z_t|| for each evaluated iterate z_t.
  std::vector<double> abs_residual;
  /// abs_residual / ||z_t|| (infinite when z_t = 0 and the residual is not).
  std::vector<double> rel_residual;
  int steps = 0;
  bool converged = false;

  void push(double abs, double znorm);
  double best_abs() const;
  double best_rel() const;
};

struct Result {
  Vec z;
  SolverTrace trace;
};

/// z_{t+1} = G(z_t). Returns the newest iterate: G(z_t) for the last
/// evaluated z_t. Throws NumericalError on a non-finite iterate.
Result picard(const Map& G, const Vec& z0, const SolverConfig& cfg);

/// Anderson(m) mixing; returns the evaluated iterate with the smallest
/// residual.
Result anderson(const Map& G, const Vec& z0, const SolverConfig& cfg);

/// Good Broyden on F(z) = G(z) - z with a limited-memory inverse Jacobian
/// (initial estimate -I); returns the lowest-residual iterate.
Result broyden(const Map& G, const Vec& z0, const SolverConfig& cfg);

Result solve(SolverKind kind, const Map& G, const Vec& z0, const SolverConfig& cfg);

// ---- linear solves ---------------------------------------------------------

struct GmresResult {
  Vec x;
  int iterations = 0;
  double residual = 0.0;  // ||b - A x|| / ||b||
  bool converged = false;
};

/// Restarted GMRES with Givens rotations for a matrix-free operator.
GmresResult gmres(const Map& A, const Vec& b, const Vec& x0, double rel_tol, int max_iters, int restart = 100);

// ---- Newton ----------------------------------------------------------------

/// L'(u) applied to p.
using Derivative = std::function<Vec(const Vec& u, const Vec& p)>;

struct NewtonConfig {
  int max_steps = 20;
  double tol = 1e-12;
  double inner_tol = 1e-12;
  int inner_max = 500;
  /// Relative inner residual above which the derivative counts as singular.
  /// Between inner_tol and this value the inner solve has hit its roundoff
  /// floor and the step is taken.
  double inner_fail = 1e-8;
  /// Residual norms are multiplied by this factor before recording, e.g.
  /// sqrt(h) for a grid L2 norm.
  double norm_scale = 1.0;
};

/// u_{t+1} = u_t - L'(u_t)^{-1} (L(u_t) - f) with a matrix-free GMRES inner
/// solve. The trace holds ||L(u_t) - f|| (scaled); rel_residual divides by
/// ||f||. Throws NumericalError("singular derivative") when the inner solve
/// fails.
Result newton(const Map& L, const Derivative& dL, const Vec& f, const Vec& u0, const NewtonConfig& cfg);

}  // namespace steadyop::fixedpoint
