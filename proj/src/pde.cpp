#include "steadyop/pde.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/log.hpp"
#include "steadyop/spectral.hpp"

#include <cmath>
#include <numbers>

namespace steadyop::pde {
namespace {

using cd = std::complex<double>;
namespace sp = spectral;

void require_square(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(0) != t.dim(1) || t.dim(0) < 3)
    throw DimensionError(std::string(what) + " must be a square [n, n] field with n >= 3, got " + shape_string(t.shape()));
}

double harmonic(double p, double q) { return 2.0 * p * q / (p + q); }

// Multiplies a spectrum by i*k along `axis`, dropping the Nyquist mode.
ComplexTensor times_ik(const ComplexTensor& F, int axis) {
  const Index nx = F.dim(0), ny = F.dim(1);
  ComplexTensor out(F.shape());
  for (Index x = 0; x < nx; ++x)
    for (Index y = 0; y < ny; ++y) {
      const Index i = axis == 0 ? x : y;
      const Index n = axis == 0 ? nx : ny;
      const double k = i == n / 2 ? 0.0 : static_cast<double>(sp::frequency(i, n));
      out[x * ny + y] = cd(0.0, k) * F[x * ny + y];
    }
  return out;
}

ComplexTensor inverse_laplacian(const ComplexTensor& F) {
  const Index nx = F.dim(0), ny = F.dim(1);
  ComplexTensor out(F.shape());
  for (Index x = 0; x < nx; ++x)
    for (Index y = 0; y < ny; ++y) {
      const double kx = static_cast<double>(sp::frequency(x, nx)), ky = static_cast<double>(sp::frequency(y, ny));
      const double k2 = kx * kx + ky * ky;
      out[x * ny + y] = k2 == 0.0 ? cd(0.0) : -F[x * ny + y] / k2;
    }
  return out;
}

struct Velocity {
  Tensor u1, u2;
};

Velocity velocity_from_spectrum(const ComplexTensor& W) {
  const ComplexTensor psi = inverse_laplacian(W);
  Tensor u1 = sp::ifft2(times_ik(psi, 1));
  u1.array() = -u1.array();
  return {std::move(u1), sp::ifft2(times_ik(psi, 0))};
}

// u . grad w evaluated pointwise from the spectrum of w; returns the field
// and the max speed.
Tensor advection_from_spectrum(const ComplexTensor& W, double* max_speed) {
  const Velocity u = velocity_from_spectrum(W);
  const Tensor wx = sp::ifft2(times_ik(W, 0));
  const Tensor wy = sp::ifft2(times_ik(W, 1));
  if (max_speed) *max_speed = (u.u1.array().square() + u.u2.array().square()).sqrt().maxCoeff();
  return Tensor(W.shape(), u.u1.array() * wx.array() + u.u2.array() * wy.array());
}

}  // namespace

// ---- Darcy -----------------------------------------------------------------

void check_darcy(const DarcyProblem& p) {
  require_square(p.a, "Darcy coefficient");
  if (p.f.shape() != p.a.shape()) throw DimensionError("Darcy forcing and coefficient shapes differ");
  if (!(p.a.array().minCoeff() > 0.0)) throw DomainError("Darcy coefficient must be strictly positive");
}

Tensor darcy_apply(const Tensor& a, const Tensor& u) {
  require_square(a, "Darcy coefficient");
  if (u.shape() != a.shape()) throw DimensionError("Darcy: u and a shapes differ");
  if (!(a.array().minCoeff() > 0.0)) throw DomainError("Darcy coefficient must be strictly positive");
  const Index n = a.dim(0);
  const double inv_h2 = static_cast<double>((n - 1) * (n - 1));
  auto A = [&](Index i, Index j) { return a[i * n + j]; };
  auto U = [&](Index i, Index j) {
    return (i == 0 || j == 0 || i == n - 1 || j == n - 1) ? 0.0 : u[i * n + j];
  };
  Tensor out(a.shape());
  for (Index i = 1; i < n - 1; ++i)
    for (Index j = 1; j < n - 1; ++j) {
      const double c = A(i, j), uc = U(i, j);
      const double flux = harmonic(c, A(i + 1, j)) * (uc - U(i + 1, j)) + harmonic(c, A(i - 1, j)) * (uc - U(i - 1, j)) +
                          harmonic(c, A(i, j + 1)) * (uc - U(i, j + 1)) + harmonic(c, A(i, j - 1)) * (uc - U(i, j - 1));
      out[i * n + j] = flux * inv_h2;
    }
  return out;
}

Tensor darcy_residual(const DarcyProblem& p, const Tensor& u) {
  check_darcy(p);
  Tensor r = darcy_apply(p.a, u);
  const Index n = p.a.dim(0);
  for (Index i = 1; i < n - 1; ++i)
    for (Index j = 1; j < n - 1; ++j) r[i * n + j] -= p.f[i * n + j];
  return r;
}

Tensor darcy_solve(const DarcyProblem& p, double tol, int max_iters, CgStats* stats) {
  check_darcy(p);
  if (!(tol > 0.0)) throw DomainError("darcy_solve: tolerance must be positive");
  const Index n = p.a.dim(0);
  if (max_iters <= 0) max_iters = static_cast<int>(4 * n * n);
  const double inv_h2 = static_cast<double>((n - 1) * (n - 1));
  auto interior = [n](Index k) {
    const Index i = k / n, j = k % n;
    return i > 0 && j > 0 && i < n - 1 && j < n - 1;
  };

  Tensor b(p.a.shape()), diag(p.a.shape());
  for (Index i = 1; i < n - 1; ++i)
    for (Index j = 1; j < n - 1; ++j) {
      const Index k = i * n + j;
      b[k] = p.f[k];
      const double c = p.a[k];
      diag[k] = inv_h2 * (harmonic(c, p.a[k + n]) + harmonic(c, p.a[k - n]) + harmonic(c, p.a[k + 1]) +
                          harmonic(c, p.a[k - 1]));
    }
  const double bnorm = norm(b);
  Tensor u(p.a.shape());
  CgStats local;
  if (bnorm == 0.0) {
    if (stats) *stats = local;
    return u;
  }
  Tensor r = b, z(p.a.shape());
  for (Index k = 0; k < r.size(); ++k) z[k] = interior(k) ? r[k] / diag[k] : 0.0;
  Tensor d = z;
  double rz = r.array().matrix().dot(z.array().matrix());
  for (int it = 1; it <= max_iters; ++it) {
    const Tensor q = darcy_apply(p.a, d);
    const double alpha = rz / d.array().matrix().dot(q.array().matrix());
    u.array() += alpha * d.array();
    r.array() -= alpha * q.array();
    local.iterations = it;
    local.rel_residual = norm(r) / bnorm;
    if (local.rel_residual <= tol) {
      // Guard against drift of the recursive residual.
      local.rel_residual = norm(darcy_residual(p, u)) / bnorm;
      if (local.rel_residual <= tol) {
        if (stats) *stats = local;
        return u;
      }
      r = darcy_residual(p, u);
      r.array() = -r.array();
    }
    for (Index k = 0; k < r.size(); ++k) z[k] = interior(k) ? r[k] / diag[k] : 0.0;
    const double rz_next = r.array().matrix().dot(z.array().matrix());
    d.array() = z.array() + (rz_next / rz) * d.array();
    rz = rz_next;
  }
  if (stats) *stats = local;
  throw ConvergenceError("darcy_solve: CG did not reach " + std::to_string(tol) + " in " + std::to_string(max_iters) +
                         " iterations (residual " + std::to_string(local.rel_residual) + ")");
}

// ---- Navier-Stokes ----------------------------------------------------------

std::pair<Tensor, Tensor> velocity_from_vorticity(const Tensor& omega) {
  require_square(omega, "vorticity");
  const double mean = omega.array().mean();
  if (std::abs(mean) > sp::kSolvabilityTol)
    throw DomainError("velocity_from_vorticity: vorticity mean " + std::to_string(mean) + " breaks solvability");
  Velocity v = velocity_from_spectrum(sp::fft2(omega));
  return {std::move(v.u1), std::move(v.u2)};
}

Tensor curl(const Tensor& v1, const Tensor& v2) {
  Tensor c = sp::spectral_derivative(v2, 0, 1);
  c.array() -= sp::spectral_derivative(v1, 1, 1).array();
  return c;
}

Tensor divergence(const Tensor& v1, const Tensor& v2) {
  Tensor d = sp::spectral_derivative(v1, 0, 1);
  d.array() += sp::spectral_derivative(v2, 1, 1).array();
  return d;
}

Tensor advection(const Tensor& omega) {
  require_square(omega, "vorticity");
  return advection_from_spectrum(sp::fft2(omega), nullptr);
}

Tensor kolmogorov_forcing(Index n) {
  Tensor g({n, n});
  const double h = 2.0 * std::numbers::pi / static_cast<double>(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) g[i * n + j] = 5.0 * std::cos(5.0 * h * static_cast<double>(i));
  return g;
}

Tensor ns_step(const Tensor& omega, double nu, const Tensor& forcing, double dt, StepInfo* info) {
  require_square(omega, "vorticity");
  if (forcing.shape() != omega.shape()) throw DimensionError("ns_step: forcing shape differs from vorticity");
  if (!(nu >= 0.0) || !(dt > 0.0)) throw DomainError("ns_step: need nu >= 0 and dt > 0");
  const Index n = omega.dim(0);
  const double h = 2.0 * std::numbers::pi / static_cast<double>(n);

  const ComplexTensor W0 = sp::fft2(omega);
  const ComplexTensor G = sp::fft2(forcing);
  Eigen::ArrayXd decay(omega.size());
  Eigen::ArrayXd keep(omega.size());
  const double cutoff = static_cast<double>(n) / 3.0;
  for (Index x = 0; x < n; ++x)
    for (Index y = 0; y < n; ++y) {
      const double kx = static_cast<double>(sp::frequency(x, n)), ky = static_cast<double>(sp::frequency(y, n));
      decay[x * n + y] = std::exp(-nu * (kx * kx + ky * ky) * dt);
      keep[x * n + y] = (std::abs(kx) < cutoff && std::abs(ky) < cutoff) ? 1.0 : 0.0;
    }

  double speed = 0.0;
  // Spectrum of -u.grad w + g, dealiased; the mean mode carries g only.
  auto rhs = [&](const ComplexTensor& W) {
    double s = 0.0;
    ComplexTensor N = sp::fft2(advection_from_spectrum(W, &s));
    speed = std::max(speed, s);
    for (Index k = 0; k < N.size(); ++k) N[k] = keep[k] * (G[k] - N[k]);
    N[0] = G[0];
    return N;
  };

  const ComplexTensor k1 = rhs(W0);
  ComplexTensor W1(W0.shape());
  for (Index k = 0; k < W0.size(); ++k) W1[k] = decay[k] * (W0[k] + dt * k1[k]);
  const ComplexTensor k2 = rhs(W1);
  ComplexTensor W2(W0.shape());
  for (Index k = 0; k < W0.size(); ++k) W2[k] = decay[k] * W0[k] + 0.5 * dt * (decay[k] * k1[k] + k2[k]);

  const double cfl = speed * dt / h;
  if (info) info->cfl = cfl;
  if (cfl > 1.0) log().warn("ns_step: CFL number {:.3f} exceeds 1 (dt={}, max|u|={:.3f})", cfl, dt, speed);
  Tensor out = sp::ifft2(W2);
  expect_finite(out, "ns_step");
  return out;
}

Tensor ns_force_from_solution(const Tensor& omega, double nu) {
  Tensor f = advection(omega);
  if (nu != 0.0) f.array() -= nu * sp::laplacian(omega).array();
  return f;
}

Tensor ns_residual(const Tensor& omega, double nu, const Tensor& f) {
  if (f.shape() != omega.shape()) throw DimensionError("ns_residual: forcing shape differs from vorticity");
  Tensor r = ns_force_from_solution(omega, nu);
  r.array() -= f.array();
  return r;
}

}  // namespace steadyop::pde
