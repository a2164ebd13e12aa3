#include "steadyop/fixedpoint.hpp"

#include "steadyop/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace steadyop::fixedpoint {
namespace {

using Index = Eigen::Index;

void require_finite(const Vec& v, const char* solver) {
  if (!v.allFinite()) throw NumericalError(std::string(solver) + ": iterate diverged (non-finite values)");
}

void check_config(const SolverConfig& cfg) {
  if (cfg.max_steps < 1) throw DomainError("solver: max_steps must be >= 1");
  if (!(cfg.tol_abs > 0.0) || !(cfg.tol_rel > 0.0)) throw DomainError("solver: tolerances must be positive");
  if (cfg.anderson_memory < 1) throw DomainError("solver: anderson memory must be >= 1");
  if (!(cfg.anderson_damping > 0.0) || cfg.anderson_damping > 1.0)
    throw DomainError("solver: anderson damping must lie in (0, 1]");
}

bool done(const SolverTrace& t, const SolverConfig& cfg) {
  return t.abs_residual.back() < cfg.tol_abs || t.rel_residual.back() < cfg.tol_rel;
}

}  // namespace

SolverKind parse_solver(const std::string& name) {
  if (name == "picard") return SolverKind::Picard;
  if (name == "anderson") return SolverKind::Anderson;
  if (name == "broyden") return SolverKind::Broyden;
  throw DomainError("unknown solver '" + name + "' (picard | anderson | broyden)");
}

std::string to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::Picard: return "picard";
    case SolverKind::Anderson: return "anderson";
    case SolverKind::Broyden: return "broyden";
  }
  return "?";
}

void SolverTrace::push(double abs, double znorm) {
  abs_residual.push_back(abs);
  double rel = 0.0;
  if (abs > 0.0) rel = znorm > 0.0 ? abs / znorm : std::numeric_limits<double>::infinity();
  rel_residual.push_back(rel);
  steps = static_cast<int>(abs_residual.size());
}

double SolverTrace::best_abs() const {
  return abs_residual.empty() ? std::numeric_limits<double>::infinity()
                              : *std::min_element(abs_residual.begin(), abs_residual.end());
}

double SolverTrace::best_rel() const {
  return rel_residual.empty() ? std::numeric_limits<double>::infinity()
                              : *std::min_element(rel_residual.begin(), rel_residual.end());
}

Result picard(const Map& G, const Vec& z0, const SolverConfig& cfg) {
  check_config(cfg);
  Result out;
  Vec z = z0;
  for (int t = 0; t < cfg.max_steps; ++t) {
    Vec gz = G(z);
    require_finite(gz, "picard");
    out.trace.push((gz - z).norm(), z.norm());
    z = std::move(gz);
    if (done(out.trace, cfg)) {
      out.trace.converged = true;
      break;
    }
  }
  out.z = std::move(z);
  return out;
}

Result anderson(const Map& G, const Vec& z0, const SolverConfig& cfg) {
  check_config(cfg);
  const Index m = cfg.anderson_memory;
  const double beta = cfg.anderson_damping;
  std::deque<Vec> xs, gs;  // iterates and their images, newest last
  Result out;
  Vec x = z0;
  Vec best = z0;
  double best_res = std::numeric_limits<double>::infinity();
  for (int t = 0; t < cfg.max_steps; ++t) {
    Vec gx = G(x);
    require_finite(gx, "anderson");
    const double res = (gx - x).norm();
    out.trace.push(res, x.norm());
    if (res < best_res) {
      best_res = res;
      best = x;
    }
    if (done(out.trace, cfg)) {
      out.trace.converged = true;
      break;
    }
    xs.push_back(x);
    gs.push_back(std::move(gx));
    if (static_cast<Index>(xs.size()) > m) {
      xs.pop_front();
      gs.pop_front();
    }
    const Index n = static_cast<Index>(xs.size());
    Eigen::MatrixXd R(x.size(), n);
    for (Index i = 0; i < n; ++i) R.col(i) = gs[i] - xs[i];
    Eigen::MatrixXd A = R.transpose() * R;
    const double diag = A.diagonal().maxCoeff();
    A.diagonal().array() += cfg.anderson_reg * (diag > 0.0 ? diag : 1.0);
    Vec alpha = A.ldlt().solve(Vec::Ones(n));
    const double s = alpha.sum();
    if (!std::isfinite(s) || s == 0.0) {
      alpha = Vec::Zero(n);
      alpha(n - 1) = 1.0;
    } else {
      alpha /= s;
    }
    Vec next = Vec::Zero(x.size());
    for (Index i = 0; i < n; ++i) next += alpha(i) * (beta * gs[i] + (1.0 - beta) * xs[i]);
    x = std::move(next);
  }
  out.z = std::move(best);
  return out;
}

Result broyden(const Map& G, const Vec& z0, const SolverConfig& cfg) {
  check_config(cfg);
  // Inverse Jacobian estimate H = -I + U V^T, stored by columns.
  std::deque<Vec> us, vs;
  auto apply_h = [&](const Vec& x) {
    Vec y = -x;
    for (std::size_t i = 0; i < us.size(); ++i) y += us[i] * vs[i].dot(x);
    return y;
  };
  auto apply_ht = [&](const Vec& x) {
    Vec y = -x;
    for (std::size_t i = 0; i < us.size(); ++i) y += vs[i] * us[i].dot(x);
    return y;
  };

  Result out;
  Vec z = z0;
  Vec gz = G(z);
  require_finite(gz, "broyden");
  Vec fz = gz - z;
  out.trace.push(fz.norm(), z.norm());
  Vec best = z;
  double best_res = fz.norm();
  if (done(out.trace, cfg)) {
    out.trace.converged = true;
    out.z = z;
    return out;
  }
  for (int t = 1; t < cfg.max_steps; ++t) {
    Vec step = -apply_h(fz);
    Vec z_new = z + step;
    Vec g_new = G(z_new);
    Vec f_new = g_new - z_new;
    const bool stalled = !g_new.allFinite() || f_new.norm() > 1e3 * fz.norm();
    if (stalled) {
      // Damped Picard step from z instead; costs one more evaluation slot.
      z_new = z + cfg.broyden_fallback_damping * fz;
      g_new = G(z_new);
      require_finite(g_new, "broyden");
      f_new = g_new - z_new;
      us.clear();
      vs.clear();
    } else {
      const Vec s = z_new - z;
      const Vec y = f_new - fz;
      const Vec hy = apply_h(y);
      const double denom = s.dot(hy);
      if (std::abs(denom) > 1e-30 * s.norm() * hy.norm() && std::abs(denom) > 0.0) {
        Vec v = apply_ht(s);
        us.push_back((s - hy) / denom);
        vs.push_back(std::move(v));
        if (static_cast<int>(us.size()) > cfg.broyden_memory) {
          us.pop_front();
          vs.pop_front();
        }
      }
    }
    z = std::move(z_new);
    fz = std::move(f_new);
    out.trace.push(fz.norm(), z.norm());
    if (fz.norm() < best_res) {
      best_res = fz.norm();
      best = z;
    }
    if (done(out.trace, cfg)) {
      out.trace.converged = true;
      break;
    }
  }
  out.z = std::move(best);
  return out;
}

Result solve(SolverKind kind, const Map& G, const Vec& z0, const SolverConfig& cfg) {
  switch (kind) {
    case SolverKind::Picard: return picard(G, z0, cfg);
    case SolverKind::Anderson: return anderson(G, z0, cfg);
    case SolverKind::Broyden: return broyden(G, z0, cfg);
  }
  throw DomainError("unknown solver kind");
}

GmresResult gmres(const Map& A, const Vec& b, const Vec& x0, double rel_tol, int max_iters, int restart) {
  GmresResult out;
  out.x = x0;
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    out.x.setZero();
    out.converged = true;
    return out;
  }
  const Index n = b.size();
  const Index m = std::max<Index>(1, std::min<Index>(restart, n));
  int total = 0;
  while (total < max_iters) {
    Vec r = b - A(out.x);
    double beta = r.norm();
    out.residual = beta / bnorm;
    if (out.residual <= rel_tol) {
      out.converged = true;
      break;
    }
    Eigen::MatrixXd V(n, m + 1);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + 1, m);
    Vec cs = Vec::Zero(m), sn = Vec::Zero(m), g = Vec::Zero(m + 1);
    V.col(0) = r / beta;
    g(0) = beta;
    Index k = 0;
    for (; k < m && total < max_iters; ++k, ++total) {
      Vec w = A(V.col(k));
      // Modified Gram-Schmidt, applied twice for stability.
      for (int pass = 0; pass < 2; ++pass)
        for (Index i = 0; i <= k; ++i) {
          const double h = V.col(i).dot(w);
          H(i, k) += h;
          w -= h * V.col(i);
        }
      H(k + 1, k) = w.norm();
      const bool breakdown = !(H(k + 1, k) > 0.0);
      if (!breakdown) V.col(k + 1) = w / H(k + 1, k);
      for (Index i = 0; i < k; ++i) {
        const double t = cs(i) * H(i, k) + sn(i) * H(i + 1, k);
        H(i + 1, k) = -sn(i) * H(i, k) + cs(i) * H(i + 1, k);
        H(i, k) = t;
      }
      const double denom = std::hypot(H(k, k), H(k + 1, k));
      if (denom == 0.0) break;
      cs(k) = H(k, k) / denom;
      sn(k) = H(k + 1, k) / denom;
      H(k, k) = denom;
      H(k + 1, k) = 0.0;
      g(k + 1) = -sn(k) * g(k);
      g(k) = cs(k) * g(k);
      if (std::abs(g(k + 1)) / bnorm <= rel_tol || breakdown) {
        ++k;
        ++total;
        break;
      }
    }
    if (k == 0) break;
    Vec y = H.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
    out.x += V.leftCols(k) * y;
  }
  out.iterations = total;
  out.residual = (b - A(out.x)).norm() / bnorm;
  out.converged = out.residual <= rel_tol * 10.0 || out.converged;
  return out;
}

Result newton(const Map& L, const Derivative& dL, const Vec& f, const Vec& u0, const NewtonConfig& cfg) {
  if (cfg.max_steps < 1) throw DomainError("newton: max_steps must be >= 1");
  Result out;
  Vec u = u0;
  const double fnorm = cfg.norm_scale * f.norm();
  for (int t = 0; t <= cfg.max_steps; ++t) {
    const Vec r = L(u) - f;
    require_finite(r, "newton");
    const double rn = cfg.norm_scale * r.norm();
    out.trace.push(rn, fnorm);
    if (rn < cfg.tol) {
      out.trace.converged = true;
      break;
    }
    if (t == cfg.max_steps) break;
    const Map J = [&](const Vec& p) { return dL(u, p); };
    const GmresResult inner = gmres(J, -r, Vec::Zero(u.size()), cfg.inner_tol, cfg.inner_max);
    if (!(inner.residual <= std::max(cfg.inner_fail, cfg.inner_tol)) || !inner.x.allFinite()) {
      std::ostringstream msg;
      msg << "newton: singular derivative (inner solve residual " << inner.residual << ")";
      throw NumericalError(msg.str());
    }
    u += inner.x;
  }
  out.z = std::move(u);
  return out;
}

}  // namespace steadyop::fixedpoint
