#include "steadyop/implicit_grad.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/fixedpoint.hpp"

#include <regex>
#include <sstream>

namespace steadyop::implicit {
namespace {

const std::string kZ = "__z";

Eigen::Map<const Eigen::VectorXd> flat(const Tensor& t) { return {t.data(), t.size()}; }

void check_shapes(const Tensor& z_star, const Tensor& grad_z) {
  expect_shape(grad_z, z_star.shape(), "implicit gradient: loss gradient");
}

}  // namespace

BackwardMode parse_backward(const std::string& text) {
  if (text == "exact") return {BackwardKind::Exact, {}};
  if (text == "jfree") return {BackwardKind::JacobianFree, {}};
  static const std::regex re(R"(phantom\(\s*([0-9.eE+-]+)\s*,\s*([0-9]+)\s*\))");
  std::smatch m;
  if (std::regex_match(text, m, re)) {
    BackwardMode mode{BackwardKind::Phantom, {std::stod(m[1]), std::stoi(m[2])}};
    if (!(mode.phantom.tau > 0.0) || mode.phantom.tau > 1.0) throw DomainError("phantom tau must lie in (0, 1]");
    if (mode.phantom.steps < 1) throw DomainError("phantom S must be >= 1");
    return mode;
  }
  throw DomainError("unknown backward mode '" + text + "' (exact | jfree | phantom(tau,S))");
}

std::string to_string(const BackwardMode& mode) {
  switch (mode.kind) {
    case BackwardKind::Exact: return "exact";
    case BackwardKind::JacobianFree: return "jfree";
    case BackwardKind::Phantom: {
      std::ostringstream os;
      os << "phantom(" << mode.phantom.tau << "," << mode.phantom.steps << ")";
      return os.str();
    }
  }
  return "?";
}

ad::GradientMap exact_implicit_grad(const BlockBuilder& block, const Tensor& z_star, const Tensor& grad_z,
                                    const AdjointConfig& cfg, AdjointStats* stats) {
  check_shapes(z_star, grad_z);
  // One recorded application at z*; every vector-Jacobian product below
  // reuses it, so the retained activations are those of a single block.
  ad::Graph g;
  const ad::Var z = g.leaf(kZ, z_star);
  const ad::Var y = block(g, z);
  expect_shape(y.value(), z_star.shape(), "implicit gradient: block output");

  const Shape& shape = z_star.shape();
  auto jt = [&](const Eigen::VectorXd& w) -> Eigen::VectorXd {
    const ad::GradientMap gm = g.backward(y, Tensor(shape, w));
    return flat(gm.at(kZ));
  };
  const Eigen::VectorXd b = flat(grad_z);
  const double bnorm = b.norm();
  AdjointStats local;
  Eigen::VectorXd w = b;
  bool ok = bnorm == 0.0;
  for (int it = 0; it < cfg.max_iters && !ok; ++it) {
    const Eigen::VectorXd next = b + jt(w);
    if (!next.allFinite()) break;
    const double change = (next - w).norm();
    w = next;
    local.iterations = it + 1;
    local.residual = change / bnorm;
    if (local.residual < cfg.tol) ok = true;
  }
  if (!ok) {
    // (I - J^T) w = b
    local.used_gmres = true;
    const fixedpoint::Map op = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v - jt(v); };
    const Eigen::VectorXd x0 = w.allFinite() ? w : b;
    const fixedpoint::GmresResult res = fixedpoint::gmres(op, b, x0, cfg.tol, cfg.gmres_max);
    local.residual = res.residual;
    if (!res.converged || !res.x.allFinite())
      throw NumericalError("ill-conditioned equilibrium: adjoint solve residual " + std::to_string(res.residual));
    w = res.x;
  }
  if (stats) *stats = local;
  ad::GradientMap grads = g.backward(y, Tensor(shape, w));
  grads.erase(kZ);
  return grads;
}

ad::GradientMap jacobian_free_grad(const BlockBuilder& block, const Tensor& z_star, const Tensor& grad_z) {
  check_shapes(z_star, grad_z);
  ad::Graph g;
  const ad::Var z = g.constant(z_star);
  const ad::Var y = block(g, z);
  expect_shape(y.value(), z_star.shape(), "implicit gradient: block output");
  return g.backward(y, grad_z);
}

ad::GradientMap phantom_grad(const BlockBuilder& block, const Tensor& z_star, const Tensor& grad_z,
                             const PhantomConfig& cfg) {
  check_shapes(z_star, grad_z);
  if (cfg.steps < 1 || !(cfg.tau > 0.0) || cfg.tau > 1.0) throw DomainError("phantom: need tau in (0, 1] and S >= 1");
  // Builders bind parameters through Graph::parameter, so every step shares
  // the same leaves.
  ad::Graph g;
  ad::Var u = g.constant(z_star);
  for (int s = 0; s < cfg.steps; ++s) {
    const ad::Var bu = block(g, u);
    u = cfg.tau == 1.0 ? bu : ad::add(ad::scale(bu, cfg.tau), ad::scale(u, 1.0 - cfg.tau));
  }
  return g.backward(u, grad_z);
}

ad::GradientMap implicit_grad(const BackwardMode& mode, const BlockBuilder& block, const Tensor& z_star,
                              const Tensor& grad_z, const AdjointConfig& cfg, AdjointStats* stats) {
  switch (mode.kind) {
    case BackwardKind::Exact: return exact_implicit_grad(block, z_star, grad_z, cfg, stats);
    case BackwardKind::JacobianFree: return jacobian_free_grad(block, z_star, grad_z);
    case BackwardKind::Phantom: return phantom_grad(block, z_star, grad_z, mode.phantom);
  }
  throw DomainError("unknown backward mode");
}

}  // namespace steadyop::implicit
