#pragma once

// Backward passes through an equilibrium z* = B(z*). A block is given as a
// builder that records one application B(z) into a graph and binds its
// parameters with Graph::parameter, so repeated applications share leaves.
// Gradients come back keyed by leaf name.

#include "steadyop/autodiff.hpp"

#include <functional>
#include <string>

namespace steadyop::implicit {

using BlockBuilder = std::function<ad::Var(ad::Graph&, ad::Var z)>;

struct PhantomConfig {
  double tau = 0.5;
  int steps = 1;
};

enum class BackwardKind { Exact, JacobianFree, Phantom };

struct BackwardMode {
  BackwardKind kind = BackwardKind::Exact;
  PhantomConfig phantom;
};

/// Parses "exact", "jfree" or "phantom(tau,S)".
BackwardMode parse_backward(const std::string& text);
std::string to_string(const BackwardMode& mode);

struct AdjointConfig {
  int max_iters = 100;
  double tol = 1e-10;
  int gmres_max = 500;
};

struct AdjointStats {
  int iterations = 0;
  bool used_gmres = false;
  double residual = 0.0;
};

/// Solves w = grad_z + J^T w at z* (J = dB/dz) and returns w^T dB/dtheta.
/// Throws NumericalError("ill-conditioned equilibrium") when neither the
/// fixed-point iteration nor GMRES reaches the tolerance.
ad::GradientMap exact_implicit_grad(const BlockBuilder& block, const Tensor& z_star, const Tensor& grad_z,
                                    const AdjointConfig& cfg = {}, AdjointStats* stats = nullptr);

/// grad_z^T dB/dtheta from one application at z*.
ad::GradientMap jacobian_free_grad(const BlockBuilder& block, const Tensor& z_star, const Tensor& grad_z);

/// Backprop through S damped steps u <- tau B(u) + (1 - tau) u started from
/// a detached copy of z*.
ad::GradientMap phantom_grad(const BlockBuilder& block, const Tensor& z_star, const Tensor& grad_z,
                             const PhantomConfig& cfg);

ad::GradientMap implicit_grad(const BackwardMode& mode, const BlockBuilder& block, const Tensor& z_star,
                              const Tensor& grad_z, const AdjointConfig& cfg = {}, AdjointStats* stats = nullptr);

}  // namespace steadyop::implicit
