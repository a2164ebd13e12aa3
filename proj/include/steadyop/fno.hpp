#pragma once

// Fourier neural operator layers and the four architectures built from them.
//
//   FNO      v = P2(f), then B*L plain layers sigma(W v + b + K v)
//   FNO++    v = v0, then B distinct input-injected blocks v <- Block_b(v, g)
//   FNO-WT   v = v0, then one block applied M times
//   FNO-DEQ  v = z* solving z = Block(z, g) with a root solver
//
// g = P2(f) is injected into every layer of every block, and v0 = P1(u0)
// when an initial guess u0 is supplied, zero otherwise. Every architecture
// ends with one plain "head" layer followed by Q.
//
// Parameter names: block{i}.layer{j}.{W,b,R_re,R_im}, head.{W,b,R_re,R_im},
// proj.{W_P1,b_P1,W_P2,b_P2,W_Q,b_Q}. Checkpoints add meta.* entries.

#include "steadyop/autodiff.hpp"
#include "steadyop/fixedpoint.hpp"
#include "steadyop/fnt.hpp"
#include "steadyop/implicit_grad.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace steadyop::fno {

enum class ArchKind { Fno = 0, FnoPlusPlus = 1, FnoWT = 2, FnoDEQ = 3 };

/// "fno", "fno++", "fno-wt", "fno-deq".
ArchKind parse_arch(const std::string& name);
std::string to_string(ArchKind kind);

struct ArchConfig {
  ArchKind kind = ArchKind::FnoDEQ;
  Index du = 1;      // solution channels
  Index df = 1;      // data channels
  Index dv = 16;     // hidden width
  Index layers = 3;  // L, layers per block (1 for shallow variants)
  Index blocks = 1;  // B
  Index modes = 8;   // K
  Index tie = 1;     // M, weight-tied repetitions (FNO-WT)
  bool q_linear = false;  // Q without the output GELU, for signed targets
  /// Appends the cell coordinates (i/H, j/W) as two extra channels in
  /// front of P2, so the network can locate non-periodic boundaries.
  bool grid = false;
  Index lifted_channels() const { return df + (grid ? 2 : 0); }
};

/// Throws DimensionError on inconsistent or non-positive sizes.
void validate(const ArchConfig& cfg);

using Params = NamedTensors;

struct Model {
  ArchConfig arch;
  Params params;
  /// Fixed per-channel factors: data channels are multiplied by in_scale
  /// [df] before P2 and the output by out_scale [du] after Q. Empty means 1.
  /// Stored as meta.in_scale / meta.out_scale; not trained.
  Tensor in_scale;
  Tensor out_scale;
};

/// L * (dv^2 + dv + 2*Kx*Ky*dv^2*2) with Kx = 2K rows and Ky = K columns of
/// the retained-mode layout.
Index block_parameter_count(Index dv, Index modes, Index layers);
/// Closed-form total for an architecture (blocks, head and projections).
Index parameter_count(const ArchConfig& cfg);
/// Sum of tensor sizes, excluding meta entries.
Index count_parameters(const Params& params);

/// Number of distinct parameter blocks stored for the architecture.
Index stored_blocks(const ArchConfig& cfg);

std::string layer_prefix(Index block, Index layer);

/// W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); R_re, R_im ~ N(0, 1) / (dv K K).
Params init_params(const ArchConfig& cfg, std::uint64_t seed);

/// Throws DimensionError unless every tensor the architecture needs is
/// present with the right shape.
void check_params(const ArchConfig& cfg, const Params& params);

/// Upper bound on the Lipschitz constant of block `b` in its hidden input:
/// prod over layers of c_gelu * (||W||_2 + max_k ||R_k||_2).
double block_lipschitz_bound(const ArchConfig& cfg, const Params& params, Index block);
/// Rescales W and R of every block layer so that the bound above is at most
/// `target` (layers that already satisfy their share are left alone).
void spectral_normalize(const ArchConfig& cfg, Params& params, double target);

/// Throws DimensionError when the scale vectors do not match the channels.
void check_scales(const Model& model);

NamedTensors to_checkpoint(const Model& model);
Model from_checkpoint(const NamedTensors& entries);
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

// ---- graph-level building blocks ------------------------------------------

struct LayerVars {
  ad::Var W, b, r_re, r_im;
};

/// Binds the four tensors of `prefix` as graph parameters.
LayerVars bind_layer(ad::Graph& g, const Params& params, const std::string& prefix);
std::vector<LayerVars> bind_block(ad::Graph& g, const Params& params, Index block, Index layers);

ad::Var kernel_operator(ad::Var v, const LayerVars& p);
/// sigma(W v + b + K v).
ad::Var fno_layer(ad::Var v, const LayerVars& p);
/// g + sigma(W v + b + K v).
ad::Var input_injected_layer(ad::Var v, ad::Var g, const LayerVars& p);
/// Chain of input-injected layers sharing the same g.
ad::Var fno_block(ad::Var v, ad::Var g, const std::vector<LayerVars>& layers);

/// sigma(W_P1 u + b_P1), sigma(W_P2 f + b_P2).
ad::Var project_P1(ad::Graph& g, const Params& params, ad::Var u);
ad::Var project_P2(ad::Graph& g, const Params& params, ad::Var f);
/// sigma(W_Q v + b_Q), or the affine map alone when `linear`.
ad::Var embed_Q(ad::Graph& g, const Params& params, ad::Var v, bool linear = false);

// ---- value-level evaluation (no graph) -------------------------------------

Tensor layer_value(const Tensor& v, const Params& params, const std::string& prefix);
Tensor block_value(const Tensor& v, const Tensor& g, const Params& params, Index block, Index layers);

// ---- architectures ---------------------------------------------------------

struct DeqOptions {
  fixedpoint::SolverKind solver = fixedpoint::SolverKind::Anderson;
  fixedpoint::SolverConfig solver_cfg{};
  implicit::BackwardMode backward{};
  implicit::AdjointConfig adjoint{};
};

struct ForwardStats {
  bool used_solver = false;
  fixedpoint::SolverTrace trace;
  /// Residual of the returned equilibrium.
  double abs_residual = 0.0;
  double rel_residual = 0.0;
};

/// Records the architecture applied to data `f` [H, W, df] (and optionally
/// an initial guess `u0` [H, W, du]) into `g`; returns the [H, W, du] output.
ad::Var forward(ad::Graph& g, const Model& model, const Tensor& f, const DeqOptions& opts = {},
                ForwardStats* stats = nullptr, const Tensor* u0 = nullptr);

/// Inference without gradient bookkeeping.
Tensor predict(const Model& model, const Tensor& f, const DeqOptions& opts = {}, ForwardStats* stats = nullptr,
               const Tensor* u0 = nullptr);

/// The DEQ equilibrium node on its own: z* of z = Block_0(z, g) from z0,
/// differentiable in g and the block parameters through opts.backward.
ad::Var deq_equilibrium(ad::Graph& g, const Model& model, ad::Var injection, const Tensor& z0,
                        const DeqOptions& opts, ForwardStats* stats);

}  // namespace steadyop::fno
