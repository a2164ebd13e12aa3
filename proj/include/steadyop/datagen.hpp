#pragma once

// Dataset synthesis for Darcy flow and steady Navier-Stokes, static noise
// injection, and the on-disk dataset layout:
//
//   dir/manifest.txt      key=value (pde, n, res, seed, nu, noise_target,
//                         noise_vars, noise_seed, split, version)
//   dir/input_%05d.fnt    [res, res, df]
//   dir/target_%05d.fnt   [res, res, 1]
//
// The first floor(split * n) samples form the training split, the rest the
// test split. Every sample draws from its own (seed, index) stream.

#include "steadyop/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace steadyop::data {

enum class PdeKind { Darcy, NavierStokes };
enum class NoiseTarget { None, Inputs, Observations };

PdeKind parse_pde(const std::string& name);  // "darcy" | "ns"
std::string to_string(PdeKind kind);
NoiseTarget parse_noise_target(const std::string& name);  // "none" | "inputs" | "observations"
std::string to_string(NoiseTarget target);

struct NoiseSchedule {
  std::vector<double> variances{0.0};
  NoiseTarget target = NoiseTarget::None;
  std::uint64_t seed = 0;
};

/// Throws DomainError unless variances start at 0, increase, and stay at or
/// below 1/resolution.
void check_schedule(const NoiseSchedule& s, Index resolution);

struct Manifest {
  PdeKind pde = PdeKind::Darcy;
  Index n = 0;
  Index res = 64;
  std::uint64_t seed = 0;
  double nu = 0.0;
  NoiseSchedule noise;
  double split = 0.9;
  int version = 1;

  Index train_count() const;
};

struct Dataset {
  Manifest manifest;
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
  /// Noise variance applied to each sample (0 for clean and test samples).
  std::vector<double> noise_var;
};

// ---- samples ---------------------------------------------------------------

struct DarcySample {
  Tensor a;  // [res, res, 1]
  Tensor u;  // [res, res, 1]
};

/// Thresholded GRF coefficient (12 where the field is >= 0, 3 elsewhere),
/// f = 1, solved by CG to `tol`.
DarcySample gen_darcy_sample(Index res, std::uint64_t seed, Index index, double tol = 1e-10);
/// The coefficient field alone, [res, res].
Tensor darcy_coefficient(Index res, std::uint64_t seed, Index index);

struct NsSample {
  Tensor force;  // [res, res, 2] velocity-force pair (f1, f2)
  Tensor omega;  // [res, res, 1] steady vorticity
};

struct NsGenConfig {
  double dt = 0.002;
  double horizon = 0.5;
};

/// omega0 ~ GRF, stepped to the horizon under the Kolmogorov forcing,
/// band-limited to res/4 - 1 modes; the force is then synthesized so that
/// omega is steady. Throws NumericalError on a CFL violation.
NsSample gen_ns_sample(Index res, double nu, std::uint64_t seed, Index index, const NsGenConfig& cfg = {});

// ---- datasets --------------------------------------------------------------

Dataset gen_darcy(Index n, Index res, std::uint64_t seed, int threads = 1);
Dataset gen_ns(Index n, Index res, double nu, std::uint64_t seed, int threads = 1);

/// Level index of each of `n` samples: a seeded permutation splits them into
/// equal groups, the remainder going to level 0.
std::vector<int> assign_noise_levels(Index n, Index levels, std::uint64_t seed);

/// Adds N(0, var) white noise to the scheduled side of each training sample.
/// The test split is never touched.
Dataset apply_noise(const Dataset& clean, const NoiseSchedule& schedule);

/// Relative residual of the steady vorticity equation,
/// ||u.grad w - nu lap w - curl(f1, f2)|| / ||curl f||.
double ns_consistency(const Tensor& force, const Tensor& omega, double nu);

// ---- storage ---------------------------------------------------------------

std::string sample_name(const char* kind, Index i);

/// Writes manifest and tensors. Throws FormatError when `dir` already holds
/// a manifest and `force` is false.
void save_dataset(const std::filesystem::path& dir, const Dataset& d, bool force);
/// Loads and validates a dataset directory; noise tags are recomputed from
/// the manifest.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace steadyop::data
