#pragma once

// Adam training loop over any architecture, evaluation on the clean test
// split, and the on-disk training outputs:
//
//   out/metrics.csv     epoch,train_mse,test_rel_l2,mean_abs_residual,mean_rel_residual,seconds
//   out/selection.csv   epoch,test_rel_l2,best_rel_l2,saved
//   out/best.fnc        checkpoint with the lowest test relative L2
//   out/final.fnc       checkpoint after the last epoch

#include "steadyop/datagen.hpp"
#include "steadyop/fixedpoint.hpp"
#include "steadyop/fno.hpp"
#include "steadyop/implicit_grad.hpp"
#include "steadyop/keyvalue.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace steadyop::train {

enum class Schedule { Constant, Cosine };

Schedule parse_schedule(const std::string& name);  // "constant" | "cosine"
std::string to_string(Schedule s);

struct TrainConfig {
  /// du and df are taken from the dataset by run_training. Coordinate
  /// channels are on by default for training.
  fno::ArchConfig arch{.grid = true};
  /// Unset: a linear Q when any training target is negative, GELU otherwise.
  std::optional<bool> q_linear;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  Index batch_size = 32;
  Index epochs = 10;
  Schedule schedule = Schedule::Cosine;
  implicit::BackwardMode backward{};
  fixedpoint::SolverKind solver = fixedpoint::SolverKind::Anderson;
  int solver_steps = 32;
  /// Solver budget at evaluation; 0 means solver_steps.
  int eval_solver_steps = 0;
  double clip = 10.0;
  /// Per-channel input/output scaling from training-split RMS.
  bool normalize = true;
  std::uint64_t seed = 0;
  std::string data_dir;
  std::string out_dir;
  int threads = 0;
};

/// Throws DomainError on lr <= 0, batch_size < 1 and similar.
void validate(const TrainConfig& cfg);

/// Reads the keys arch, grid, dv, modes, blocks, layers, M, q_linear, backward,
/// tau, S, solver, solver_steps, eval_solver_steps, lr, wd, schedule, epochs,
/// batch, clip, normalize, seed, data_dir, out_dir, threads. Unknown keys are
/// a FormatError. `backward` is exact, jfree, phantom or phantom(tau,S).
TrainConfig config_from(const KeyValues& kv);
KeyValues to_keyvalues(const TrainConfig& cfg);

// ---- optimizer -------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  NamedTensors m;
  NamedTensors v;
  long long t = 0;
};

/// One Adam step with decoupled weight decay at learning rate `lr`. Moments
/// are created on first use. Throws DimensionError when grads or state do
/// not match params.
void adam_step(fno::Params& params, const NamedTensors& grads, AdamState& state, double lr, const AdamConfig& cfg);

/// 1/2 (1 + cos(pi t / T)); 1 when T = 0.
double cosine_multiplier(long long t, long long T);

/// Scales all gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
double clip_global_norm(NamedTensors& grads, double max_norm);

// ---- evaluation ------------------------------------------------------------

struct EvalResult {
  double mean_rel_l2 = 0.0;
  /// Equilibrium residuals; zero for architectures without a solver.
  double mean_abs_residual = 0.0;
  double max_abs_residual = 0.0;
  double mean_rel_residual = 0.0;
  double max_rel_residual = 0.0;
  std::vector<double> rel_l2;
};

/// Throws DimensionError when the dataset channels or resolution do not fit
/// the model.
void check_compatible(const fno::ArchConfig& arch, const data::Dataset& d);

/// Evaluates samples [first, last) of `d`.
EvalResult evaluate_range(const fno::Model& model, const data::Dataset& d, Index first, Index last,
                          const fno::DeqOptions& opts, int threads);
/// The clean test split.
EvalResult evaluate(const fno::Model& model, const data::Dataset& d, const fno::DeqOptions& opts, int threads);

// ---- training --------------------------------------------------------------

struct MetricsRow {
  Index epoch = 0;
  double train_mse = 0.0;
  double test_rel_l2 = 0.0;
  double mean_abs_residual = 0.0;
  double mean_rel_residual = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  fno::Model best;
  fno::Model final;
  Index best_epoch = -1;
  std::vector<MetricsRow> metrics;
  /// Best-so-far test error after each epoch.
  std::vector<double> best_so_far;
};

fno::DeqOptions train_options(const TrainConfig& cfg);
fno::DeqOptions eval_options(const TrainConfig& cfg);

/// Per-channel RMS based factors of the training split: in_scale = 1/rms(f),
/// out_scale = rms(u). Channels with zero RMS get 1.
void set_normalization(fno::Model& model, const data::Dataset& d);

/// Trains from `init`. With epochs = 0 both returned models equal `init`.
/// A non-finite batch loss writes `dump_path` (when non-empty) and throws
/// NumericalError.
TrainResult train(const fno::Model& init, const data::Dataset& d, const TrainConfig& cfg,
                  const std::filesystem::path& dump_path = {});

std::string metrics_csv(const std::vector<MetricsRow>& rows);

/// Loads cfg.data_dir, initializes from cfg.seed, trains and writes the
/// outputs listed above to cfg.out_dir. Throws FormatError when outputs
/// exist and `force` is false.
TrainResult run_training(const TrainConfig& cfg, bool force);

}  // namespace steadyop::train
