#include "steadyop/cli.hpp"

#include "steadyop/datagen.hpp"
#include "steadyop/errors.hpp"
#include "steadyop/fno.hpp"
#include "steadyop/gradcheck.hpp"
#include "steadyop/keyvalue.hpp"
#include "steadyop/log.hpp"
#include "steadyop/parallel.hpp"
#include "steadyop/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace steadyop::cli {

namespace fs = std::filesystem;

namespace {

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw DomainError("not a number in list: '" + item + "'");
    }
  }
  if (out.empty()) throw DomainError("empty list");
  return out;
}

void write_output(const std::string& path, const std::string& text, bool force) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  if (!force && fs::exists(path)) throw FormatError(path + " exists; pass --force to overwrite");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
  if (!out) throw FormatError("write failed: " + path);
}

fno::DeqOptions solver_options(const std::string& solver, int steps) {
  fno::DeqOptions o;
  o.solver = fixedpoint::parse_solver(solver);
  o.solver_cfg.max_steps = steps;
  return o;
}

// ---- subcommands -------------------------------------------------------------

struct GenDataArgs {
  std::string pde = "darcy";
  long long n = 0;
  long long res = 64;
  unsigned long long seed = 0;
  double nu = 0.01;
  std::string out;
  std::string noise_target = "none";
  std::string noise_vars = "0";
  long long noise_seed = -1;
};

int run_gen_data(const GenDataArgs& a, int threads, bool force) {
  data::Manifest probe;
  probe.pde = data::parse_pde(a.pde);
  data::NoiseSchedule schedule;
  schedule.target = data::parse_noise_target(a.noise_target);
  schedule.variances = parse_doubles(a.noise_vars);
  schedule.seed = a.noise_seed >= 0 ? static_cast<std::uint64_t>(a.noise_seed) : a.seed;
  data::check_schedule(schedule, a.res);
  if (a.n < 1) throw DomainError("--n must be at least 1");
  if (!force && fs::exists(fs::path(a.out) / "manifest.txt"))
    throw FormatError(a.out + " already holds a dataset; pass --force to overwrite");

  log().info("generating {} {} samples at {}^2 (seed {}, {} threads)", a.n, a.pde, a.res, a.seed, threads);
  data::Dataset d = probe.pde == data::PdeKind::Darcy ? data::gen_darcy(a.n, a.res, a.seed, threads)
                                                      : data::gen_ns(a.n, a.res, a.nu, a.seed, threads);
  if (schedule.target != data::NoiseTarget::None || schedule.variances.size() > 1) d = data::apply_noise(d, schedule);
  d.manifest.noise = schedule;
  data::save_dataset(a.out, d, force);
  log().info("wrote {} samples to {}", a.n, a.out);
  return 0;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string data;
  std::string out;
};

int run_train(const TrainArgs& a, int threads, bool force) {
  KeyValues kv = a.config.empty() ? KeyValues{} : KeyValues::load(a.config);
  for (const std::string& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw DomainError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!a.data.empty()) kv.set("data_dir", a.data);
  if (!a.out.empty()) kv.set("out_dir", a.out);
  train::TrainConfig cfg = train::config_from(kv);
  cfg.threads = threads;
  const train::TrainResult r = train::run_training(cfg, force);
  log().info("{} parameters; best test rel L2 {} at epoch {}", fno::count_parameters(r.best.params),
             r.metrics.empty() ? 0.0 : r.metrics[static_cast<std::size_t>(std::max<Index>(r.best_epoch, 0))].test_rel_l2,
             r.best_epoch);
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string solver = "anderson";
  int solver_steps = 32;
  std::string out;
};

int run_eval(const EvalArgs& a, int threads, bool force) {
  const fno::Model model = fno::load_checkpoint(a.ckpt);
  const data::Dataset d = data::load_dataset(a.data);
  const train::EvalResult r = train::evaluate(model, d, solver_options(a.solver, a.solver_steps), threads);
  std::ostringstream csv;
  csv << "parameters,samples,test_rel_l2,mean_abs_residual,max_abs_residual,mean_rel_residual,max_rel_residual\n"
      << fno::count_parameters(model.params) << ',' << r.rel_l2.size() << ',' << format_double(r.mean_rel_l2) << ','
      << format_double(r.mean_abs_residual) << ',' << format_double(r.max_abs_residual) << ','
      << format_double(r.mean_rel_residual) << ',' << format_double(r.max_rel_residual) << '\n';
  write_output(a.out, csv.str(), force);
  log().info("test rel L2 {:.6e} over {} samples", r.mean_rel_l2, r.rel_l2.size());
  return 0;
}

struct GradcheckArgs {
  std::string arch = "all";
  std::string backward = "exact";
  unsigned long long seed = 0;
  long long grid = 8;
  long long dv = 4;
  long long modes = 3;
  double threshold = 1e-4;
  std::string out;
};

int run_gradcheck(const GradcheckArgs& a, bool force) {
  gradcheck::Options opt;
  opt.grid = a.grid;
  opt.dv = a.dv;
  opt.modes = a.modes;
  opt.seed = a.seed;
  opt.backward = implicit::parse_backward(a.backward);
  gradcheck::Report all;
  auto add = [&](const gradcheck::Report& r) { all.entries.insert(all.entries.end(), r.entries.begin(), r.entries.end()); };
  if (a.arch == "ops" || a.arch == "all") add(gradcheck::check_ops(opt));
  if (a.arch == "all") {
    for (auto k : {fno::ArchKind::Fno, fno::ArchKind::FnoPlusPlus, fno::ArchKind::FnoWT, fno::ArchKind::FnoDEQ})
      add(gradcheck::check_arch(k, opt));
  } else if (a.arch != "ops") {
    add(gradcheck::check_arch(fno::parse_arch(a.arch), opt));
  }
  std::ostringstream csv;
  csv << "name,rel_err,grad_norm\n";
  for (const auto& e : all.entries) csv << e.name << ',' << format_double(e.rel_err) << ',' << format_double(e.grad_norm) << '\n';
  if (!a.out.empty()) write_output(a.out, csv.str(), force);
  const double worst = all.max_rel_err();
  std::cout << "max_rel_grad_error " << format_double(worst) << '\n';
  return worst < a.threshold ? 0 : 2;
}

struct FpTraceArgs {
  std::string ckpt;
  std::string data;
  int max_steps = 64;
  std::string solver = "anderson";
  long long samples = 10;
  double tol = 0.0;
  std::string out;
};

int run_fp_trace(const FpTraceArgs& a, int threads, bool force) {
  const fno::Model model = fno::load_checkpoint(a.ckpt);
  if (model.arch.kind != fno::ArchKind::FnoDEQ) throw DomainError("fp-trace needs an fno-deq checkpoint");
  const data::Dataset d = data::load_dataset(a.data);
  train::check_compatible(model.arch, d);
  if (a.max_steps < 1) throw DomainError("--max-steps must be at least 1");
  fno::DeqOptions opts = solver_options(a.solver, a.max_steps);
  if (a.tol < 0.0) throw DomainError("--tol must be non-negative");
  const double tol = a.tol > 0.0 ? a.tol : std::numeric_limits<double>::min();
  opts.solver_cfg.tol_abs = tol;
  opts.solver_cfg.tol_rel = tol;

  const Index first = d.manifest.train_count();
  const Index count = std::min<Index>(a.samples, static_cast<Index>(d.inputs.size()) - first);
  if (count < 1) throw DomainError("dataset has no test samples to trace");
  std::vector<fixedpoint::SolverTrace> traces(static_cast<std::size_t>(count));
  parallel_for(count, threads, [&](std::int64_t i) {
    fno::ForwardStats st;
    fno::predict(model, d.inputs[first + i], opts, &st);
    traces[i] = std::move(st.trace);
  });
  // Mean over samples; a trace that stopped early holds its last value.
  std::size_t len = 0;
  for (const auto& t : traces) len = std::max(len, t.abs_residual.size());
  std::ostringstream csv;
  csv << "step,abs_residual,rel_residual\n";
  for (std::size_t s = 0; s < len; ++s) {
    double ab = 0.0, rel = 0.0;
    for (const auto& t : traces) {
      const std::size_t j = std::min(s, t.abs_residual.size() - 1);
      ab += t.abs_residual[j];
      rel += t.rel_residual[j];
    }
    csv << s << ',' << format_double(ab / static_cast<double>(count)) << ','
        << format_double(rel / static_cast<double>(count)) << '\n';
  }
  write_output(a.out, csv.str(), force);
  return 0;
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"Steady-state PDE operator learning: data, training, evaluation and checks"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  bool force = false;
  bool quiet = false;
  app.add_option("--threads", threads, "worker threads (default: $STEADYOP_THREADS, else all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--force", force, "overwrite existing outputs");
  app.add_flag("--quiet", quiet, "only log warnings and errors");

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "generate a Darcy or Navier-Stokes dataset");
  gen->add_option("--pde", gd.pde, "darcy | ns")->check(CLI::IsMember({"darcy", "ns"}));
  gen->add_option("--n", gd.n, "number of samples")->required();
  gen->add_option("--res", gd.res, "grid resolution (power of two)");
  gen->add_option("--seed", gd.seed, "base seed");
  gen->add_option("--nu", gd.nu, "viscosity (ns)");
  gen->add_option("--out", gd.out, "output directory")->required();
  gen->add_option("--noise-target", gd.noise_target, "none | inputs | observations")
      ->check(CLI::IsMember({"none", "inputs", "observations"}));
  gen->add_option("--noise-vars", gd.noise_vars, "comma-separated variance levels starting at 0");
  gen->add_option("--noise-seed", gd.noise_seed, "seed of the noise stream (default: --seed)");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model from a key=value config");
  tr->add_option("--config", ta.config, "config file")->check(CLI::ExistingFile);
  tr->add_option("--set", ta.sets, "override a config entry, key=value (repeatable)");
  tr->add_option("--data", ta.data, "dataset directory (data_dir)");
  tr->add_option("--out", ta.out, "output directory (out_dir)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the clean test split");
  ev->add_option("--ckpt", ea.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ea.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--solver", ea.solver, "picard | anderson | broyden")
      ->check(CLI::IsMember({"picard", "anderson", "broyden"}));
  ev->add_option("--solver-steps", ea.solver_steps, "fixed-point budget")->check(CLI::PositiveNumber);
  ev->add_option("--out", ea.out, "CSV output (default stdout)");

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "compare gradients with central finite differences");
  gc->add_option("--arch", ga.arch, "fno | fno++ | fno-wt | fno-deq | ops | all")
      ->check(CLI::IsMember({"fno", "fno++", "fno-wt", "fno-deq", "ops", "all"}));
  gc->add_option("--backward", ga.backward, "exact | jfree | phantom(tau,S)");
  gc->add_option("--seed", ga.seed, "seed");
  gc->add_option("--grid", ga.grid, "grid size")->check(CLI::PositiveNumber);
  gc->add_option("--dv", ga.dv, "hidden width")->check(CLI::PositiveNumber);
  gc->add_option("--modes", ga.modes, "retained modes")->check(CLI::PositiveNumber);
  gc->add_option("--threshold", ga.threshold, "pass threshold on the max relative error");
  gc->add_option("--out", ga.out, "per-tensor CSV");

  FpTraceArgs fa;
  auto* fp = app.add_subcommand("fp-trace", "record fixed-point residuals of a DEQ checkpoint");
  fp->add_option("--ckpt", fa.ckpt, "fno-deq checkpoint")->required()->check(CLI::ExistingFile);
  fp->add_option("--data", fa.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  fp->add_option("--max-steps", fa.max_steps, "solver budget")->check(CLI::PositiveNumber);
  fp->add_option("--solver", fa.solver, "picard | anderson | broyden")
      ->check(CLI::IsMember({"picard", "anderson", "broyden"}));
  fp->add_option("--samples", fa.samples, "test samples to average over")->check(CLI::PositiveNumber);
  fp->add_option("--tol", fa.tol, "early-stop tolerance (0 runs the full budget)");
  fp->add_option("--out", fa.out, "CSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (quiet) log().set_level(spdlog::level::warn);
  try {
    const int workers = resolve_threads(threads);
    if (*gen) return run_gen_data(gd, workers, force);
    if (*tr) return run_train(ta, workers, force);
    if (*ev) return run_eval(ea, workers, force);
    if (*gc) return run_gradcheck(ga, force);
    if (*fp) return run_fp_trace(fa, workers, force);
  } catch (const NumericalError& e) {
    log().error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    log().error("{}", e.what());
    return 1;
  }
  return 1;
}

}  // namespace steadyop::cli
