#include "steadyop/datagen.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/fnt.hpp"
#include "steadyop/keyvalue.hpp"
#include "steadyop/log.hpp"
#include "steadyop/parallel.hpp"
#include "steadyop/pde.hpp"
#include "steadyop/rng.hpp"
#include "steadyop/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace steadyop::data {
namespace {

namespace sp = spectral;

// Sub-stream tags; each sample index owns one stream per purpose.
constexpr std::uint64_t kFieldStream = 0;
constexpr std::uint64_t kNoiseStream = 1ull << 40;
constexpr std::uint64_t kPermStream = 1ull << 41;

std::uint64_t sample_seed(std::uint64_t seed, Index index, std::uint64_t tag) {
  auto rng = make_rng(seed, tag + static_cast<std::uint64_t>(index));
  return rng();
}

Tensor with_channel(const Tensor& t) { return t.reshaped({t.dim(0), t.dim(1), 1}); }

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw FormatError("bad number in list: '" + item + "'");
    }
  }
  return out;
}

std::string join_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

}  // namespace

PdeKind parse_pde(const std::string& name) {
  if (name == "darcy") return PdeKind::Darcy;
  if (name == "ns") return PdeKind::NavierStokes;
  throw DomainError("unknown pde '" + name + "' (darcy | ns)");
}

std::string to_string(PdeKind kind) { return kind == PdeKind::Darcy ? "darcy" : "ns"; }

NoiseTarget parse_noise_target(const std::string& name) {
  if (name == "none") return NoiseTarget::None;
  if (name == "inputs") return NoiseTarget::Inputs;
  if (name == "observations") return NoiseTarget::Observations;
  throw DomainError("unknown noise target '" + name + "' (none | inputs | observations)");
}

std::string to_string(NoiseTarget target) {
  switch (target) {
    case NoiseTarget::None: return "none";
    case NoiseTarget::Inputs: return "inputs";
    case NoiseTarget::Observations: return "observations";
  }
  return "?";
}

void check_schedule(const NoiseSchedule& s, Index resolution) {
  if (s.variances.empty() || s.variances.front() != 0.0) throw DomainError("noise schedule must start at variance 0");
  for (std::size_t i = 1; i < s.variances.size(); ++i)
    if (!(s.variances[i] > s.variances[i - 1])) throw DomainError("noise variances must increase strictly");
  if (s.variances.back() > 1.0 / static_cast<double>(resolution))
    throw DomainError("largest noise variance " + format_double(s.variances.back()) + " exceeds 1/resolution");
  if (s.variances.size() > 1 && s.target == NoiseTarget::None)
    throw DomainError("noise schedule has nonzero levels but target 'none'");
}

Index Manifest::train_count() const {
  return static_cast<Index>(std::floor(split * static_cast<double>(n) + 1e-9));
}

// ---- samples ---------------------------------------------------------------

Tensor darcy_coefficient(Index res, std::uint64_t seed, Index index) {
  // Covariance (-lap + 9)^-2 on the unit square, written in integer
  // frequencies: (1 + (4 pi^2 / 9) |k|^2)^-2 up to scale.
  const sp::GrfParams grf{1.0, 4.0 * std::numbers::pi * std::numbers::pi / 9.0, 2.0};
  Tensor field = sp::grf_sample(sample_seed(seed, index, kFieldStream), res, res, grf);
  for (Index i = 0; i < field.size(); ++i) field[i] = field[i] >= 0.0 ? 12.0 : 3.0;
  return field;
}

DarcySample gen_darcy_sample(Index res, std::uint64_t seed, Index index, double tol) {
  pde::DarcyProblem p{darcy_coefficient(res, seed, index), Tensor::constant({res, res}, 1.0)};
  Tensor u;
  try {
    u = pde::darcy_solve(p, tol);
  } catch (const NumericalError& e) {
    log().error("darcy sample {} (seed {}) failed: {}", index, seed, e.what());
    throw;
  }
  return {with_channel(p.a), with_channel(u)};
}

NsSample gen_ns_sample(Index res, double nu, std::uint64_t seed, Index index, const NsGenConfig& cfg) {
  if (!(nu > 0.0)) throw DomainError("gen_ns: viscosity must be positive");
  if (res < 8) throw DimensionError("gen_ns: resolution must be at least 8");
  Tensor omega = sp::grf_sample(sample_seed(seed, index, kFieldStream), res, res);
  const Tensor g = pde::kolmogorov_forcing(res);
  const int steps = static_cast<int>(std::lround(cfg.horizon / cfg.dt));
  for (int s = 0; s < steps; ++s) {
    pde::StepInfo info;
    omega = pde::ns_step(omega, nu, g, cfg.dt, &info);
    if (info.cfl > 1.0) {
      log().error("ns sample {} (seed {}) violates CFL ({:.3f}) at step {}", index, seed, info.cfl, s);
      throw NumericalError("gen_ns: CFL violation in sample " + std::to_string(index));
    }
  }
  // Band-limit so the pointwise product u . grad w is alias-free on the grid.
  omega = sp::truncate_modes(omega, res / 4 - 1);
  omega.array() -= omega.array().mean();
  const Tensor f = pde::ns_force_from_solution(omega, nu);
  Tensor centered = f;
  centered.array() -= centered.array().mean();
  const auto [f1, f2] = pde::velocity_from_vorticity(centered);
  Tensor force({res, res, 2});
  for (Index k = 0; k < res * res; ++k) {
    force[2 * k] = f1[k];
    force[2 * k + 1] = f2[k];
  }
  return {std::move(force), with_channel(omega)};
}

double ns_consistency(const Tensor& force, const Tensor& omega, double nu) {
  if (force.rank() != 3 || force.dim(2) != 2) throw DimensionError("ns_consistency: force must be [n, n, 2]");
  const Index n = force.dim(0);
  Tensor f1({n, n}), f2({n, n});
  for (Index k = 0; k < n * n; ++k) {
    f1[k] = force[2 * k];
    f2[k] = force[2 * k + 1];
  }
  const Tensor f = pde::curl(f1, f2);
  const Tensor w = omega.reshaped({n, n});
  return norm(pde::ns_residual(w, nu, f)) / norm(f);
}

// ---- datasets --------------------------------------------------------------

Dataset gen_darcy(Index n, Index res, std::uint64_t seed, int threads) {
  if (n < 1) throw DomainError("gen_darcy: need at least one sample");
  if (!sp::is_power_of_two(res) || res < 8) throw DimensionError("gen_darcy: resolution must be a power of two >= 8");
  Dataset d;
  d.manifest = Manifest{PdeKind::Darcy, n, res, seed, 0.0, {}, 0.9, 1};
  d.inputs.resize(static_cast<std::size_t>(n));
  d.targets.resize(static_cast<std::size_t>(n));
  parallel_for(n, threads, [&](std::int64_t i) {
    DarcySample s = gen_darcy_sample(res, seed, i);
    d.inputs[i] = std::move(s.a);
    d.targets[i] = std::move(s.u);
  });
  d.noise_var.assign(static_cast<std::size_t>(n), 0.0);
  return d;
}

Dataset gen_ns(Index n, Index res, double nu, std::uint64_t seed, int threads) {
  if (n < 1) throw DomainError("gen_ns: need at least one sample");
  if (!sp::is_power_of_two(res)) throw DimensionError("gen_ns: resolution must be a power of two");
  Dataset d;
  d.manifest = Manifest{PdeKind::NavierStokes, n, res, seed, nu, {}, 0.9, 1};
  d.inputs.resize(static_cast<std::size_t>(n));
  d.targets.resize(static_cast<std::size_t>(n));
  parallel_for(n, threads, [&](std::int64_t i) {
    NsSample s = gen_ns_sample(res, nu, seed, i);
    d.inputs[i] = std::move(s.force);
    d.targets[i] = std::move(s.omega);
  });
  d.noise_var.assign(static_cast<std::size_t>(n), 0.0);
  return d;
}

std::vector<int> assign_noise_levels(Index n, Index levels, std::uint64_t seed) {
  if (levels < 1) throw DomainError("assign_noise_levels: need at least one level");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  auto rng = make_rng(seed, kPermStream);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle.
  for (Index i = n - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[i], order[j]);
  }
  const Index per = n / levels;
  const Index first = per + n % levels;
  std::vector<int> level(static_cast<std::size_t>(n), 0);
  for (Index pos = first; pos < n; ++pos) level[order[pos]] = static_cast<int>(1 + (pos - first) / per);
  return level;
}

Dataset apply_noise(const Dataset& clean, const NoiseSchedule& schedule) {
  check_schedule(schedule, clean.manifest.res);
  Dataset d = clean;
  d.manifest.noise = schedule;
  const Index n_train = d.manifest.train_count();
  d.noise_var.assign(d.inputs.size(), 0.0);
  if (schedule.target == NoiseTarget::None || schedule.variances.size() == 1) return d;
  const std::vector<int> level = assign_noise_levels(n_train, static_cast<Index>(schedule.variances.size()), schedule.seed);
  for (Index i = 0; i < n_train; ++i) {
    const double var = schedule.variances[static_cast<std::size_t>(level[i])];
    d.noise_var[i] = var;
    if (var == 0.0) continue;
    Tensor& t = schedule.target == NoiseTarget::Inputs ? d.inputs[i] : d.targets[i];
    auto rng = make_rng(schedule.seed, kNoiseStream + static_cast<std::uint64_t>(i));
    std::normal_distribution<double> normal(0.0, std::sqrt(var));
    for (Index k = 0; k < t.size(); ++k) t[k] += normal(rng);
  }
  return d;
}

// ---- storage ---------------------------------------------------------------

std::string sample_name(const char* kind, Index i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05lld.fnt", kind, static_cast<long long>(i));
  return buf;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir / "manifest.txt") && !force)
    throw FormatError("dataset already exists at " + dir.string() + " (use --force to overwrite)");
  fs::create_directories(dir);
  const Manifest& m = d.manifest;
  KeyValues kv;
  kv.set("pde", to_string(m.pde));
  kv.set("n", std::to_string(m.n));
  kv.set("res", std::to_string(m.res));
  kv.set("seed", std::to_string(m.seed));
  kv.set("nu", format_double(m.nu));
  kv.set("noise_target", to_string(m.noise.target));
  kv.set("noise_vars", join_list(m.noise.variances));
  kv.set("noise_seed", std::to_string(m.noise.seed));
  kv.set("split", format_double(m.split));
  kv.set("version", std::to_string(m.version));
  for (Index i = 0; i < m.n; ++i) {
    save_fnt(dir / sample_name("input", i), d.inputs[i]);
    save_fnt(dir / sample_name("target", i), d.targets[i]);
  }
  // Manifest last, so a complete manifest implies complete tensors.
  kv.save(dir / "manifest.txt");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const KeyValues kv = KeyValues::load(dir / "manifest.txt");
  Dataset d;
  Manifest& m = d.manifest;
  m.pde = parse_pde(kv.get("pde"));
  m.n = kv.get_int("n");
  m.res = kv.get_int("res");
  m.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  m.nu = kv.get_double("nu");
  m.noise.target = parse_noise_target(kv.get("noise_target"));
  m.noise.variances = parse_list(kv.get("noise_vars"));
  m.noise.seed = static_cast<std::uint64_t>(std::stoull(kv.get_or("noise_seed", "0")));
  m.split = kv.get_double("split");
  m.version = static_cast<int>(kv.get_int("version"));
  if (m.version != 1) throw FormatError("unsupported dataset version " + std::to_string(m.version));
  if (m.n < 1) throw FormatError("manifest: n must be positive");
  if (!(m.split > 0.0) || m.split > 1.0) throw FormatError("manifest: split must lie in (0, 1]");
  check_schedule(m.noise, m.res);
  const Index df = m.pde == PdeKind::Darcy ? 1 : 2;
  for (Index i = 0; i < m.n; ++i) {
    Tensor in = load_fnt(dir / sample_name("input", i));
    Tensor out = load_fnt(dir / sample_name("target", i));
    if (in.shape() != Shape{m.res, m.res, df} || out.shape() != Shape{m.res, m.res, 1})
      throw FormatError("sample " + std::to_string(i) + " does not match the manifest shapes");
    d.inputs.push_back(std::move(in));
    d.targets.push_back(std::move(out));
  }
  d.noise_var.assign(static_cast<std::size_t>(m.n), 0.0);
  if (m.noise.target != NoiseTarget::None && m.noise.variances.size() > 1) {
    const auto level = assign_noise_levels(m.train_count(), static_cast<Index>(m.noise.variances.size()), m.noise.seed);
    for (Index i = 0; i < m.train_count(); ++i) d.noise_var[i] = m.noise.variances[level[i]];
  }
  return d;
}

}  // namespace steadyop::data
