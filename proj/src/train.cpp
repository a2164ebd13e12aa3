#include "steadyop/train.hpp"

#include "steadyop/autodiff.hpp"
#include "steadyop/errors.hpp"
#include "steadyop/fnt.hpp"
#include "steadyop/log.hpp"
#include "steadyop/parallel.hpp"
#include "steadyop/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace steadyop::train {

namespace fs = std::filesystem;

Schedule parse_schedule(const std::string& name) {
  if (name == "constant") return Schedule::Constant;
  if (name == "cosine") return Schedule::Cosine;
  throw DomainError("unknown lr schedule '" + name + "' (constant|cosine)");
}

std::string to_string(Schedule s) { return s == Schedule::Constant ? "constant" : "cosine"; }

void validate(const TrainConfig& cfg) {
  fno::validate(cfg.arch);
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw DomainError("lr must be positive");
  if (!(cfg.weight_decay >= 0.0)) throw DomainError("weight decay must be non-negative");
  if (cfg.batch_size < 1) throw DomainError("batch size must be at least 1");
  if (cfg.epochs < 0) throw DomainError("epochs must be non-negative");
  if (cfg.solver_steps < 1) throw DomainError("solver_steps must be at least 1");
  if (cfg.eval_solver_steps < 0) throw DomainError("eval_solver_steps must be non-negative");
  if (!(cfg.clip > 0.0)) throw DomainError("clip must be positive");
  if (cfg.backward.kind == implicit::BackwardKind::Phantom) {
    const auto& p = cfg.backward.phantom;
    if (!(p.tau > 0.0 && p.tau <= 1.0) || p.steps < 1) throw DomainError("phantom needs 0 < tau <= 1 and S >= 1");
  }
}

namespace {

const std::set<std::string> kKeys{"arch",  "grid",  "dv",     "modes",     "blocks",         "layers",            "M",
                                  "q_linear", "backward", "tau",   "S",              "solver",            "solver_steps",
                                  "eval_solver_steps", "lr", "wd", "schedule",       "epochs",            "batch",
                                  "clip",  "normalize", "seed",    "data_dir",       "out_dir",           "threads"};

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw FormatError("key '" + key + "' must be 0/1/true/false, got '" + v + "'");
}

}  // namespace

TrainConfig config_from(const KeyValues& kv) {
  for (const auto& [k, v] : kv.entries())
    if (!kKeys.count(k)) throw FormatError("unknown config key '" + k + "'");
  TrainConfig c;
  if (kv.has("arch")) c.arch.kind = fno::parse_arch(kv.get("arch"));
  if (kv.has("grid")) c.arch.grid = parse_bool("grid", kv.get("grid"));
  if (kv.has("dv")) c.arch.dv = kv.get_int("dv");
  if (kv.has("modes")) c.arch.modes = kv.get_int("modes");
  if (kv.has("blocks")) c.arch.blocks = kv.get_int("blocks");
  if (kv.has("layers")) c.arch.layers = kv.get_int("layers");
  if (kv.has("M")) c.arch.tie = kv.get_int("M");
  if (kv.has("q_linear") && kv.get("q_linear") != "auto") c.q_linear = parse_bool("q_linear", kv.get("q_linear"));
  if (kv.has("backward")) {
    std::string b = kv.get("backward");
    if (b == "phantom") b = "phantom(" + kv.get_or("tau", "0.5") + "," + kv.get_or("S", "1") + ")";
    c.backward = implicit::parse_backward(b);
  } else if (kv.has("tau") || kv.has("S")) {
    throw FormatError("tau and S need backward=phantom");
  }
  if (kv.has("solver")) c.solver = fixedpoint::parse_solver(kv.get("solver"));
  if (kv.has("solver_steps")) c.solver_steps = static_cast<int>(kv.get_int("solver_steps"));
  if (kv.has("eval_solver_steps")) c.eval_solver_steps = static_cast<int>(kv.get_int("eval_solver_steps"));
  if (kv.has("lr")) c.lr = kv.get_double("lr");
  if (kv.has("wd")) c.weight_decay = kv.get_double("wd");
  if (kv.has("schedule")) c.schedule = parse_schedule(kv.get("schedule"));
  if (kv.has("epochs")) c.epochs = kv.get_int("epochs");
  if (kv.has("batch")) c.batch_size = kv.get_int("batch");
  if (kv.has("clip")) c.clip = kv.get_double("clip");
  if (kv.has("normalize")) c.normalize = parse_bool("normalize", kv.get("normalize"));
  if (kv.has("seed")) c.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  c.data_dir = kv.get_or("data_dir", "");
  c.out_dir = kv.get_or("out_dir", "");
  if (kv.has("threads")) c.threads = static_cast<int>(kv.get_int("threads"));
  validate(c);
  return c;
}

KeyValues to_keyvalues(const TrainConfig& c) {
  KeyValues kv;
  kv.set("arch", fno::to_string(c.arch.kind));
  kv.set("grid", c.arch.grid ? "1" : "0");
  kv.set("dv", std::to_string(c.arch.dv));
  kv.set("modes", std::to_string(c.arch.modes));
  kv.set("blocks", std::to_string(c.arch.blocks));
  kv.set("layers", std::to_string(c.arch.layers));
  kv.set("M", std::to_string(c.arch.tie));
  kv.set("q_linear", c.q_linear ? (*c.q_linear ? "1" : "0") : "auto");
  kv.set("backward", implicit::to_string(c.backward));
  kv.set("solver", fixedpoint::to_string(c.solver));
  kv.set("solver_steps", std::to_string(c.solver_steps));
  kv.set("eval_solver_steps", std::to_string(c.eval_solver_steps));
  kv.set("lr", format_double(c.lr));
  kv.set("wd", format_double(c.weight_decay));
  kv.set("schedule", to_string(c.schedule));
  kv.set("epochs", std::to_string(c.epochs));
  kv.set("batch", std::to_string(c.batch_size));
  kv.set("clip", format_double(c.clip));
  kv.set("normalize", c.normalize ? "1" : "0");
  kv.set("seed", std::to_string(c.seed));
  kv.set("data_dir", c.data_dir);
  kv.set("out_dir", c.out_dir);
  return kv;
}

// ---- optimizer -------------------------------------------------------------

void adam_step(fno::Params& params, const NamedTensors& grads, AdamState& state, double lr, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw DimensionError("adam_step: gradient set does not match parameters");
  for (const auto& [name, p] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) throw DimensionError("adam_step: no gradient for '" + name + "'");
    expect_shape(g->second, p.shape(), "adam gradient");
    for (NamedTensors* moments : {&state.m, &state.v}) {
      const auto it = moments->find(name);
      if (it == moments->end())
        moments->emplace(name, Tensor(p.shape()));
      else
        expect_shape(it->second, p.shape(), "adam moment");
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const Eigen::ArrayXd& g = grads.at(name).array();
    Eigen::ArrayXd& m = state.m.at(name).array();
    Eigen::ArrayXd& v = state.v.at(name).array();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    p.array() -= lr * ((m / c1) / ((v / c2).sqrt() + cfg.eps) + cfg.weight_decay * p.array());
  }
}

double cosine_multiplier(long long t, long long T) {
  if (T <= 0) return 1.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(T)));
}

double clip_global_norm(NamedTensors& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.array().square().sum();
  const double n = std::sqrt(sq);
  if (n > max_norm)
    for (auto& [name, g] : grads) g.array() *= max_norm / n;
  return n;
}

// ---- evaluation ------------------------------------------------------------

void check_compatible(const fno::ArchConfig& arch, const data::Dataset& d) {
  if (d.inputs.empty()) throw DimensionError("dataset is empty");
  const Tensor& x = d.inputs.front();
  const Tensor& y = d.targets.front();
  if (x.rank() != 3 || x.dim(2) != arch.df)
    throw DimensionError("dataset inputs have " + shape_string(x.shape()) + ", model expects " +
                         std::to_string(arch.df) + " data channels");
  if (y.rank() != 3 || y.dim(2) != arch.du)
    throw DimensionError("dataset targets have " + shape_string(y.shape()) + ", model expects " +
                         std::to_string(arch.du) + " solution channels");
  if (arch.modes > x.dim(0) / 2 - 1 || arch.modes > x.dim(1) / 2 - 1)
    throw DimensionError("resolution " + std::to_string(x.dim(0)) + " cannot hold " + std::to_string(arch.modes) +
                         " modes");
}

EvalResult evaluate_range(const fno::Model& model, const data::Dataset& d, Index first, Index last,
                          const fno::DeqOptions& opts, int threads) {
  check_compatible(model.arch, d);
  EvalResult r;
  const Index n = last - first;
  if (n <= 0) return r;
  std::vector<double> err(static_cast<std::size_t>(n)), abs_res(err.size()), rel_res(err.size());
  parallel_for(n, threads, [&](std::int64_t i) {
    fno::ForwardStats st;
    const Tensor pred = fno::predict(model, d.inputs[first + i], opts, &st);
    err[i] = relative_l2(pred, d.targets[first + i]);
    abs_res[i] = st.abs_residual;
    rel_res[i] = st.rel_residual;
  });
  for (Index i = 0; i < n; ++i) {
    r.mean_rel_l2 += err[i];
    r.mean_abs_residual += abs_res[i];
    r.mean_rel_residual += rel_res[i];
    r.max_abs_residual = std::max(r.max_abs_residual, abs_res[i]);
    r.max_rel_residual = std::max(r.max_rel_residual, rel_res[i]);
  }
  r.mean_rel_l2 /= static_cast<double>(n);
  r.mean_abs_residual /= static_cast<double>(n);
  r.mean_rel_residual /= static_cast<double>(n);
  r.rel_l2 = std::move(err);
  return r;
}

EvalResult evaluate(const fno::Model& model, const data::Dataset& d, const fno::DeqOptions& opts, int threads) {
  const Index n = static_cast<Index>(d.inputs.size());
  const Index first = d.manifest.n == n ? d.manifest.train_count() : 0;
  if (first >= n) throw DimensionError("dataset has no test samples");
  return evaluate_range(model, d, first, n, opts, threads);
}

// ---- training --------------------------------------------------------------

fno::DeqOptions train_options(const TrainConfig& cfg) {
  fno::DeqOptions o;
  o.solver = cfg.solver;
  o.solver_cfg.max_steps = cfg.solver_steps;
  o.backward = cfg.backward;
  return o;
}

fno::DeqOptions eval_options(const TrainConfig& cfg) {
  fno::DeqOptions o = train_options(cfg);
  if (cfg.eval_solver_steps > 0) o.solver_cfg.max_steps = cfg.eval_solver_steps;
  return o;
}

namespace {

Tensor channel_rms(const std::vector<Tensor>& fields, Index count) {
  const Index c = fields.front().dim(2);
  Eigen::ArrayXd sq = Eigen::ArrayXd::Zero(c);
  Index points = 0;
  for (Index i = 0; i < count; ++i) {
    const auto m = fields[i].matrix(c);
    sq += m.array().square().colwise().sum().transpose();
    points += m.rows();
  }
  Tensor out({c});
  for (Index j = 0; j < c; ++j) out[j] = std::sqrt(sq[j] / static_cast<double>(points));
  return out;
}

Index train_split(const data::Dataset& d) {
  const Index n = static_cast<Index>(d.inputs.size());
  return d.manifest.n == n ? d.manifest.train_count() : n;
}

void dump_batch(const fs::path& path, const fno::Model& model, const data::Dataset& d,
                const std::vector<Index>& batch, const std::vector<double>& losses, Index epoch) {
  NamedTensors out = fno::to_checkpoint(model);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::string tag = std::to_string(batch[i]);
    out["batch.input." + tag] = d.inputs[batch[i]];
    out["batch.target." + tag] = d.targets[batch[i]];
  }
  Tensor l({static_cast<Index>(losses.size())});
  for (std::size_t i = 0; i < losses.size(); ++i) l[static_cast<Index>(i)] = losses[i];
  out["batch.loss"] = l;
  out["batch.epoch"] = Tensor::scalar(static_cast<double>(epoch));
  save_fnc(path, out);
}

// 1 / scale[c] broadcast over a [H, W, C] field.
Tensor inverse_channel_scale(const Shape& shape, const Tensor& scale) {
  Tensor w(shape);
  const Index c = shape.back();
  for (Index i = 0; i < w.size(); ++i) w[i] = 1.0 / scale[i % c];
  return w;
}

}  // namespace

void set_normalization(fno::Model& model, const data::Dataset& d) {
  const Index n = train_split(d);
  if (n < 1) throw DimensionError("normalization needs training samples");
  Tensor in = channel_rms(d.inputs, n);
  Tensor out = channel_rms(d.targets, n);
  for (Index j = 0; j < in.size(); ++j) in[j] = in[j] > 0.0 ? 1.0 / in[j] : 1.0;
  for (Index j = 0; j < out.size(); ++j) out[j] = out[j] > 0.0 ? out[j] : 1.0;
  model.in_scale = std::move(in);
  model.out_scale = std::move(out);
}

TrainResult train(const fno::Model& init, const data::Dataset& d, const TrainConfig& cfg, const fs::path& dump_path) {
  validate(cfg);
  check_compatible(init.arch, d);
  fno::check_params(init.arch, init.params);
  const int threads = resolve_threads(cfg.threads);
  const Index n_train = train_split(d);
  if (n_train < 1 && cfg.epochs > 0) throw DimensionError("dataset has no training samples");
  const bool has_test = n_train < static_cast<Index>(d.inputs.size());

  TrainResult res;
  res.best = init;
  res.final = init;
  if (cfg.epochs == 0) return res;

  const fno::DeqOptions topts = train_options(cfg);
  const fno::DeqOptions eopts = eval_options(cfg);
  AdamConfig adam;
  adam.weight_decay = cfg.weight_decay;
  AdamState state;
  fno::Model model = init;
  double best = std::numeric_limits<double>::infinity();
  const auto start = std::chrono::steady_clock::now();

  std::vector<Index> order(static_cast<std::size_t>(n_train));
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    auto rng = make_rng(cfg.seed, 0x7a1000 + static_cast<std::uint64_t>(epoch));
    for (Index i = n_train - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1))]);

    const double lr =
        cfg.lr * (cfg.schedule == Schedule::Cosine ? cosine_multiplier(epoch, cfg.epochs) : 1.0);
    double loss_sum = 0.0;
    for (Index b0 = 0; b0 < n_train; b0 += cfg.batch_size) {
      const Index nb = std::min(cfg.batch_size, n_train - b0);
      std::vector<Index> batch(order.begin() + b0, order.begin() + b0 + nb);
      std::vector<double> losses(static_cast<std::size_t>(nb));
      std::vector<NamedTensors> grads(static_cast<std::size_t>(nb));
      parallel_for(nb, threads, [&](std::int64_t i) {
        try {
          ad::Graph g;
          const Tensor& target = d.targets[batch[i]];
          const ad::Var out = fno::forward(g, model, d.inputs[batch[i]], topts);
          // The objective is the MSE in normalized output units, so Adam sees
          // gradients of order one whatever the physical scale of the targets.
          const ad::Var w = g.constant(model.out_scale.size() ? inverse_channel_scale(target.shape(), model.out_scale)
                                                               : Tensor::constant(target.shape(), 1.0));
          const ad::Var loss = ad::mse(ad::mul(out, w), ad::mul(g.constant(target), w));
          losses[i] = (out.value().array() - target.array()).square().mean();
          grads[i] = g.backward(loss);
        } catch (const NumericalError& e) {
          if (dynamic_cast<const ConvergenceError*>(&e)) throw;
          log().warn("sample {}: {}", batch[i], e.what());
          losses[i] = std::numeric_limits<double>::quiet_NaN();
        }
      });
      double batch_loss = 0.0;
      for (double l : losses) batch_loss += l;
      if (!std::isfinite(batch_loss)) {
        if (!dump_path.empty()) dump_batch(dump_path, model, d, batch, losses, epoch);
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) +
                             (dump_path.empty() ? "" : "; batch dumped to " + dump_path.string()));
      }
      loss_sum += batch_loss;
      NamedTensors total = std::move(grads[0]);
      for (Index i = 1; i < nb; ++i)
        for (auto& [name, t] : total) t.array() += grads[i].at(name).array();
      for (auto& [name, t] : total) t.array() /= static_cast<double>(nb);
      // Leaves without a path to the loss (P1 without u0, unused blocks) get
      // zero gradients and only feel weight decay.
      for (const auto& [name, p] : model.params)
        if (!total.count(name)) total.emplace(name, Tensor(p.shape()));
      clip_global_norm(total, cfg.clip);
      adam_step(model.params, total, state, lr, adam);
    }

    MetricsRow row;
    row.epoch = epoch;
    row.train_mse = loss_sum / static_cast<double>(n_train);
    if (has_test) {
      const EvalResult ev = evaluate(model, d, eopts, threads);
      row.test_rel_l2 = ev.mean_rel_l2;
      row.mean_abs_residual = ev.mean_abs_residual;
      row.mean_rel_residual = ev.mean_rel_residual;
    } else {
      row.test_rel_l2 = std::numeric_limits<double>::quiet_NaN();
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (has_test ? row.test_rel_l2 < best : true) {
      if (has_test) best = row.test_rel_l2;
      res.best = model;
      res.best_epoch = epoch;
    }
    res.best_so_far.push_back(best);
    res.metrics.push_back(row);
    log().info("epoch {} train_mse {:.4e} test_rel_l2 {:.4e} lr {:.3e} ({:.1f}s)", epoch, row.train_mse,
               row.test_rel_l2, lr, row.seconds);
  }
  res.final = std::move(model);
  return res;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << "epoch,train_mse,test_rel_l2,mean_abs_residual,mean_rel_residual,seconds\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << format_double(r.train_mse) << ',' << format_double(r.test_rel_l2) << ','
        << format_double(r.mean_abs_residual) << ',' << format_double(r.mean_rel_residual) << ','
        << format_double(r.seconds) << '\n';
  return out.str();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed: " + path.string());
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg_in, bool force) {
  TrainConfig cfg = cfg_in;
  if (cfg.data_dir.empty()) throw FormatError("data_dir is not set");
  if (cfg.out_dir.empty()) throw FormatError("out_dir is not set");
  const fs::path out = cfg.out_dir;
  if (!force && fs::exists(out / "metrics.csv"))
    throw FormatError(out.string() + " already holds training outputs; pass --force to overwrite");

  const data::Dataset d = data::load_dataset(cfg.data_dir);
  cfg.arch.df = d.inputs.front().dim(2);
  cfg.arch.du = d.targets.front().dim(2);
  if (cfg.q_linear) {
    cfg.arch.q_linear = *cfg.q_linear;
  } else {
    bool negative = false;
    for (Index i = 0; i < d.manifest.train_count() && !negative; ++i)
      negative = d.targets[i].array().minCoeff() < 0.0;
    cfg.arch.q_linear = negative;
  }
  validate(cfg);

  fno::Model init{cfg.arch, fno::init_params(cfg.arch, cfg.seed), {}, {}};
  if (cfg.normalize) set_normalization(init, d);
  fs::create_directories(out);
  TrainResult res = train(init, d, cfg, out / "nan_dump.fnc");

  std::ostringstream sel;
  sel << "epoch,test_rel_l2,best_rel_l2,saved\n";
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < res.metrics.size(); ++i) {
    const bool saved = res.best_so_far[i] < prev || static_cast<Index>(i) == res.best_epoch;
    sel << res.metrics[i].epoch << ',' << format_double(res.metrics[i].test_rel_l2) << ','
        << format_double(res.best_so_far[i]) << ',' << (saved ? 1 : 0) << '\n';
    prev = res.best_so_far[i];
  }
  write_text(out / "metrics.csv", metrics_csv(res.metrics));
  write_text(out / "selection.csv", sel.str());
  write_text(out / "config.txt", to_keyvalues(cfg).str());
  fno::save_checkpoint(out / "best.fnc", res.best);
  fno::save_checkpoint(out / "final.fnc", res.final);
  return res;
}

}  // namespace steadyop::train
