#include "scenarios.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/spectral.hpp"
#include "steadyop/train.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace steadyop;
namespace fs = std::filesystem;

namespace {

// In-memory dataset: inputs are smooth random fields, targets come from
// `map`. 90/10 split.
data::Dataset synthetic(Index n, Index res, const std::function<Tensor(const Tensor&)>& map, std::uint64_t seed = 0) {
  data::Dataset d;
  d.manifest.n = n;
  d.manifest.res = res;
  d.manifest.seed = seed;
  for (Index i = 0; i < n; ++i) {
    Tensor f = spectral::grf_sample(seed * 1000 + static_cast<std::uint64_t>(i), res, res).reshaped({res, res, 1});
    f.array() /= std::sqrt(f.array().square().mean());
    d.targets.push_back(map(f));
    d.inputs.push_back(std::move(f));
  }
  d.noise_var.assign(static_cast<std::size_t>(n), 0.0);
  return d;
}

fno::ArchConfig tiny(fno::ArchKind kind) {
  fno::ArchConfig a;
  a.kind = kind;
  a.dv = 6;
  a.modes = 3;
  a.layers = 2;
  return a;
}

train::TrainConfig tiny_config(fno::ArchKind kind, Index epochs) {
  train::TrainConfig c;
  c.arch = tiny(kind);
  c.epochs = epochs;
  c.batch_size = 4;
  c.lr = 5e-3;
  c.solver_steps = 12;
  c.threads = 1;
  c.backward = {implicit::BackwardKind::Phantom, {0.5, 2}};
  return c;
}

fno::Model init_model(const train::TrainConfig& c, const data::Dataset& d, bool q_linear) {
  fno::ArchConfig a = c.arch;
  a.q_linear = q_linear;
  fno::Model m{a, fno::init_params(a, c.seed), {}, {}};
  if (c.normalize) train::set_normalization(m, d);
  return m;
}

Tensor scaled(const Tensor& f, double s) {
  Tensor t = f;
  t.array() *= s;
  return t;
}

}  // namespace

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  fno::Params p{{"w", Tensor({3}, {1.0, -2.0, 3.0})}};
  const fno::Params before = p;
  train::AdamState st;
  for (int i = 0; i < 3; ++i) train::adam_step(p, {{"w", Tensor({3})}}, st, 0.1, {});
  EXPECT_TRUE(p.at("w") == before.at("w"));
  EXPECT_THROW(train::adam_step(p, {{"w", Tensor({2})}}, st, 0.1, {}), DimensionError);
  EXPECT_THROW(train::adam_step(p, {{"v", Tensor({3})}}, st, 0.1, {}), DimensionError);
}

TEST(Adam, FirstStepHandComputed) {
  // m1 = 0.1, v1 = 0.001; bias corrected 1 and 1: step lr * 1 / (1 + 1e-8).
  fno::Params p{{"w", Tensor({1}, {0.0})}};
  train::AdamState st;
  train::adam_step(p, {{"w", Tensor({1}, {1.0})}}, st, 0.1, {});
  EXPECT_NEAR(p.at("w")[0], -0.1 / (1.0 + 1e-8), 1e-15);
  // Decoupled decay: p -= lr * wd * p on top of the moment step.
  fno::Params q{{"w", Tensor({1}, {2.0})}};
  train::AdamState s2;
  train::AdamConfig cfg;
  cfg.weight_decay = 0.5;
  train::adam_step(q, {{"w", Tensor({1})}}, s2, 0.1, cfg);
  EXPECT_NEAR(q.at("w")[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(Schedule, CosineAndClipping) {
  EXPECT_DOUBLE_EQ(train::cosine_multiplier(50, 100), 0.5);
  EXPECT_DOUBLE_EQ(train::cosine_multiplier(0, 100), 1.0);
  EXPECT_NEAR(train::cosine_multiplier(100, 100), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(train::cosine_multiplier(3, 0), 1.0);
  NamedTensors g{{"a", Tensor({2}, {3.0, 0.0})}, {"b", Tensor({1}, {4.0})}};
  EXPECT_DOUBLE_EQ(train::clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g.at("a")[0], 0.6, 1e-15);
  EXPECT_NEAR(g.at("b")[0], 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(train::clip_global_norm(g, 10.0), 1.0);
  EXPECT_NEAR(g.at("b")[0], 0.8, 1e-15);
}

TEST(Config, ParseValidateAndRoundTrip) {
  std::istringstream in("arch=fno-wt\ndv=8\nmodes=4\nM=3\nbackward=phantom\ntau=0.8\nS=3\nlr=0.005\nepochs=2\ngrid=0\n");
  const train::TrainConfig c = train::config_from(KeyValues::parse(in));
  EXPECT_EQ(c.arch.kind, fno::ArchKind::FnoWT);
  EXPECT_FALSE(c.arch.grid);
  EXPECT_TRUE(train::TrainConfig{}.arch.grid);
  EXPECT_EQ(c.arch.tie, 3);
  EXPECT_EQ(c.backward.kind, implicit::BackwardKind::Phantom);
  EXPECT_DOUBLE_EQ(c.backward.phantom.tau, 0.8);
  EXPECT_EQ(c.backward.phantom.steps, 3);
  EXPECT_DOUBLE_EQ(c.lr, 0.005);
  const train::TrainConfig back = train::config_from(train::to_keyvalues(c));
  EXPECT_EQ(train::to_keyvalues(back).str(), train::to_keyvalues(c).str());

  std::istringstream unknown("arch=fno\nlearning_rate=1\n");
  EXPECT_THROW(train::config_from(KeyValues::parse(unknown)), FormatError);
  train::TrainConfig bad;
  bad.lr = 0.0;
  EXPECT_THROW(train::validate(bad), DomainError);
  bad.lr = 1e-3;
  bad.batch_size = 0;
  EXPECT_THROW(train::validate(bad), DomainError);
}

TEST(Train, ZeroEpochsReturnsInit) {
  const auto d = synthetic(10, 16, [](const Tensor& f) { return scaled(f, 0.5); });
  const auto cfg = tiny_config(fno::ArchKind::Fno, 0);
  const fno::Model init = init_model(cfg, d, true);
  const auto r = train::train(init, d, cfg);
  EXPECT_TRUE(r.metrics.empty());
  for (const auto& [n, t] : init.params) {
    EXPECT_TRUE(r.best.params.at(n) == t);
    EXPECT_TRUE(r.final.params.at(n) == t);
  }
}

TEST(Train, FitsLinearTargetMap) {
  // target = -0.5 f, realizable through the pointwise path and a linear Q.
  const auto d = synthetic(36, 16, [](const Tensor& f) { return scaled(f, -0.5); }, 1);
  auto cfg = tiny_config(fno::ArchKind::Fno, 200);
  cfg.lr = 1e-2;
  cfg.weight_decay = 0.0;
  cfg.batch_size = 8;
  const auto r = train::train(init_model(cfg, d, true), d, cfg);
  ASSERT_EQ(r.metrics.size(), 200u);
  EXPECT_LT(r.metrics.back().train_mse, 1e-4);
}

TEST(Train, NormalizedLossIgnoresTargetUnits) {
  // Same problem in two units: with output normalization the optimizer
  // follows the same path up to roundoff.
  const auto d1 = synthetic(20, 16, [](const Tensor& f) { return scaled(f, 0.5); }, 7);
  const auto d2 = synthetic(20, 16, [](const Tensor& f) { return scaled(f, 0.5e-4); }, 7);
  const auto cfg = tiny_config(fno::ArchKind::Fno, 4);
  const auto r1 = train::train(init_model(cfg, d1, true), d1, cfg);
  const auto r2 = train::train(init_model(cfg, d2, true), d2, cfg);
  for (std::size_t e = 0; e < r1.metrics.size(); ++e) {
    EXPECT_NEAR(r2.metrics[e].test_rel_l2, r1.metrics[e].test_rel_l2, 1e-8 * r1.metrics[e].test_rel_l2) << e;
    EXPECT_NEAR(r2.metrics[e].train_mse / 1e-8, r1.metrics[e].train_mse, 1e-6 * r1.metrics[e].train_mse) << e;
  }
}

TEST(Train, DeterministicAcrossThreadCounts) {
  const auto d = synthetic(12, 16, [](const Tensor& f) { return scaled(f, 0.3); }, 2);
  auto run = [&](int threads) {
    auto cfg = tiny_config(fno::ArchKind::FnoDEQ, 2);
    cfg.threads = threads;
    return train::train(init_model(cfg, d, true), d, cfg);
  };
  const auto a = run(1), b = run(3);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t e = 0; e < a.metrics.size(); ++e) {
    EXPECT_EQ(a.metrics[e].train_mse, b.metrics[e].train_mse);
    EXPECT_EQ(a.metrics[e].test_rel_l2, b.metrics[e].test_rel_l2);
    EXPECT_EQ(a.metrics[e].mean_abs_residual, b.metrics[e].mean_abs_residual);
  }
  for (const auto& [n, t] : a.final.params) EXPECT_TRUE(b.final.params.at(n) == t) << n;
}

TEST(Train, BestSoFarNonIncreasing) {
  const auto d = synthetic(12, 16, [](const Tensor& f) { return scaled(f, 0.3); }, 3);
  const auto r = train::train(init_model(tiny_config(fno::ArchKind::FnoPlusPlus, 6), d, true), d,
                              tiny_config(fno::ArchKind::FnoPlusPlus, 6));
  ASSERT_EQ(r.best_so_far.size(), 6u);
  for (std::size_t e = 1; e < r.best_so_far.size(); ++e) EXPECT_LE(r.best_so_far[e], r.best_so_far[e - 1]);
  EXPECT_EQ(r.best_so_far.back(), r.metrics[static_cast<std::size_t>(r.best_epoch)].test_rel_l2);
}

TEST(Train, NonFiniteLossDumpsBatch) {
  auto d = synthetic(10, 16, [](const Tensor& f) { return scaled(f, 0.5); });
  for (auto& t : d.targets) t.array() *= 1e200;
  auto cfg = tiny_config(fno::ArchKind::Fno, 1);
  cfg.normalize = false;
  const fs::path dump = fs::temp_directory_path() / "steadyop_nan_dump.fnc";
  fs::remove(dump);
  EXPECT_THROW(train::train(init_model(cfg, d, true), d, cfg, dump), NumericalError);
  ASSERT_TRUE(fs::exists(dump));
  const NamedTensors e = load_fnc(dump);
  EXPECT_TRUE(e.count("batch.loss"));
  EXPECT_TRUE(e.count("batch.input.0"));
  fs::remove(dump);
}

TEST(Evaluate, MatchesScriptedMetric) {
  const auto d = synthetic(100, 16, [](const Tensor& f) { return scaled(f, 2.0); }, 4);
  const auto cfg = tiny_config(fno::ArchKind::FnoWT, 0);
  const fno::Model m = init_model(cfg, d, true);
  const auto r = train::evaluate(m, d, train::eval_options(cfg), 1);
  ASSERT_EQ(r.rel_l2.size(), 10u);
  double sum = 0.0;
  for (Index i = 90; i < 100; ++i) sum += oracle::rel_l2(fno::predict(m, d.inputs[i]), d.targets[i]);
  EXPECT_NEAR(r.mean_rel_l2, sum / 10.0, 1e-14);
  EXPECT_EQ(r.mean_abs_residual, 0.0);
}

TEST(Evaluate, ZeroAndPerfectModels) {
  const auto cfg = tiny_config(fno::ArchKind::Fno, 0);
  auto d = synthetic(20, 16, [](const Tensor& f) { return f; }, 5);
  fno::Model m = init_model(cfg, d, true);
  // Targets produced by the model itself.
  for (Index i = 0; i < 20; ++i) d.targets[i] = fno::predict(m, d.inputs[i]);
  EXPECT_EQ(train::evaluate(m, d, {}, 1).mean_rel_l2, 0.0);
  m.params.at("proj.W_Q").array() = 0.0;
  m.params.at("proj.b_Q").array() = 0.0;
  EXPECT_DOUBLE_EQ(train::evaluate(m, d, {}, 1).mean_rel_l2, 1.0);
  fno::ArchConfig wrong = m.arch;
  wrong.df = 2;
  EXPECT_THROW(train::check_compatible(wrong, d), DimensionError);
}

TEST(Evaluate, ResidualNonIncreasingInSolverBudget) {
  const fno::Model m = scenario::contractive_deq(7, 6, 3, 0.9);
  const auto d = synthetic(20, 16, [](const Tensor& f) { return f; }, 6);
  double prev = 1e300;
  for (int steps : {2, 4, 8, 16, 32}) {
    fno::DeqOptions o;
    o.solver_cfg.max_steps = steps;
    const auto r = train::evaluate(m, d, o, 1);
    EXPECT_LE(r.mean_abs_residual, prev) << steps;
    prev = r.mean_abs_residual;
  }
}
