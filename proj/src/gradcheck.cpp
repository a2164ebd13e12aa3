#include "steadyop/gradcheck.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace steadyop::gradcheck {

double Report::max_rel_err() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.rel_err);
  return m;
}

std::vector<Entry> check(const std::string& label, const ScalarFn& fn, const NamedTensors& inputs, double eps) {
  ad::GradientMap grads;
  {
    ad::Graph g;
    const ad::Var out = fn(g, inputs);
    grads = g.backward(out);
  }
  auto eval = [&](const NamedTensors& values) {
    ad::Graph g(false);
    return fn(g, values).value().item();
  };

  std::vector<Entry> entries;
  NamedTensors work = inputs;
  for (const auto& [name, x] : inputs) {
    // Inputs the function never binds have a zero gradient.
    const auto it = grads.try_emplace(name, Tensor(x.shape())).first;
    Tensor fd(x.shape());
    Tensor& slot = work.at(name);
    for (Index i = 0; i < x.size(); ++i) {
      const double x0 = x[i];
      slot[i] = x0 + eps;
      const double up = eval(work);
      slot[i] = x0 - eps;
      const double down = eval(work);
      slot[i] = x0;
      fd[i] = (up - down) / (2.0 * eps);
    }
    const double nf = norm(fd);
    const double na = norm(it->second);
    const double diff = (fd.array() - it->second.array()).matrix().norm();
    const double denom = std::max(nf, na);
    entries.push_back({label + "/" + name, denom > 0.0 ? diff / denom : 0.0, na});
  }
  return entries;
}

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, double offset = 0.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> nd(0.0, 1.0);
  for (Index i = 0; i < t.size(); ++i) t[i] = offset + scale * nd(rng);
  return t;
}

// <w, out> so that every op can be checked through a scalar.
ad::Var project(ad::Graph& g, ad::Var out, const Tensor& w) { return ad::sum(ad::mul(out, g.constant(w))); }

void append(Report& r, std::vector<Entry> e) { r.entries.insert(r.entries.end(), e.begin(), e.end()); }

}  // namespace

Report check_ops(const Options& opt) {
  auto rng = make_rng(opt.seed, 0x6c0);
  const Index n = opt.grid, c = opt.dv, k = opt.modes;
  const Shape field{n, n, c};
  const Tensor w = random_tensor(field, rng);
  const Tensor w_lin = random_tensor({n, n, c + 1}, rng);
  Report r;

  const NamedTensors ab{{"a", random_tensor(field, rng)}, {"b", random_tensor(field, rng)}};
  auto P = [](ad::Graph& g, const NamedTensors& v, const char* name) { return g.parameter(name, v.at(name)); };

  append(r, check("add", [&](ad::Graph& g, const NamedTensors& v) {
    return project(g, ad::add(P(g, v, "a"), P(g, v, "b")), w);
  }, ab, opt.eps));
  append(r, check("sub", [&](ad::Graph& g, const NamedTensors& v) {
    return project(g, ad::sub(P(g, v, "a"), P(g, v, "b")), w);
  }, ab, opt.eps));
  append(r, check("scale", [&](ad::Graph& g, const NamedTensors& v) {
    return project(g, ad::scale(P(g, v, "a"), -1.7), w);
  }, {{"a", ab.at("a")}}, opt.eps));
  append(r, check("mul", [&](ad::Graph& g, const NamedTensors& v) {
    return project(g, ad::mul(P(g, v, "a"), P(g, v, "b")), w);
  }, ab, opt.eps));
  append(r, check("sum", [&](ad::Graph& g, const NamedTensors& v) { return ad::sum(P(g, v, "a")); },
                  {{"a", ab.at("a")}}, opt.eps));
  append(r, check("gelu", [&](ad::Graph& g, const NamedTensors& v) {
    return project(g, ad::gelu(P(g, v, "a")), w);
  }, {{"a", ab.at("a")}}, opt.eps));
  append(r, check("pointwise_linear", [&](ad::Graph& g, const NamedTensors& v) {
    return project(g, ad::pointwise_linear(P(g, v, "a"), P(g, v, "W"), P(g, v, "b")), w_lin);
  }, {{"a", ab.at("a")}, {"W", random_tensor({c, c + 1}, rng)}, {"b", random_tensor({c + 1}, rng)}}, opt.eps));
  append(r, check("spectral_conv", [&](ad::Graph& g, const NamedTensors& v) {
    return project(g, ad::spectral_conv(P(g, v, "a"), P(g, v, "R_re"), P(g, v, "R_im")), w);
  }, {{"a", ab.at("a")}, {"R_re", random_tensor({2 * k, k, c, c}, rng)},
      {"R_im", random_tensor({2 * k, k, c, c}, rng)}}, opt.eps));
  append(r, check("mse", [&](ad::Graph& g, const NamedTensors& v) {
    return ad::mse(P(g, v, "a"), P(g, v, "b"));
  }, ab, opt.eps));
  append(r, check("relative_l2", [&](ad::Graph& g, const NamedTensors& v) {
    return ad::relative_l2(P(g, v, "a"), P(g, v, "b"));
  }, ab, opt.eps));
  return r;
}

Report check_arch(fno::ArchKind kind, const Options& opt) {
  auto rng = make_rng(opt.seed, 0x6c1);
  fno::ArchConfig a;
  a.kind = kind;
  a.du = 1;
  a.df = 1;
  a.dv = opt.dv;
  a.modes = opt.modes;
  a.layers = 3;
  a.blocks = (kind == fno::ArchKind::Fno || kind == fno::ArchKind::FnoPlusPlus) ? 2 : 1;
  a.tie = kind == fno::ArchKind::FnoWT ? 2 : 1;
  fno::Model model{a, fno::init_params(a, opt.seed), Tensor({1}, {0.8}), Tensor({1}, {1.3})};
  if (kind == fno::ArchKind::FnoDEQ) fno::spectral_normalize(a, model.params, 0.5);

  const Index n = opt.grid;
  const Tensor f = random_tensor({n, n, 1}, rng);
  const Tensor w = random_tensor({n, n, 1}, rng);
  // FNO++ also runs from a supplied initial guess so that P1 is exercised.
  const Tensor u0 = random_tensor({n, n, 1}, rng, 0.5);
  const Tensor* u0p = kind == fno::ArchKind::FnoPlusPlus ? &u0 : nullptr;

  fno::DeqOptions deq;
  deq.solver = fixedpoint::SolverKind::Anderson;
  deq.solver_cfg.max_steps = 300;
  deq.solver_cfg.tol_abs = 1e-13;
  deq.solver_cfg.tol_rel = 1e-13;
  deq.backward = opt.backward;
  deq.adjoint.tol = 1e-13;
  deq.adjoint.max_iters = 300;

  const ScalarFn fn = [&](ad::Graph& g, const NamedTensors& values) {
    fno::Model m{a, values, model.in_scale, model.out_scale};
    return project(g, fno::forward(g, m, f, deq, nullptr, u0p), w);
  };
  Report r;
  r.entries = check(fno::to_string(kind), fn, model.params, opt.eps);
  return r;
}

}  // namespace steadyop::gradcheck
