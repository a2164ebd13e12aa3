#include "steadyop/fno.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/rng.hpp"
#include "steadyop/spectral_conv.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <memory>
#include <random>

namespace steadyop::fno {
namespace {

// sup_x d/dx gelu(x), attained near x = 1.414.
constexpr double kGeluLipschitz = 1.1289;

const std::string kInjection = "__g";

const char* const kLayerParts[] = {"W", "b", "R_re", "R_im"};

const Tensor& get(const Params& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw DimensionError("missing parameter " + name);
  return it->second;
}

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
}

void fill_normal(Tensor& t, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * n(rng);
}

Tensor field_value(const Tensor& v, const Tensor& W, const Tensor& b, const Tensor& r_re, const Tensor& r_im) {
  Tensor pre = ad::pointwise_linear_value(v, W, b);
  pre.array() += spectral_conv_forward(v, r_re, r_im).array();
  return ad::gelu_value(pre);
}

double spectral_norm(const Eigen::MatrixXd& m) {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

double max_mode_norm(const Tensor& r_re, const Tensor& r_im) {
  const Index modes = r_re.dim(0) * r_re.dim(1);
  const Index ci = r_re.dim(2), co = r_re.dim(3);
  double worst = 0.0;
  for (Index k = 0; k < modes; ++k) {
    Eigen::MatrixXcd m(ci, co);
    for (Index i = 0; i < ci; ++i)
      for (Index o = 0; o < co; ++o) m(i, o) = {r_re[(k * ci + i) * co + o], r_im[(k * ci + i) * co + o]};
    worst = std::max(worst, Eigen::JacobiSVD<Eigen::MatrixXcd>(m).singularValues()(0));
  }
  return worst;
}

double layer_lipschitz(const Params& params, const std::string& prefix) {
  const Tensor& W = get(params, prefix + ".W");
  const double wn = spectral_norm(Eigen::MatrixXd(W.matrix(W.dim(1))));
  return kGeluLipschitz * (wn + max_mode_norm(get(params, prefix + ".R_re"), get(params, prefix + ".R_im")));
}

}  // namespace

ArchKind parse_arch(const std::string& name) {
  if (name == "fno") return ArchKind::Fno;
  if (name == "fno++") return ArchKind::FnoPlusPlus;
  if (name == "fno-wt") return ArchKind::FnoWT;
  if (name == "fno-deq") return ArchKind::FnoDEQ;
  throw DomainError("unknown architecture '" + name + "' (fno | fno++ | fno-wt | fno-deq)");
}

std::string to_string(ArchKind kind) {
  switch (kind) {
    case ArchKind::Fno: return "fno";
    case ArchKind::FnoPlusPlus: return "fno++";
    case ArchKind::FnoWT: return "fno-wt";
    case ArchKind::FnoDEQ: return "fno-deq";
  }
  return "?";
}

void validate(const ArchConfig& cfg) {
  if (cfg.du < 1 || cfg.df < 1 || cfg.dv < 1) throw DimensionError("channel counts must be >= 1");
  if (cfg.layers < 1 || cfg.blocks < 1) throw DimensionError("layers and blocks must be >= 1");
  if (cfg.modes < 0) throw DimensionError("mode count must be >= 0");
  if (cfg.kind == ArchKind::FnoWT && cfg.tie < 1) throw DimensionError("FNO-WT needs M >= 1");
}

Index block_parameter_count(Index dv, Index modes, Index layers) {
  const Index kx = 2 * modes, ky = modes;
  return layers * (dv * dv + dv + 2 * kx * ky * dv * dv);
}

Index stored_blocks(const ArchConfig& cfg) {
  return cfg.kind == ArchKind::Fno || cfg.kind == ArchKind::FnoPlusPlus ? cfg.blocks : 1;
}

Index parameter_count(const ArchConfig& cfg) {
  validate(cfg);
  const Index proj = (cfg.du * cfg.dv + cfg.dv) + (cfg.lifted_channels() * cfg.dv + cfg.dv) + (cfg.dv * cfg.du + cfg.du);
  return stored_blocks(cfg) * block_parameter_count(cfg.dv, cfg.modes, cfg.layers) +
         block_parameter_count(cfg.dv, cfg.modes, 1) + proj;
}

Index count_parameters(const Params& params) {
  Index n = 0;
  for (const auto& [name, t] : params)
    if (name.rfind("meta.", 0) != 0) n += t.size();
  return n;
}

std::string layer_prefix(Index block, Index layer) {
  return "block" + std::to_string(block) + ".layer" + std::to_string(layer);
}

namespace {

void add_layer(Params& p, const std::string& prefix, const ArchConfig& cfg, std::mt19937_64& rng) {
  const Index dv = cfg.dv, k = cfg.modes;
  const double bound = 1.0 / std::sqrt(static_cast<double>(dv));
  Tensor W({dv, dv}), b({dv}), r_re({2 * k, k, dv, dv}), r_im({2 * k, k, dv, dv});
  fill_uniform(W, bound, rng);
  fill_uniform(b, bound, rng);
  const double rs = k > 0 ? 1.0 / static_cast<double>(dv * k * k) : 0.0;
  fill_normal(r_re, rs, rng);
  fill_normal(r_im, rs, rng);
  p.emplace(prefix + ".W", std::move(W));
  p.emplace(prefix + ".b", std::move(b));
  p.emplace(prefix + ".R_re", std::move(r_re));
  p.emplace(prefix + ".R_im", std::move(r_im));
}

void add_affine(Params& p, const std::string& w, const std::string& b, Index in, Index out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor W({in, out}), bias({out});
  fill_uniform(W, bound, rng);
  fill_uniform(bias, bound, rng);
  p.emplace(w, std::move(W));
  p.emplace(b, std::move(bias));
}

}  // namespace

Params init_params(const ArchConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  auto rng = make_rng(seed, 0x4e0);
  Params p;
  for (Index b = 0; b < stored_blocks(cfg); ++b)
    for (Index l = 0; l < cfg.layers; ++l) add_layer(p, layer_prefix(b, l), cfg, rng);
  add_layer(p, "head", cfg, rng);
  add_affine(p, "proj.W_P1", "proj.b_P1", cfg.du, cfg.dv, rng);
  add_affine(p, "proj.W_P2", "proj.b_P2", cfg.lifted_channels(), cfg.dv, rng);
  add_affine(p, "proj.W_Q", "proj.b_Q", cfg.dv, cfg.du, rng);
  return p;
}

void check_params(const ArchConfig& cfg, const Params& params) {
  validate(cfg);
  const Index dv = cfg.dv, k = cfg.modes;
  auto expect = [&](const std::string& name, const Shape& shape) { expect_shape(get(params, name), shape, name.c_str()); };
  auto layer = [&](const std::string& prefix) {
    expect(prefix + ".W", {dv, dv});
    expect(prefix + ".b", {dv});
    expect(prefix + ".R_re", {2 * k, k, dv, dv});
    expect(prefix + ".R_im", {2 * k, k, dv, dv});
  };
  for (Index b = 0; b < stored_blocks(cfg); ++b)
    for (Index l = 0; l < cfg.layers; ++l) layer(layer_prefix(b, l));
  layer("head");
  expect("proj.W_P1", {cfg.du, dv});
  expect("proj.b_P1", {dv});
  expect("proj.W_P2", {cfg.lifted_channels(), dv});
  expect("proj.b_P2", {dv});
  expect("proj.W_Q", {dv, cfg.du});
  expect("proj.b_Q", {cfg.du});
}

double block_lipschitz_bound(const ArchConfig& cfg, const Params& params, Index block) {
  double bound = 1.0;
  for (Index l = 0; l < cfg.layers; ++l) bound *= layer_lipschitz(params, layer_prefix(block, l));
  return bound;
}

void spectral_normalize(const ArchConfig& cfg, Params& params, double target) {
  if (!(target > 0.0)) throw DomainError("spectral_normalize: target must be positive");
  const double share = std::pow(target, 1.0 / static_cast<double>(cfg.layers));
  for (Index b = 0; b < stored_blocks(cfg); ++b)
    for (Index l = 0; l < cfg.layers; ++l) {
      const std::string prefix = layer_prefix(b, l);
      const double lip = layer_lipschitz(params, prefix);
      if (lip <= share) continue;
      const double s = share / lip;
      params.at(prefix + ".W").array() *= s;
      params.at(prefix + ".R_re").array() *= s;
      params.at(prefix + ".R_im").array() *= s;
    }
}

NamedTensors to_checkpoint(const Model& model) {
  const ArchConfig& a = model.arch;
  NamedTensors out = model.params;
  out["meta.arch"] = Tensor({10}, {static_cast<double>(static_cast<int>(a.kind)), static_cast<double>(a.du),
                                  static_cast<double>(a.df), static_cast<double>(a.dv), static_cast<double>(a.layers),
                                  static_cast<double>(a.blocks), static_cast<double>(a.modes),
                                  static_cast<double>(a.tie), a.q_linear ? 1.0 : 0.0, a.grid ? 1.0 : 0.0});
  if (model.in_scale.size()) out["meta.in_scale"] = model.in_scale;
  if (model.out_scale.size()) out["meta.out_scale"] = model.out_scale;
  return out;
}

Model from_checkpoint(const NamedTensors& entries) {
  const auto it = entries.find("meta.arch");
  // Nine entries: written before the grid flag existed.
  if (it == entries.end() || (it->second.size() != 9 && it->second.size() != 10))
    throw FormatError("checkpoint lacks a valid meta.arch entry");
  const Tensor& m = it->second;
  const int kind = static_cast<int>(m[0]);
  if (kind < 0 || kind > 3) throw FormatError("checkpoint: unknown architecture code");
  Model model;
  model.arch = ArchConfig{static_cast<ArchKind>(kind),
                          static_cast<Index>(m[1]),
                          static_cast<Index>(m[2]),
                          static_cast<Index>(m[3]),
                          static_cast<Index>(m[4]),
                          static_cast<Index>(m[5]),
                          static_cast<Index>(m[6]),
                          static_cast<Index>(m[7]),
                          m[8] != 0.0,
                          m.size() == 10 && m[9] != 0.0};
  for (const auto& [name, t] : entries)
    if (name.rfind("meta.", 0) != 0) model.params.emplace(name, t);
  check_params(model.arch, model.params);
  if (const auto s = entries.find("meta.in_scale"); s != entries.end()) model.in_scale = s->second;
  if (const auto s = entries.find("meta.out_scale"); s != entries.end()) model.out_scale = s->second;
  check_scales(model);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) { save_fnc(path, to_checkpoint(model)); }

Model load_checkpoint(const std::filesystem::path& path) { return from_checkpoint(load_fnc(path)); }

// ---- graph level -----------------------------------------------------------

LayerVars bind_layer(ad::Graph& g, const Params& params, const std::string& prefix) {
  return {g.parameter(prefix + ".W", get(params, prefix + ".W")), g.parameter(prefix + ".b", get(params, prefix + ".b")),
          g.parameter(prefix + ".R_re", get(params, prefix + ".R_re")),
          g.parameter(prefix + ".R_im", get(params, prefix + ".R_im"))};
}

std::vector<LayerVars> bind_block(ad::Graph& g, const Params& params, Index block, Index layers) {
  std::vector<LayerVars> out;
  for (Index l = 0; l < layers; ++l) out.push_back(bind_layer(g, params, layer_prefix(block, l)));
  return out;
}

ad::Var kernel_operator(ad::Var v, const LayerVars& p) { return ad::spectral_conv(v, p.r_re, p.r_im); }

ad::Var fno_layer(ad::Var v, const LayerVars& p) {
  return ad::gelu(ad::add(ad::pointwise_linear(v, p.W, p.b), kernel_operator(v, p)));
}

ad::Var input_injected_layer(ad::Var v, ad::Var g, const LayerVars& p) {
  if (v.shape() != g.shape()) throw DimensionError("input injection: v and g shapes differ");
  return ad::add(g, fno_layer(v, p));
}

ad::Var fno_block(ad::Var v, ad::Var g, const std::vector<LayerVars>& layers) {
  for (const LayerVars& p : layers) v = input_injected_layer(v, g, p);
  return v;
}

ad::Var project_P1(ad::Graph& g, const Params& params, ad::Var u) {
  return ad::gelu(ad::pointwise_linear(u, g.parameter("proj.W_P1", get(params, "proj.W_P1")),
                                       g.parameter("proj.b_P1", get(params, "proj.b_P1"))));
}

ad::Var project_P2(ad::Graph& g, const Params& params, ad::Var f) {
  return ad::gelu(ad::pointwise_linear(f, g.parameter("proj.W_P2", get(params, "proj.W_P2")),
                                       g.parameter("proj.b_P2", get(params, "proj.b_P2"))));
}

ad::Var embed_Q(ad::Graph& g, const Params& params, ad::Var v, bool linear) {
  const ad::Var out = ad::pointwise_linear(v, g.parameter("proj.W_Q", get(params, "proj.W_Q")),
                                           g.parameter("proj.b_Q", get(params, "proj.b_Q")));
  return linear ? out : ad::gelu(out);
}

// ---- value level -----------------------------------------------------------

Tensor layer_value(const Tensor& v, const Params& params, const std::string& prefix) {
  return field_value(v, get(params, prefix + ".W"), get(params, prefix + ".b"), get(params, prefix + ".R_re"),
                     get(params, prefix + ".R_im"));
}

Tensor block_value(const Tensor& v, const Tensor& g, const Params& params, Index block, Index layers) {
  Tensor z = v;
  for (Index l = 0; l < layers; ++l) {
    Tensor next = layer_value(z, params, layer_prefix(block, l));
    next.array() = g.array() + next.array();
    z = std::move(next);
  }
  return z;
}

// ---- architectures ---------------------------------------------------------

void check_scales(const Model& model) {
  if (model.in_scale.size()) expect_shape(model.in_scale, {model.arch.df}, "in_scale");
  if (model.out_scale.size()) expect_shape(model.out_scale, {model.arch.du}, "out_scale");
}

namespace {

// Per-channel factor broadcast over an [H, W, C] field.
Tensor channel_scale(const Tensor& field, const Tensor& scale) {
  const Index c = scale.size();
  Tensor out = field;
  auto m = out.matrix(c);
  for (Index j = 0; j < c; ++j) m.col(j) *= scale[j];
  return out;
}

// [H, W, C] -> [H, W, C + 2] with channels i/H and j/W appended.
Tensor with_grid(const Tensor& f) {
  const Index H = f.dim(0), W = f.dim(1), C = f.dim(2);
  Tensor out({H, W, C + 2});
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j) {
      const Index src = (i * W + j) * C, dst = (i * W + j) * (C + 2);
      for (Index c = 0; c < C; ++c) out[dst + c] = f[src + c];
      out[dst + C] = static_cast<double>(i) / static_cast<double>(H);
      out[dst + C + 1] = static_cast<double>(j) / static_cast<double>(W);
    }
  return out;
}

}  // namespace

ad::Var deq_equilibrium(ad::Graph& g, const Model& model, ad::Var injection, const Tensor& z0, const DeqOptions& opts,
                        ForwardStats* stats) {
  const ArchConfig& a = model.arch;
  const Params& params = model.params;
  const Tensor& gv = injection.value();
  expect_shape(z0, gv.shape(), "DEQ initial state");
  const Shape shape = gv.shape();
  const Index layers = a.layers;

  const fixedpoint::Map map = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    return block_value(Tensor(shape, z), gv, params, 0, layers).array();
  };
  fixedpoint::Result res = fixedpoint::solve(opts.solver, map, z0.array(), opts.solver_cfg);
  Tensor z_star(shape, res.z);
  if (stats) {
    const Eigen::VectorXd r = map(res.z) - res.z;
    stats->used_solver = true;
    stats->abs_residual = r.norm();
    const double zn = res.z.norm();
    stats->rel_residual = zn > 0.0 ? stats->abs_residual / zn : (stats->abs_residual > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    stats->trace = std::move(res.trace);
  }

  std::vector<ad::Var> inputs{injection};
  std::vector<std::string> names;
  for (Index l = 0; l < layers; ++l)
    for (const char* part : kLayerParts) {
      const std::string name = layer_prefix(0, l) + "." + part;
      names.push_back(name);
      inputs.push_back(g.parameter(name, get(params, name)));
    }

  const implicit::BackwardMode mode = opts.backward;
  const implicit::AdjointConfig adjoint = opts.adjoint;
  auto z_keep = std::make_shared<Tensor>(z_star);
  auto rule = [names, layers, mode, adjoint, z_keep](const Tensor& grad_out, const std::vector<const Tensor*>& in,
                                                     const std::vector<Tensor*>& gi) {
    Params bound;
    for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], *in[i + 1]);
    const Tensor& gval = *in[0];
    const implicit::BlockBuilder builder = [&](ad::Graph& gg, ad::Var z) {
      const ad::Var inj = gg.parameter(kInjection, gval);
      return fno_block(z, inj, bind_block(gg, bound, 0, layers));
    };
    const ad::GradientMap grads = implicit::implicit_grad(mode, builder, *z_keep, grad_out, adjoint);
    if (gi[0]) gi[0]->array() += grads.at(kInjection).array();
    for (std::size_t i = 0; i < names.size(); ++i)
      if (gi[i + 1]) gi[i + 1]->array() += grads.at(names[i]).array();
  };
  return g.record(std::move(z_star), std::move(inputs), rule);
}

ad::Var forward(ad::Graph& g, const Model& model, const Tensor& f, const DeqOptions& opts, ForwardStats* stats,
                const Tensor* u0) {
  const ArchConfig& a = model.arch;
  const Params& params = model.params;
  if (f.rank() != 3 || f.dim(2) != a.df)
    throw DimensionError("forward: data field must be [H, W, " + std::to_string(a.df) + "], got " +
                         shape_string(f.shape()));
  check_scales(model);
  const Tensor scaled = model.in_scale.size() ? channel_scale(f, model.in_scale) : f;
  const ad::Var fv = g.constant(a.grid ? with_grid(scaled) : scaled);
  const ad::Var inj = project_P2(g, params, fv);
  const Shape hidden{f.dim(0), f.dim(1), a.dv};

  ad::Var v;
  auto initial = [&]() -> ad::Var {
    if (!u0) return g.constant(Tensor(hidden));
    if (u0->rank() != 3 || u0->dim(0) != f.dim(0) || u0->dim(1) != f.dim(1) || u0->dim(2) != a.du)
      throw DimensionError("forward: initial guess must be [H, W, du]");
    return project_P1(g, params, g.constant(*u0));
  };

  switch (a.kind) {
    case ArchKind::Fno:
      v = inj;
      for (Index b = 0; b < a.blocks; ++b)
        for (const LayerVars& p : bind_block(g, params, b, a.layers)) v = fno_layer(v, p);
      break;
    case ArchKind::FnoPlusPlus:
      v = initial();
      for (Index b = 0; b < a.blocks; ++b) v = fno_block(v, inj, bind_block(g, params, b, a.layers));
      break;
    case ArchKind::FnoWT: {
      v = initial();
      const auto layers = bind_block(g, params, 0, a.layers);
      for (Index m = 0; m < a.tie; ++m) v = fno_block(v, inj, layers);
      break;
    }
    case ArchKind::FnoDEQ: {
      const Tensor z0 = initial().value();
      v = deq_equilibrium(g, model, inj, z0, opts, stats);
      break;
    }
  }
  v = fno_layer(v, bind_layer(g, params, "head"));
  const ad::Var out = embed_Q(g, params, v, a.q_linear);
  if (!model.out_scale.size()) return out;
  return ad::mul(out, g.constant(channel_scale(Tensor::constant(out.shape(), 1.0), model.out_scale)));
}

Tensor predict(const Model& model, const Tensor& f, const DeqOptions& opts, ForwardStats* stats, const Tensor* u0) {
  ad::Graph g(false);
  return forward(g, model, f, opts, stats, u0).value();
}

}  // namespace steadyop::fno
