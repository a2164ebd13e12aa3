#include "steadyop/autodiff.hpp"

#include "steadyop/errors.hpp"
#include "steadyop/spectral_conv.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace steadyop::ad {
namespace {

thread_local Index g_live = 0;
thread_local Index g_peak = 0;

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

Graph& common_graph(const Var& a, const Var& b) {
  if (!a.valid() || a.graph() != b.graph()) throw DimensionError("operands belong to different graphs");
  return *a.graph();
}

}  // namespace

void ActivationMeter::reset_peak() { g_peak = g_live; }
Index ActivationMeter::live() { return g_live; }
Index ActivationMeter::peak() { return g_peak; }

const Tensor& Var::value() const { return graph_->value(*this); }

Graph::Graph(bool record) : record_(record) {}

Graph::~Graph() { g_live -= retained_; }

void Graph::own(Var v) const {
  if (v.graph_ != this || v.id_ < 0 || v.id_ >= node_count()) throw DimensionError("variable not owned by this graph");
}

Var Graph::leaf(const std::string& name, Tensor value) {
  if (name.empty()) throw DimensionError("leaf names must be non-empty");
  if (leaf_ids_.count(name)) throw DimensionError("duplicate leaf name " + name);
  expect_finite(value, name.c_str());
  Node node;
  node.value = std::move(value);
  node.leaf_name = name;
  node.is_leaf = true;
  node.requires_grad = record_;
  if (record_) {
    retained_ += node.value.size();
    g_live += node.value.size();
    g_peak = std::max(g_peak, g_live);
  }
  nodes_.push_back(std::move(node));
  leaf_ids_.emplace(name, node_count() - 1);
  return {this, node_count() - 1};
}

Var Graph::parameter(const std::string& name, const Tensor& value) {
  const Var existing = find_leaf(name);
  return existing.valid() ? existing : leaf(name, value);
}

Var Graph::find_leaf(const std::string& name) const {
  const auto it = leaf_ids_.find(name);
  if (it == leaf_ids_.end()) return {};
  return {const_cast<Graph*>(this), it->second};
}

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.is_leaf = true;
  if (record_) {
    retained_ += node.value.size();
    g_live += node.value.size();
    g_peak = std::max(g_peak, g_live);
  }
  nodes_.push_back(std::move(node));
  return {this, node_count() - 1};
}

Var Graph::record(Tensor value, std::vector<Var> inputs, Backprop backprop, Index saved_scalars) {
  if (!value.all_finite()) throw NumericalError("non-finite value produced by graph op");
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      own(in);
      node.inputs.push_back(in.id_);
      node.requires_grad = node.requires_grad || nodes_[static_cast<std::size_t>(in.id_)].requires_grad;
    }
    if (node.requires_grad) node.backprop = std::move(backprop);
    const Index held = node.value.size() + (node.requires_grad ? saved_scalars : 0);
    retained_ += held;
    g_live += held;
    g_peak = std::max(g_peak, g_live);
  }
  nodes_.push_back(std::move(node));
  return {this, node_count() - 1};
}

const Tensor& Graph::value(Var v) const {
  own(v);
  return nodes_[static_cast<std::size_t>(v.id_)].value;
}

bool Graph::requires_grad(Var v) const {
  own(v);
  return nodes_[static_cast<std::size_t>(v.id_)].requires_grad;
}

GradientMap Graph::backward(Var loss) const {
  own(loss);
  if (value(loss).size() != 1)
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_string(value(loss).shape()));
  return backward(loss, Tensor::constant(value(loss).shape(), 1.0));
}

GradientMap Graph::backward(Var output, const Tensor& seed) const {
  own(output);
  expect_shape(seed, value(output).shape(), "backward seed");
  if (!record_) throw DimensionError("backward on a non-recording graph");

  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(output.id_)] = seed;
  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (Index id = output.id_; id >= 0; --id) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    Tensor& g = grads[static_cast<std::size_t>(id)];
    if (node.is_leaf || !node.requires_grad || g.size() == 0) continue;
    in_values.clear();
    in_grads.clear();
    for (Index in : node.inputs) {
      const Node& src = nodes_[static_cast<std::size_t>(in)];
      in_values.push_back(&src.value);
      Tensor& slot = grads[static_cast<std::size_t>(in)];
      if (src.requires_grad && slot.size() == 0) slot = Tensor(src.value.shape());
      in_grads.push_back(src.requires_grad ? &slot : nullptr);
    }
    node.backprop(g, in_values, in_grads);
    g = Tensor();  // release as soon as consumed
  }

  GradientMap out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.is_leaf || node.leaf_name.empty()) continue;
    out.emplace(node.leaf_name, grads[id].size() ? std::move(grads[id]) : Tensor(node.value.shape()));
  }
  return out;
}

// ---- ops -------------------------------------------------------------------

Var add(Var a, Var b) {
  Graph& g = common_graph(a, b);
  same_shape(a, b, "add");
  Tensor out(a.shape(), a.value().array() + b.value().array());
  return g.record(std::move(out), {a, b}, [](const Tensor& go, const auto&, const auto& gi) {
    if (gi[0]) gi[0]->array() += go.array();
    if (gi[1]) gi[1]->array() += go.array();
  });
}

Var sub(Var a, Var b) {
  Graph& g = common_graph(a, b);
  same_shape(a, b, "sub");
  Tensor out(a.shape(), a.value().array() - b.value().array());
  return g.record(std::move(out), {a, b}, [](const Tensor& go, const auto&, const auto& gi) {
    if (gi[0]) gi[0]->array() += go.array();
    if (gi[1]) gi[1]->array() -= go.array();
  });
}

Var scale(Var a, double factor) {
  Tensor out(a.shape(), factor * a.value().array());
  return a.graph()->record(std::move(out), {a}, [factor](const Tensor& go, const auto&, const auto& gi) {
    if (gi[0]) gi[0]->array() += factor * go.array();
  });
}

Var mul(Var a, Var b) {
  Graph& g = common_graph(a, b);
  same_shape(a, b, "mul");
  Tensor out(a.shape(), a.value().array() * b.value().array());
  return g.record(std::move(out), {a, b}, [](const Tensor& go, const auto& in, const auto& gi) {
    if (gi[0]) gi[0]->array() += go.array() * in[1]->array();
    if (gi[1]) gi[1]->array() += go.array() * in[0]->array();
  });
}

Var sum(Var a) {
  Tensor out = Tensor::scalar(a.value().array().sum());
  return a.graph()->record(std::move(out), {a}, [](const Tensor& go, const auto&, const auto& gi) {
    if (gi[0]) gi[0]->array() += go[0];
  });
}

Tensor pointwise_linear_value(const Tensor& v, const Tensor& weight, const Tensor& bias) {
  if (v.rank() < 1 || weight.rank() != 2 || bias.rank() != 1) throw DimensionError("pointwise_linear: bad ranks");
  const Index cin = v.shape().back();
  if (weight.dim(0) != cin)
    throw DimensionError("pointwise_linear: input has " + std::to_string(cin) + " channels, weight expects " +
                         std::to_string(weight.dim(0)));
  const Index cout = weight.dim(1);
  if (bias.dim(0) != cout) throw DimensionError("pointwise_linear: bias length does not match output channels");
  Shape shape = v.shape();
  shape.back() = cout;
  Tensor out(shape);
  auto om = out.matrix(cout);
  om.noalias() = v.matrix(cin) * weight.matrix(cout);
  om.rowwise() += bias.array().matrix().transpose();
  return out;
}

Var pointwise_linear(Var v, Var weight, Var bias) {
  Graph& g = common_graph(v, weight);
  common_graph(v, bias);
  Tensor out = pointwise_linear_value(v.value(), weight.value(), bias.value());
  return g.record(std::move(out), {v, weight, bias}, [](const Tensor& go, const auto& in, const auto& gi) {
    const Index cin = in[1]->dim(0), cout = in[1]->dim(1);
    const auto gm = go.matrix(cout);
    if (gi[0]) gi[0]->matrix(cin).noalias() += gm * in[1]->matrix(cout).transpose();
    if (gi[1]) gi[1]->matrix(cout).noalias() += in[0]->matrix(cin).transpose() * gm;
    if (gi[2]) gi[2]->array() += gm.colwise().sum().transpose().array();
  });
}

Tensor gelu_value(const Tensor& v) {
  const double* x = v.data();
  Tensor out(v.shape());
  double* y = out.data();
  const Index n = v.size();
  for (Index i = 0; i < n; ++i) y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 * 0.5));
  return out;
}

Var gelu(Var v) {
  Tensor out = gelu_value(v.value());
  return v.graph()->record(std::move(out), {v}, [](const Tensor& go, const auto& in, const auto& gi) {
    if (!gi[0]) return;
    const double* x = in[0]->data();
    const double* g = go.data();
    double* d = gi[0]->data();
    const Index n = go.size();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (Index i = 0; i < n; ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 * 0.5));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      d[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
}

Var spectral_conv(Var v, Var r_re, Var r_im) {
  Graph& g = common_graph(v, r_re);
  common_graph(v, r_im);
  auto saved = std::make_shared<ModeCoefficients>();
  Tensor out = spectral_conv_forward(v.value(), r_re.value(), r_im.value(), g.recording() ? saved.get() : nullptr);
  const Index held = 2 * saved->re.size();
  return g.record(
      std::move(out), {v, r_re, r_im},
      [saved](const Tensor& go, const auto& in, const auto& gi) {
        spectral_conv_backward(go, *saved, *in[1], *in[2], gi[0], gi[1], gi[2]);
      },
      held);
}

Var mse(Var pred, Var target) {
  Graph& g = common_graph(pred, target);
  same_shape(pred, target, "mse");
  const double n = static_cast<double>(pred.value().size());
  const double loss = (pred.value().array() - target.value().array()).square().sum() / n;
  return g.record(Tensor::scalar(loss), {pred, target}, [n](const Tensor& go, const auto& in, const auto& gi) {
    const Eigen::ArrayXd diff = (2.0 * go[0] / n) * (in[0]->array() - in[1]->array());
    if (gi[0]) gi[0]->array() += diff;
    if (gi[1]) gi[1]->array() -= diff;
  });
}

Var relative_l2(Var pred, Var target) {
  Graph& g = common_graph(pred, target);
  const double value = steadyop::relative_l2(pred.value(), target.value());
  return g.record(Tensor::scalar(value), {pred, target}, [value](const Tensor& go, const auto& in, const auto& gi) {
    const Eigen::ArrayXd diff = in[0]->array() - in[1]->array();
    const double tn = in[1]->array().matrix().norm();
    const double dn = diff.matrix().norm();
    if (gi[0] && dn > 0.0) gi[0]->array() += go[0] * diff / (dn * tn);
    if (gi[1]) {
      // d/dt (||p - t|| / ||t||) = -(p - t)/(||p - t|| ||t||) - value * t / ||t||^2
      Eigen::ArrayXd d = -value * in[1]->array() / (tn * tn);
      if (dn > 0.0) d -= diff / (dn * tn);
      gi[1]->array() += go[0] * d;
    }
  });
}

}  // namespace steadyop::ad
