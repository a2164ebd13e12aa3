#pragma once

// Minimal tape-based reverse-mode differentiation over a closed op set:
// add, sub, scale, mul, sum, pointwise_linear, gelu, spectral_conv, mse,
// relative_l2. Nodes are appended in topological order; backward walks the
// tape once in reverse.

#include "steadyop/fnt.hpp"
#include "steadyop/tensor.hpp"

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace steadyop::ad {

using GradientMap = NamedTensors;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph* graph() const { return graph_; }
  Index id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, Index id) : graph_(graph), id_(id) {}
  Graph* graph_ = nullptr;
  Index id_ = -1;
};

/// Backward rule of a node: given dL/d(out), accumulate (+=) into the
/// gradients of the inputs. Entries of `input_grads` are null for inputs
/// that do not require a gradient.
using Backprop = std::function<void(const Tensor& grad_out, const std::vector<const Tensor*>& inputs,
                                    const std::vector<Tensor*>& input_grads)>;

/// Thread-local counter of activation scalars retained by recording graphs
/// (node values plus saved intermediates). Used to check the constant-memory
/// property of implicit backward passes.
struct ActivationMeter {
  static void reset_peak();
  static Index live();
  static Index peak();
};

class Graph {
 public:
  /// A non-recording graph evaluates ops without keeping backward state.
  explicit Graph(bool record = true);
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  /// Named differentiable leaf. Names must be unique within the graph.
  Var leaf(const std::string& name, Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// The named leaf if it exists, otherwise a new leaf holding `value`. Lets
  /// a block be recorded several times over shared parameters.
  Var parameter(const std::string& name, const Tensor& value);
  /// Invalid Var when no leaf has that name.
  Var find_leaf(const std::string& name) const;

  /// Appends an op node. `saved_scalars` is the size of any intermediate the
  /// backward rule holds besides the inputs and output (for the meter).
  Var record(Tensor value, std::vector<Var> inputs, Backprop backprop, Index saved_scalars = 0);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Gradients of a scalar loss with respect to every named leaf. Leaves the
  /// loss does not depend on get zeros. Throws DimensionError if the loss is
  /// not a single value.
  GradientMap backward(Var loss) const;
  /// Vector-Jacobian product: gradients of <seed, output> for every leaf.
  GradientMap backward(Var output, const Tensor& seed) const;

  Index node_count() const { return static_cast<Index>(nodes_.size()); }
  Index retained_scalars() const { return retained_; }

 private:
  struct Node {
    Tensor value;
    std::vector<Index> inputs;
    Backprop backprop;
    std::string leaf_name;
    bool is_leaf = false;
    bool requires_grad = false;
  };

  void own(Var v) const;

  bool record_;
  std::deque<Node> nodes_;
  std::map<std::string, Index> leaf_ids_;
  Index retained_ = 0;
};

// ---- ops -------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
/// Elementwise product.
Var mul(Var a, Var b);
Var sum(Var a);
/// out[..., :] = W^T v[..., :] + b for v of shape [..., Cin], W [Cin, Cout], b [Cout].
Var pointwise_linear(Var v, Var weight, Var bias);
/// Exact (erf) Gaussian error linear unit.
Var gelu(Var v);
/// Kernel integral operator; see spectral_conv.hpp for the mode layout.
Var spectral_conv(Var v, Var r_re, Var r_im);
/// mean((pred - target)^2).
Var mse(Var pred, Var target);
/// ||pred - target|| / ||target||; throws DomainError on a zero target.
Var relative_l2(Var pred, Var target);

// ---- raw kernels shared by the ops and by non-graph callers -----------------

Tensor gelu_value(const Tensor& v);
Tensor pointwise_linear_value(const Tensor& v, const Tensor& weight, const Tensor& bias);

}  // namespace steadyop::ad
