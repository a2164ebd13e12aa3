#pragma once

// Central finite-difference check of reverse-mode gradients, per graph op
// and per full architecture, on small seeded instances.

#include "steadyop/autodiff.hpp"
#include "steadyop/fno.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace steadyop::gradcheck {

/// Builds a scalar from the named inputs. Inputs must be bound with
/// Graph::parameter(name, values.at(name)) so that both the recording and
/// the evaluating pass see the same leaves.
using ScalarFn = std::function<ad::Var(ad::Graph&, const NamedTensors& values)>;

struct Entry {
  std::string name;   // "<case>/<input>"
  double rel_err = 0.0;  // ||fd - ad|| / max(||fd||, ||ad||), 0 when both vanish
  double grad_norm = 0.0;
};

struct Report {
  std::vector<Entry> entries;
  double max_rel_err() const;
};

/// Compares Graph::backward with central differences of step `eps` on every
/// element of every input.
std::vector<Entry> check(const std::string& label, const ScalarFn& fn, const NamedTensors& inputs, double eps = 1e-4);

struct Options {
  Index grid = 8;
  Index dv = 4;
  Index modes = 3;
  std::uint64_t seed = 0;
  double eps = 1e-4;
  implicit::BackwardMode backward{};
};

/// All graph ops on random inputs.
Report check_ops(const Options& opt);

/// One architecture end to end: the loss <w, forward(f)> for a fixed random
/// w, differentiated in every parameter. FNO-DEQ solves to 1e-13 with
/// Anderson from a spectrally normalized init.
Report check_arch(fno::ArchKind kind, const Options& opt);

}  // namespace steadyop::gradcheck
