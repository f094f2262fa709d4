#pragma once

// Central finite-difference checking of backward-produced gradients. The
// numeric side only ever runs forward passes, so it is independent of the
// backward implementation it verifies. Runs on the double instantiation of
// the engine.

#include <functional>
#include <string>
#include <vector>

#include "fairfader/tensor.hpp"

namespace fairfader {

using DTensorPtr = TensorPtrT<double>;
using DGraph = GraphT<double>;

// Builds a scalar loss from the leaves; called repeatedly with perturbed
// leaf values, so it must be deterministic given the leaf contents.
using ScalarFn = std::function<DTensorPtr(DGraph*, const std::vector<DTensorPtr>&)>;

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0.0;
  double tol = 0.0;
  int instances = 0;
  bool pass = false;
};

// Compares backward grads of `fn` against central differences with step `h`
// for every element of every leaf. Returns the worst relative error seen,
// where rel = |a - n| / max(|a|, |n|, 1).
double gradcheck_max_rel_err(const ScalarFn& fn, const std::vector<DTensorPtr>& leaves,
                             double h = 1e-3);

// The per-op suite behind `fairfader grad-check`: every differentiable kernel
// over `instances` random draws each, tolerance 1e-4 (1e-3 for batchnorm).
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, int instances);

}  // namespace fairfader
