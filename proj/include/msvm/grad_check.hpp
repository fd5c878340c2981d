#pragma once

// Central finite-difference verification of vector-Jacobian products.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msvm/autodiff.hpp"
#include "msvm/rng.hpp"
#include "msvm/tensor.hpp"

namespace msvm {

using Tensors = std::vector<Tensor<double>>;

// A differentiable operation with an explicit vjp.
struct DiffOp {
  std::string name;
  std::function<Tensors(const Tensors& inputs)> forward;
  // (inputs, output cotangents) -> one cotangent per input, same shapes as inputs.
  std::function<Tensors(const Tensors& inputs, const Tensors& cotangents)> vjp;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // 0 checks every input coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coords = 0;
  // false: loss = sum of all outputs; true: a seeded random weighting of the outputs.
  bool random_cotangent = false;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string op;
  double max_rel_err = 0;
  double max_abs_err = 0;
  std::size_t coords_checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  bool passed = false;
};

// Relative error with an absolute floor so near-zero gradients are compared in absolute terms.
double relative_error(double analytic, double numeric);

// Throws DomainError for a step outside [1e-6, 1e-3] and NumericError (naming the op)
// when the forward pass produces non-finite values.
GradCheckReport grad_check(const DiffOp& op, const Tensors& inputs, const GradCheckOptions& options = {});

// Wraps a function over Vars; the vjp runs reverse-mode through the recorded graph.
DiffOp diff_op_from_graph(std::string name,
                          std::function<ad::Var<double>(const std::vector<ad::Var<double>>&)> fn);

// A DiffOp together with a generator of small random instances.
struct DiffOpCase {
  DiffOp op;
  std::function<Tensors(Rng&)> sample;
};

// Every differentiable operation of the library: primitives, the selective scan,
// route transforms, SS2D, MS2D and a full MS3 block.
std::vector<DiffOpCase> diff_op_catalog();

}  // namespace msvm
