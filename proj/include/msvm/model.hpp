#pragma once

// MS3 blocks, stages and the full classifier built from an ArchSpec.
//
// Parameters live in a name-ordered map; the same differentiable forward is
// used for inference (constant Vars, no graph) and training (parameter Vars).

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msvm/arch.hpp"
#include "msvm/autodiff.hpp"
#include "msvm/ms2d.hpp"

namespace msvm {

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;
template <typename T>
using VarMap = std::map<std::string, ad::Var<T>>;

// Optional observations collected during a forward pass.
struct ForwardTrace {
  bool capture_mixers = false;
  std::vector<Shape> stage_outputs;                          // block-stack output per stage
  std::map<std::string, std::vector<RouteCapture>> mixers;   // keyed by layer id
};

std::string block_prefix(std::size_t stage, std::size_t block);
// Layer id used by ForwardTrace / decay analysis, e.g. "stages.3.blocks.1".
std::string mixer_layer_id(std::size_t stage, std::size_t block);

// Names and shapes of every learnable tensor, in name order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ArchSpec& spec);

template <typename T>
class Model {
 public:
  Model(ArchSpec spec, std::uint64_t seed);
  Model(ArchSpec spec, ParamMap<T> params);

  const ArchSpec& spec() const { return spec_; }
  const ParamMap<T>& params() const { return params_; }
  ParamMap<T>& params() { return params_; }
  std::size_t param_count() const;

  // Logits [num_classes], pre-softmax.
  Tensor<T> forward(const Tensor<T>& image, ForwardTrace* trace = nullptr) const;

  template <typename U>
  Model<U> cast() const {
    ParamMap<U> p;
    for (const auto& [k, v] : params_) p.emplace(k, v.template cast<U>());
    return Model<U>(spec_, std::move(p));
  }

 private:
  ArchSpec spec_;
  ParamMap<T> params_;
};

template <typename T>
VarMap<T> as_parameters(const ParamMap<T>& params);
template <typename T>
VarMap<T> as_constants(const ParamMap<T>& params);

template <typename T>
ad::Var<T> model_forward(const ArchSpec& spec, const VarMap<T>& params, const ad::Var<T>& image,
                         ForwardTrace* trace = nullptr);

// One MS3 block: x + MSVSS(norm(x)), then + ConvFFN(norm(.)) when enabled.
template <typename T>
ad::Var<T> ms3_forward(const ArchSpec& spec, const VarMap<T>& params, std::size_t stage, std::size_t block,
                       const ad::Var<T>& x, ForwardTrace* trace = nullptr);
template <typename T>
Tensor<T> ms3_forward(const Model<T>& model, std::size_t stage, std::size_t block, const Tensor<T>& x);

// Zeroes the final projection (weight and bias) of every residual branch.
template <typename T>
void zero_residual_branches(Model<T>& model);

// Names of the final projection tensors of each residual branch.
std::vector<std::string> residual_output_params(const ArchSpec& spec);

}  // namespace msvm
