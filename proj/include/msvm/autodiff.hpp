#pragma once

// Reverse-mode differentiation over the fixed primitive set.
//
// A Var is a handle to a node holding a value and, when any input requires a
// gradient, the parents and vjp closure needed to propagate cotangents. Ops on
// Vars whose inputs are all constants record nothing, so inference builds no graph.

#include <functional>
#include <memory>
#include <vector>

#include "msvm/ops.hpp"
#include "msvm/ssm.hpp"
#include "msvm/tensor.hpp"

namespace msvm::ad {

template <typename T>
struct Node {
  using Vjp = std::function<std::vector<Tensor<T>>(const Tensor<T>& gout)>;

  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  Vjp vjp;  // one cotangent per parent; an empty tensor means "no contribution"
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> v) { return Var(std::move(v), false); }
  static Var parameter(Tensor<T> v) { return Var(std::move(v), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  // Accumulated gradient after backward(); empty if the node was not reached.
  const Tensor<T>& grad() const { return node_->grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> make_op(const char* op, Tensor<T> value, std::vector<Var<T>> inputs, typename Node<T>::Vjp vjp);

// Propagates from a scalar root (seed 1) or with an explicit cotangent seed.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr);

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b = {});
template <typename T>
Var<T> dwconv(const Var<T>& x, const Var<T>& k, std::size_t stride, std::size_t padding);
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b);
template <typename T>
Var<T> interpolate(const Var<T>& x, std::size_t H, std::size_t W);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = kLayerNormEps);
template <typename T>
Var<T> activate(const Var<T>& x, Activation act);
template <typename T>
Var<T> avg_pool(const Var<T>& x);
template <typename T>
Var<T> patchify(const Var<T>& x, std::size_t K);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& g);
template <typename T>
Var<T> slice_last(const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t label);
// out row i = x row index[i] (rows are the leading-axes flattening); output shape given.
template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& index, Shape out_shape);
// sum(x * weights) as a one-element tensor; weights are constant.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);

template <typename T>
struct SsmVars {
  Var<T> a_log, w_b, w_c, w_dt_down, w_dt_up, dt_bias, d_skip;

  static SsmVars constant(const SsmParams<T>& p);
  static SsmVars parameter(const SsmParams<T>& p);
  SsmParams<T> values() const;
};

template <typename T>
Var<T> selective_scan(const Var<T>& u, const SsmVars<T>& params);

}  // namespace msvm::ad
