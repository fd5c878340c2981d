#include "msvm/autodiff.hpp"

#include <unordered_set>

#include "msvm/errors.hpp"

namespace msvm::ad {
namespace {

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& from) {
  if (into.empty()) {
    into = from;
    return;
  }
  if (into.shape() != from.shape())
    throw DimensionError("gradient shape " + shape_str(from.shape()) + " does not match " + shape_str(into.shape()));
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

}  // namespace

template <typename T>
Var<T> make_op(const char* op, Tensor<T> value, std::vector<Var<T>> inputs, typename Node<T>::Vjp vjp) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->vjp = std::move(vjp);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Node<T>* r = root.node().get();
  if (seed) {
    if (seed->shape() != r->value.shape()) throw DimensionError("backward: seed shape mismatch");
    accumulate(r->grad, *seed);
  } else {
    if (r->value.size() != 1) throw DimensionError("backward: root must be a scalar without a seed");
    accumulate(r->grad, Tensor<T>(r->value.shape(), T(1)));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->is_leaf || node->grad.empty()) continue;
    auto gins = node->vjp(node->grad);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      Node<T>* p = node->parents[i].get();
      if (!p || !p->requires_grad || i >= gins.size() || gins[i].empty()) continue;
      accumulate(p->grad, gins[i]);
    }
    node->grad = Tensor<T>();
  }
}

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const bool has_bias = b.defined();
  const Tensor<T> none;
  auto out = dense_affine(x.value(), w.value(), has_bias ? b.value() : none);
  auto xn = x.node(), wn = w.node();
  std::vector<Var<T>> ins{x, w};
  if (has_bias) ins.push_back(b);
  return make_op<T>("dense_affine", std::move(out), ins, [xn, wn, has_bias](const Tensor<T>& g) {
    auto r = dense_affine_vjp(xn->value, wn->value, has_bias, g);
    std::vector<Tensor<T>> v{std::move(r.x), std::move(r.w)};
    if (has_bias) v.push_back(std::move(r.b));
    return v;
  });
}

template <typename T>
Var<T> dwconv(const Var<T>& x, const Var<T>& k, std::size_t stride, std::size_t padding) {
  auto xn = x.node(), kn = k.node();
  return make_op<T>("dwconv2d", dwconv2d(x.value(), k.value(), stride, padding), {x, k},
                    [xn, kn, stride, padding](const Tensor<T>& g) {
                      auto r = dwconv2d_vjp(xn->value, kn->value, stride, padding, g);
                      return std::vector<Tensor<T>>{std::move(r.x), std::move(r.k)};
                    });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  const std::size_t D = x.value().last();
  return make_op<T>("add_bias", msvm::add_bias(x.value(), b.value()), {x, b}, [D](const Tensor<T>& g) {
    return std::vector<Tensor<T>>{g, add_bias_vjp_bias(g, D)};
  });
}

template <typename T>
Var<T> interpolate(const Var<T>& x, std::size_t H, std::size_t W) {
  const Shape xs = x.shape();
  return make_op<T>("interpolate_nearest", interpolate_nearest(x.value(), H, W), {x}, [xs](const Tensor<T>& g) {
    return std::vector<Tensor<T>>{interpolate_nearest_vjp(xs, g)};
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  auto xn = x.node(), gn = gamma.node();
  return make_op<T>("layer_norm", msvm::layer_norm(x.value(), gamma.value(), beta.value(), eps), {x, gamma, beta},
                    [xn, gn, eps](const Tensor<T>& g) {
                      auto r = layer_norm_vjp(xn->value, gn->value, g, eps);
                      return std::vector<Tensor<T>>{std::move(r.x), std::move(r.gamma), std::move(r.beta)};
                    });
}

template <typename T>
Var<T> activate(const Var<T>& x, Activation act) {
  auto xn = x.node();
  return make_op<T>(activation_name(act), msvm::activate(x.value(), act), {x}, [xn, act](const Tensor<T>& g) {
    return std::vector<Tensor<T>>{activate_vjp(xn->value, act, g)};
  });
}

template <typename T>
Var<T> avg_pool(const Var<T>& x) {
  const Shape xs = x.shape();
  return make_op<T>("global_avg_pool", global_avg_pool(x.value()), {x}, [xs](const Tensor<T>& g) {
    return std::vector<Tensor<T>>{global_avg_pool_vjp(xs, g)};
  });
}

template <typename T>
Var<T> patchify(const Var<T>& x, std::size_t K) {
  const Shape xs = x.shape();
  return make_op<T>("patchify", msvm::patchify(x.value(), K), {x}, [xs, K](const Tensor<T>& g) {
    return std::vector<Tensor<T>>{patchify_vjp(xs, K, g)};
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_op<T>("add", msvm::add(a.value(), b.value()), {a, b},
                    [](const Tensor<T>& g) { return std::vector<Tensor<T>>{g, g}; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto an = a.node(), bn = b.node();
  return make_op<T>("mul", msvm::mul(a.value(), b.value()), {a, b}, [an, bn](const Tensor<T>& g) {
    return std::vector<Tensor<T>>{msvm::mul(g, bn->value), msvm::mul(g, an->value)};
  });
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& gate) {
  auto xn = x.node(), gn = gate.node();
  return make_op<T>("scale_channels", msvm::scale_channels(x.value(), gate.value()), {x, gate},
                    [xn, gn](const Tensor<T>& g) {
                      return std::vector<Tensor<T>>{msvm::scale_channels(g, gn->value),
                                                    scale_channels_vjp_gate(xn->value, g)};
                    });
}

template <typename T>
Var<T> slice_last(const Var<T>& x, std::size_t begin, std::size_t end) {
  const Shape xs = x.shape();
  return make_op<T>("slice_last", msvm::slice_last(x.value(), begin, end), {x}, [xs, begin](const Tensor<T>& g) {
    return std::vector<Tensor<T>>{slice_last_vjp(xs, begin, g)};
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t label) {
  auto ln = logits.node();
  return make_op<T>("softmax_cross_entropy", softmax_cross_entropy(logits.value(), label), {logits},
                    [ln, label](const Tensor<T>& g) {
                      return std::vector<Tensor<T>>{softmax_cross_entropy_vjp(ln->value, label, g[0])};
                    });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& index, Shape out_shape) {
  const Shape xs = x.shape();
  const std::size_t D = x.value().last();
  const std::size_t rows_in = x.value().size() / D;
  if (shape_size(out_shape) != index.size() * D || out_shape.back() != D)
    throw DimensionError("gather_rows: output shape " + shape_str(out_shape) + " incompatible with " +
                         std::to_string(index.size()) + " rows of " + std::to_string(D));
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows_in) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(x.value().data().data() + index[i] * D, D, out.data().data() + i * D);
  }
  return make_op<T>("gather_rows", std::move(out), {x}, [xs, index, D](const Tensor<T>& g) {
    Tensor<T> gx(xs);
    for (std::size_t i = 0; i < index.size(); ++i) {
      T* dst = gx.data().data() + index[i] * D;
      const T* src = g.data().data() + i * D;
      for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
    }
    return std::vector<Tensor<T>>{std::move(gx)};
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  if (weights.shape() != x.shape()) throw DimensionError("weighted_sum: weight shape mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
  return make_op<T>("weighted_sum", Tensor<T>::scalar(acc), {x}, [weights](const Tensor<T>& g) {
    Tensor<T> gx = weights;
    for (auto& v : gx.data()) v *= g[0];
    return std::vector<Tensor<T>>{std::move(gx)};
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  return make_op<T>("scale", std::move(out), {x}, [factor](const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (auto& v : gx.data()) v *= factor;
    return std::vector<Tensor<T>>{std::move(gx)};
  });
}

template <typename T>
SsmVars<T> SsmVars<T>::constant(const SsmParams<T>& p) {
  SsmVars v{Var<T>::constant(p.a_log),   Var<T>::constant(p.w_b),     Var<T>::constant(p.w_c),
            Var<T>::constant(p.w_dt_down), Var<T>::constant(p.w_dt_up), Var<T>::constant(p.dt_bias), {}};
  if (p.has_skip()) v.d_skip = Var<T>::constant(p.d_skip);
  return v;
}

template <typename T>
SsmVars<T> SsmVars<T>::parameter(const SsmParams<T>& p) {
  SsmVars v{Var<T>::parameter(p.a_log),   Var<T>::parameter(p.w_b),     Var<T>::parameter(p.w_c),
            Var<T>::parameter(p.w_dt_down), Var<T>::parameter(p.w_dt_up), Var<T>::parameter(p.dt_bias), {}};
  if (p.has_skip()) v.d_skip = Var<T>::parameter(p.d_skip);
  return v;
}

template <typename T>
SsmParams<T> SsmVars<T>::values() const {
  return {a_log.value(),   w_b.value(),     w_c.value(), w_dt_down.value(),
          w_dt_up.value(), dt_bias.value(), d_skip.defined() ? d_skip.value() : Tensor<T>()};
}

template <typename T>
Var<T> selective_scan(const Var<T>& u, const SsmVars<T>& p) {
  auto params = std::make_shared<SsmParams<T>>(p.values());
  auto result = selective_scan_recorded(u.value(), *params);
  std::vector<Var<T>> ins{u, p.a_log, p.w_b, p.w_c, p.w_dt_down, p.w_dt_up, p.dt_bias};
  if (p.d_skip.defined()) ins.push_back(p.d_skip);
  bool any = false;
  for (const auto& in : ins) any = any || in.requires_grad();
  if (!any) return Var<T>::constant(std::move(result.y));
  auto record = std::make_shared<ScanRecord<T>>(std::move(result.record));
  return make_op<T>("selective_scan", std::move(result.y), ins, [record, params](const Tensor<T>& g) {
    auto r = selective_scan_vjp(*record, *params, g);
    std::vector<Tensor<T>> v{std::move(r.u),         std::move(r.params.a_log),   std::move(r.params.w_b),
                             std::move(r.params.w_c), std::move(r.params.w_dt_down), std::move(r.params.w_dt_up),
                             std::move(r.params.dt_bias)};
    if (params->has_skip()) v.push_back(std::move(r.params.d_skip));
    return v;
  });
}

#define MSVM_INSTANTIATE_AD(T)                                                                       \
  template Var<T> make_op(const char*, Tensor<T>, std::vector<Var<T>>, typename Node<T>::Vjp);      \
  template void backward(const Var<T>&, const Tensor<T>*);                                         \
  template Var<T> dense(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> dwconv(const Var<T>&, const Var<T>&, std::size_t, std::size_t);                  \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                                          \
  template Var<T> interpolate(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, double);                 \
  template Var<T> activate(const Var<T>&, Activation);                                             \
  template Var<T> avg_pool(const Var<T>&);                                                         \
  template Var<T> patchify(const Var<T>&, std::size_t);                                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                               \
  template Var<T> scale_channels(const Var<T>&, const Var<T>&);                                    \
  template Var<T> slice_last(const Var<T>&, std::size_t, std::size_t);                             \
  template Var<T> cross_entropy(const Var<T>&, std::size_t);                                       \
  template Var<T> gather_rows(const Var<T>&, const std::vector<std::size_t>&, Shape);              \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);                                   \
  template Var<T> scale(const Var<T>&, T);                                                         \
  template struct SsmVars<T>;                                                                      \
  template Var<T> selective_scan(const Var<T>&, const SsmVars<T>&);

MSVM_INSTANTIATE_AD(float)
MSVM_INSTANTIATE_AD(double)

}  // namespace msvm::ad
