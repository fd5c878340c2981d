#include "msvm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msvm/errors.hpp"
#include "msvm/model.hpp"
#include "msvm/ms2d.hpp"
#include "msvm/ops.hpp"
#include "msvm/routes.hpp"
#include "msvm/ssm.hpp"

namespace msvm {
namespace {

using TD = Tensor<double>;
using VD = ad::Var<double>;

void require_finite(const std::string& op, const Tensors& outs, const char* stage) {
  for (const auto& t : outs)
    if (!t.all_finite()) throw NumericError("grad_check: op '" + op + "' produced non-finite values in " + stage);
}

double weighted_loss(const Tensors& outs, const Tensors& weights) {
  double s = 0;
  for (std::size_t k = 0; k < outs.size(); ++k) {
    auto o = outs[k].data();
    auto w = weights[k].data();
    for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * w[i];
  }
  return s;
}

TD rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) { return random_uniform<double>(std::move(s), rng, lo, hi); }

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

DiffOp primitive(std::string name, std::function<Tensors(const Tensors&)> fwd,
                 std::function<Tensors(const Tensors&, const Tensors&)> vjp) {
  return {std::move(name), std::move(fwd), std::move(vjp)};
}

SsmParams<double> ssm_from(const Tensors& in, std::size_t first) {
  return {in[first], in[first + 1], in[first + 2], in[first + 3], in[first + 4], in[first + 5], {}};
}

Tensors ssm_tensors(const SsmParams<double>& p) { return {p.a_log, p.w_b, p.w_c, p.w_dt_down, p.w_dt_up, p.dt_bias}; }

ad::SsmVars<double> ssm_vars_from(const std::vector<VD>& v, std::size_t first) {
  return {v[first], v[first + 1], v[first + 2], v[first + 3], v[first + 4], v[first + 5], {}};
}

// Perturbed initialization so gradients are generic rather than structured.
SsmParams<double> random_ssm(std::size_t D, std::size_t N, Rng& rng) {
  auto p = init_ssm_params<double>(D, N, default_dt_rank(D), rng);
  for (auto* t : {&p.a_log, &p.w_b, &p.w_c, &p.w_dt_down, &p.w_dt_up})
    for (auto& v : t->data()) v += uniform(rng, -0.3, 0.3);
  for (auto& v : p.dt_bias.data()) v = uniform(rng, -1.0, 0.5);
  return p;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

GradCheckReport grad_check(const DiffOp& op, const Tensors& inputs, const GradCheckOptions& options) {
  if (!(options.step >= 1e-6 && options.step <= 1e-3))
    throw DomainError("grad_check: step " + std::to_string(options.step) + " outside [1e-6, 1e-3]");
  const Tensors outs = op.forward(inputs);
  require_finite(op.name, outs, "the forward pass");

  Rng rng(options.seed);
  Tensors weights;
  for (const auto& o : outs)
    weights.push_back(options.random_cotangent ? rand_t(o.shape(), rng) : TD(o.shape(), 1.0));

  const Tensors grads = op.vjp(inputs, weights);
  if (grads.size() != inputs.size())
    throw DimensionError("grad_check: op '" + op.name + "' returned " + std::to_string(grads.size()) +
                         " cotangents for " + std::to_string(inputs.size()) + " inputs");
  for (std::size_t k = 0; k < inputs.size(); ++k)
    if (grads[k].shape() != inputs[k].shape())
      throw DimensionError("grad_check: op '" + op.name + "' cotangent " + std::to_string(k) + " has shape " +
                           shape_str(grads[k].shape()) + ", input is " + shape_str(inputs[k].shape()));
  require_finite(op.name, grads, "the vjp");

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); ++i) coords.emplace_back(k, i);
  if (options.max_coords && coords.size() > options.max_coords) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coords);
  }

  GradCheckReport rep;
  rep.op = op.name;
  Tensors probe = inputs;
  for (auto [k, i] : coords) {
    const double x0 = probe[k].data()[i];
    probe[k].data()[i] = x0 + options.step;
    const Tensors plus = op.forward(probe);
    probe[k].data()[i] = x0 - options.step;
    const Tensors minus = op.forward(probe);
    probe[k].data()[i] = x0;
    require_finite(op.name, plus, "a perturbed forward pass");
    require_finite(op.name, minus, "a perturbed forward pass");
    const double fd = (weighted_loss(plus, weights) - weighted_loss(minus, weights)) / (2 * options.step);
    const double an = grads[k].data()[i];
    const double rel = relative_error(an, fd);
    rep.max_abs_err = std::max(rep.max_abs_err, std::abs(an - fd));
    if (rel > rep.max_rel_err || rep.coords_checked == 0) {
      rep.max_rel_err = std::max(rel, rep.max_rel_err);
      rep.worst_input = k;
      rep.worst_index = i;
    }
    ++rep.coords_checked;
  }
  rep.passed = rep.max_rel_err < options.tol;
  return rep;
}

DiffOp diff_op_from_graph(std::string name, std::function<VD(const std::vector<VD>&)> fn) {
  DiffOp op;
  op.name = name;
  op.forward = [fn](const Tensors& in) {
    std::vector<VD> v;
    for (const auto& t : in) v.push_back(VD::constant(t));
    return Tensors{fn(v).value()};
  };
  op.vjp = [fn, name](const Tensors& in, const Tensors& cot) {
    std::vector<VD> v;
    for (const auto& t : in) v.push_back(VD::parameter(t));
    const VD out = fn(v);
    if (cot.size() != 1 || cot[0].shape() != out.shape())
      throw DimensionError("op '" + name + "': expected one cotangent shaped " + shape_str(out.shape()));
    ad::backward(out, &cot[0]);
    Tensors g;
    for (std::size_t k = 0; k < v.size(); ++k) g.push_back(v[k].grad().empty() ? TD(in[k].shape()) : v[k].grad());
    return g;
  };
  return op;
}

std::vector<DiffOpCase> diff_op_catalog() {
  std::vector<DiffOpCase> cases;

  cases.push_back({primitive(
                       "dense_affine",
                       [](const Tensors& in) { return Tensors{dense_affine(in[0], in[1], in[2])}; },
                       [](const Tensors& in, const Tensors& g) {
                         auto r = dense_affine_vjp(in[0], in[1], true, g[0]);
                         return Tensors{r.x, r.w, r.b};
                       }),
                   [](Rng& rng) {
                     const std::size_t n = pick(rng, 1, 4), din = pick(rng, 1, 5), dout = pick(rng, 1, 4);
                     return Tensors{rand_t({n, din}, rng), rand_t({dout, din}, rng), rand_t({dout}, rng)};
                   }});

  for (std::size_t stride : {1, 2}) {
    cases.push_back({primitive(
                         "dwconv2d/s" + std::to_string(stride),
                         [stride](const Tensors& in) { return Tensors{dwconv2d(in[0], in[1], stride, 1)}; },
                         [stride](const Tensors& in, const Tensors& g) {
                           auto r = dwconv2d_vjp(in[0], in[1], stride, 1, g[0]);
                           return Tensors{r.x, r.k};
                         }),
                     [](Rng& rng) {
                       const std::size_t H = pick(rng, 1, 5), W = pick(rng, 1, 5), D = pick(rng, 1, 3);
                       return Tensors{rand_t({H, W, D}, rng), rand_t({3, 3, D}, rng)};
                     }});
  }

  cases.push_back({primitive(
                       "add_bias", [](const Tensors& in) { return Tensors{add_bias(in[0], in[1])}; },
                       [](const Tensors& in, const Tensors& g) {
                         return Tensors{g[0], add_bias_vjp_bias(g[0], in[1].size())};
                       }),
                   [](Rng& rng) {
                     const std::size_t D = pick(rng, 1, 4);
                     return Tensors{rand_t({pick(rng, 1, 3), pick(rng, 1, 3), D}, rng), rand_t({D}, rng)};
                   }});

  // Output extents are drawn per instance and stored alongside the input.
  cases.push_back({primitive(
                       "interpolate_nearest",
                       [](const Tensors& in) {
                         return Tensors{interpolate_nearest(in[0], in[0].extent(0) + 3, in[0].extent(1) + 2)};
                       },
                       [](const Tensors& in, const Tensors& g) {
                         return Tensors{interpolate_nearest_vjp(in[0].shape(), g[0])};
                       }),
                   [](Rng& rng) { return Tensors{rand_t({pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 3)}, rng)}; }});

  cases.push_back({primitive(
                       "layer_norm", [](const Tensors& in) { return Tensors{layer_norm(in[0], in[1], in[2])}; },
                       [](const Tensors& in, const Tensors& g) {
                         auto r = layer_norm_vjp(in[0], in[1], g[0]);
                         return Tensors{r.x, r.gamma, r.beta};
                       }),
                   [](Rng& rng) {
                     const std::size_t D = pick(rng, 2, 6);
                     return Tensors{rand_t({pick(rng, 1, 4), D}, rng, -2, 2), rand_t({D}, rng, 0.5, 1.5),
                                    rand_t({D}, rng)};
                   }});

  for (Activation act : {Activation::silu, Activation::gelu, Activation::sigmoid, Activation::relu,
                         Activation::softplus, Activation::neg_exp}) {
    cases.push_back({primitive(
                         std::string("activate/") + activation_name(act),
                         [act](const Tensors& in) { return Tensors{activate(in[0], act)}; },
                         [act](const Tensors& in, const Tensors& g) { return Tensors{activate_vjp(in[0], act, g[0])}; }),
                     [act](Rng& rng) {
                       TD x = rand_t({pick(rng, 1, 4), pick(rng, 1, 4)}, rng, -3, 3);
                       // keep relu probes away from its kink
                       if (act == Activation::relu)
                         for (auto& v : x.data())
                           if (std::abs(v) < 1e-2) v = 0.5;
                       return Tensors{x};
                     }});
  }

  cases.push_back({primitive(
                       "global_avg_pool", [](const Tensors& in) { return Tensors{global_avg_pool(in[0])}; },
                       [](const Tensors& in, const Tensors& g) {
                         return Tensors{global_avg_pool_vjp(in[0].shape(), g[0])};
                       }),
                   [](Rng& rng) { return Tensors{rand_t({pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 3)}, rng)}; }});

  cases.push_back({primitive(
                       "patchify", [](const Tensors& in) { return Tensors{patchify(in[0], 2)}; },
                       [](const Tensors& in, const Tensors& g) { return Tensors{patchify_vjp(in[0].shape(), 2, g[0])}; }),
                   [](Rng& rng) { return Tensors{rand_t({pick(rng, 1, 5), pick(rng, 1, 5), pick(rng, 1, 2)}, rng)}; }});

  cases.push_back({primitive(
                       "mul", [](const Tensors& in) { return Tensors{mul(in[0], in[1])}; },
                       [](const Tensors& in, const Tensors& g) { return Tensors{mul(g[0], in[1]), mul(g[0], in[0])}; }),
                   [](Rng& rng) {
                     const Shape s{pick(rng, 1, 4), pick(rng, 1, 3)};
                     return Tensors{rand_t(s, rng), rand_t(s, rng)};
                   }});

  cases.push_back({primitive(
                       "scale_channels", [](const Tensors& in) { return Tensors{scale_channels(in[0], in[1])}; },
                       [](const Tensors& in, const Tensors& g) {
                         return Tensors{scale_channels(g[0], in[1]), scale_channels_vjp_gate(in[0], g[0])};
                       }),
                   [](Rng& rng) {
                     const std::size_t D = pick(rng, 1, 4);
                     return Tensors{rand_t({pick(rng, 1, 3), pick(rng, 1, 3), D}, rng), rand_t({D}, rng)};
                   }});

  cases.push_back({primitive(
                       "slice_last", [](const Tensors& in) { return Tensors{slice_last(in[0], 1, in[0].last())}; },
                       [](const Tensors& in, const Tensors& g) { return Tensors{slice_last_vjp(in[0].shape(), 1, g[0])}; }),
                   [](Rng& rng) { return Tensors{rand_t({pick(rng, 1, 4), pick(rng, 2, 5)}, rng)}; }});

  cases.push_back({primitive(
                       "softmax_cross_entropy",
                       [](const Tensors& in) { return Tensors{softmax_cross_entropy(in[0], in[0].size() / 2)}; },
                       [](const Tensors& in, const Tensors& g) {
                         return Tensors{softmax_cross_entropy_vjp(in[0], in[0].size() / 2, g[0].data()[0])};
                       }),
                   [](Rng& rng) { return Tensors{rand_t({pick(rng, 2, 6)}, rng, -2, 2)}; }});

  cases.push_back({primitive(
                       "selective_scan",
                       [](const Tensors& in) { return Tensors{selective_scan(in[0], ssm_from(in, 1))}; },
                       [](const Tensors& in, const Tensors& g) {
                         const auto p = ssm_from(in, 1);
                         auto rec = selective_scan_recorded(in[0], p).record;
                         auto r = selective_scan_vjp(rec, p, g[0]);
                         Tensors out{r.u};
                         for (auto& t : ssm_tensors(r.params)) out.push_back(t);
                         return out;
                       }),
                   [](Rng& rng) {
                     const std::size_t L = pick(rng, 1, 8), D = pick(rng, 1, 3), N = pick(rng, 1, 3);
                     Tensors in{rand_t({L, D}, rng)};
                     for (auto& t : ssm_tensors(random_ssm(D, N, rng))) in.push_back(t);
                     return in;
                   }});

  for (ScanRoute route : kAllRoutes) {
    cases.push_back({diff_op_from_graph(std::string("flatten/") + route_name(route),
                                        [route](const std::vector<VD>& v) { return ad::flatten(route, v[0]); }),
                     [](Rng& rng) { return Tensors{rand_t({pick(rng, 1, 4), pick(rng, 1, 4), 2}, rng)}; }});
  }

  cases.push_back({diff_op_from_graph("ss2d",
                                      [](const std::vector<VD>& v) {
                                        std::vector<ad::SsmVars<double>> groups;
                                        for (std::size_t k = 0; k < 4; ++k) groups.push_back(ssm_vars_from(v, 1 + 6 * k));
                                        return ad::ss2d(v[0], std::span<const ad::SsmVars<double>>(groups));
                                      }),
                   [](Rng& rng) {
                     const std::size_t D = 2, N = 2;
                     Tensors in{rand_t({pick(rng, 1, 4), pick(rng, 1, 4), D}, rng)};
                     for (int k = 0; k < 4; ++k)
                       for (auto& t : ssm_tensors(random_ssm(D, N, rng))) in.push_back(t);
                     return in;
                   }});

  cases.push_back({diff_op_from_graph("ms2d",
                                      [](const std::vector<VD>& v) {
                                        return ad::ms2d(v[0], Ms2dConfig{}, v[1], v[2], ssm_vars_from(v, 3),
                                                        ssm_vars_from(v, 9));
                                      }),
                   [](Rng& rng) {
                     const std::size_t D = 2, N = 2;
                     Tensors in{rand_t({pick(rng, 2, 5), pick(rng, 2, 5), D}, rng), rand_t({3, 3, D}, rng),
                                rand_t({3, 3, D}, rng)};
                     for (int k = 0; k < 2; ++k)
                       for (auto& t : ssm_tensors(random_ssm(D, N, rng))) in.push_back(t);
                     return in;
                   }});

  // One full MS3 block of a small spec: input followed by every block parameter in name order.
  static const ArchSpec block_spec = [] {
    ArchSpec s = build_arch("toy");
    s.stem_dim = 4;
    s.stage_dims = {4, 8, 16, 32};
    s.state_dim = 2;
    return s;
  }();
  static const std::vector<std::string> block_names = [] {
    std::vector<std::string> names;
    const std::string prefix = block_prefix(0, 0) + ".";
    for (const auto& [name, shape] : parameter_shapes(block_spec))
      if (name.rfind(prefix, 0) == 0) names.push_back(name);
    return names;
  }();
  cases.push_back({diff_op_from_graph("ms3_block",
                                      [](const std::vector<VD>& v) {
                                        VarMap<double> p;
                                        for (std::size_t k = 0; k < block_names.size(); ++k)
                                          p.emplace(block_names[k], v[k + 1]);
                                        return ms3_forward(block_spec, p, 0, 0, v[0]);
                                      }),
                   [](Rng& rng) {
                     Model<double> m(block_spec, rng());
                     Tensors in{rand_t({pick(rng, 2, 4), pick(rng, 2, 4), block_spec.stage_dims[0]}, rng)};
                     for (const auto& name : block_names) {
                       TD t = m.params().at(name);
                       for (auto& x : t.data()) x += uniform(rng, -0.2, 0.2);
                       in.push_back(t);
                     }
                     return in;
                   }});

  return cases;
}

}  // namespace msvm
