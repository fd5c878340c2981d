#include "msvm/model.hpp"

#include <cmath>

#include "msvm/errors.hpp"
#include "msvm/rng.hpp"

namespace msvm {
namespace {

void add_ssm(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::size_t D,
             std::size_t N, std::size_t R) {
  out.push_back({prefix + ".a_log", {D, N}});
  out.push_back({prefix + ".dt_bias", {D}});
  out.push_back({prefix + ".w_b", {N, D}});
  out.push_back({prefix + ".w_c", {N, D}});
  out.push_back({prefix + ".w_dt_down", {R, D}});
  out.push_back({prefix + ".w_dt_up", {D, R}});
}

void add_norm(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::size_t D) {
  out.push_back({prefix + ".beta", {D}});
  out.push_back({prefix + ".gamma", {D}});
}

void add_dense(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::size_t dout,
               std::size_t din) {
  out.push_back({prefix + ".bias", {dout}});
  out.push_back({prefix + ".weight", {dout, din}});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
const ad::Var<T>& get(const VarMap<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::out_of_range("missing model parameter '" + name + "'");
  return it->second;
}

template <typename T>
ad::SsmVars<T> ssm_vars(const VarMap<T>& p, const std::string& prefix) {
  return {get(p, prefix + ".a_log"),   get(p, prefix + ".w_b"),     get(p, prefix + ".w_c"),
          get(p, prefix + ".w_dt_down"), get(p, prefix + ".w_dt_up"), get(p, prefix + ".dt_bias"), {}};
}

template <typename T>
ad::Var<T> norm(const VarMap<T>& p, const std::string& prefix, const ad::Var<T>& x) {
  return ad::layer_norm(x, get(p, prefix + ".gamma"), get(p, prefix + ".beta"));
}

template <typename T>
ad::Var<T> linear(const VarMap<T>& p, const std::string& prefix, const ad::Var<T>& x) {
  return ad::dense(x, get(p, prefix + ".weight"), get(p, prefix + ".bias"));
}

}  // namespace

std::string block_prefix(std::size_t stage, std::size_t block) {
  return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block);
}

std::string mixer_layer_id(std::size_t stage, std::size_t block) { return block_prefix(stage, block); }

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ArchSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t P2 = spec.stem_patch * spec.stem_patch;
  add_dense(out, "stem", spec.stem_dim, P2 * spec.in_channels);
  add_norm(out, "stem.norm", spec.stem_dim);
  for (std::size_t i = 0; i < spec.num_stages(); ++i) {
    const std::size_t d = spec.stage_dims[i], e = spec.mixer_width(i), N = spec.state_dim;
    const std::size_t R = spec.stage_dt_rank(i);
    for (std::size_t j = 0; j < spec.stage_depths[i]; ++j) {
      const std::string b = block_prefix(i, j);
      add_norm(out, b + ".norm1", d);
      add_dense(out, b + ".in_proj", spec.gated ? 2 * e : e, d);
      out.push_back({b + ".conv.weight", {3, 3, e}});
      out.push_back({b + ".conv.bias", {e}});
      if (spec.mixer == TokenMixer::ms2d) {
        if (spec.ms2d.n_full()) {
          out.push_back({b + ".mixer.dw_full", {3, 3, e}});
          add_ssm(out, b + ".mixer.ssm_full", e, N, R);
        }
        if (spec.ms2d.n_down()) {
          out.push_back({b + ".mixer.dw_down", {3, 3, e}});
          add_ssm(out, b + ".mixer.ssm_down", e, N, R);
        }
      } else {
        for (std::size_t k = 0; k < kAllRoutes.size(); ++k) add_ssm(out, b + ".mixer.ssm." + std::to_string(k), e, N, R);
      }
      add_norm(out, b + ".out_norm", e);
      if (spec.use_se) {
        add_dense(out, b + ".se.fc1", spec.se_hidden(i), e);
        add_dense(out, b + ".se.fc2", e, spec.se_hidden(i));
      }
      add_dense(out, b + ".out_proj", d, e);
      if (spec.use_convffn) {
        const std::size_t f = spec.ffn_ratio * d;
        add_norm(out, b + ".norm2", d);
        add_dense(out, b + ".ffn.fc1", f, d);
        out.push_back({b + ".ffn.conv.weight", {3, 3, f}});
        out.push_back({b + ".ffn.conv.bias", {f}});
        add_dense(out, b + ".ffn.fc2", d, f);
      }
    }
    if (i + 1 < spec.num_stages()) {
      const std::string p = "stages." + std::to_string(i) + ".downsample";
      add_dense(out, p, spec.stage_dims[i + 1], 4 * d);
      add_norm(out, p + ".norm", spec.stage_dims[i + 1]);
    }
  }
  add_norm(out, "head.norm", spec.stage_dims.back());
  add_dense(out, "head", spec.num_classes, spec.stage_dims.back());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> residual_output_params(const ArchSpec& spec) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < spec.num_stages(); ++i)
    for (std::size_t j = 0; j < spec.stage_depths[i]; ++j) {
      const std::string b = block_prefix(i, j);
      names.push_back(b + ".out_proj.weight");
      names.push_back(b + ".out_proj.bias");
      if (spec.use_convffn) {
        names.push_back(b + ".ffn.fc2.weight");
        names.push_back(b + ".ffn.fc2.bias");
      }
    }
  return names;
}

template <typename T>
Model<T>::Model(ArchSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  Rng rng(seed);
  for (const auto& [name, shape] : parameter_shapes(spec_)) {
    if (params_.count(name)) continue;
    if (ends_with(name, ".a_log")) {
      const std::string prefix = name.substr(0, name.size() - 6);
      const std::size_t D = shape[0], N = shape[1];
      const std::size_t R = spec_.stage_dt_rank(std::stoul(prefix.substr(7, prefix.find('.', 7) - 7)));
      auto p = init_ssm_params<T>(D, N, R, rng);
      params_[prefix + ".a_log"] = std::move(p.a_log);
      params_[prefix + ".dt_bias"] = std::move(p.dt_bias);
      params_[prefix + ".w_b"] = std::move(p.w_b);
      params_[prefix + ".w_c"] = std::move(p.w_c);
      params_[prefix + ".w_dt_down"] = std::move(p.w_dt_down);
      params_[prefix + ".w_dt_up"] = std::move(p.w_dt_up);
    } else if (ends_with(name, ".gamma")) {
      params_[name] = Tensor<T>(shape, T(1));
    } else if (ends_with(name, ".beta") || ends_with(name, ".bias")) {
      params_[name] = Tensor<T>(shape);
    } else if (shape.size() == 3) {  // depthwise 3x3
      params_[name] = random_uniform<T>(shape, rng, -1.0 / 3.0, 1.0 / 3.0);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape[1]));
      params_[name] = random_uniform<T>(shape, rng, -bound, bound);
    }
  }
}

template <typename T>
Model<T>::Model(ArchSpec spec, ParamMap<T> params) : spec_(std::move(spec)), params_(std::move(params)) {
  const auto shapes = parameter_shapes(spec_);
  if (shapes.size() != params_.size())
    throw ConfigError("model parameters: expected " + std::to_string(shapes.size()) + " tensors, got " +
                      std::to_string(params_.size()));
  for (const auto& [name, shape] : shapes) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("model parameters: missing '" + name + "'");
    if (it->second.shape() != shape)
      throw DimensionError("model parameter '" + name + "': expected " + shape_str(shape) + ", got " +
                           shape_str(it->second.shape()));
  }
}

template <typename T>
std::size_t Model<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : params_) n += v.size();
  return n;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& image, ForwardTrace* trace) const {
  return model_forward(spec_, as_constants(params_), ad::Var<T>::constant(image), trace).value();
}

template <typename T>
VarMap<T> as_parameters(const ParamMap<T>& params) {
  VarMap<T> v;
  for (const auto& [k, t] : params) v.emplace(k, ad::Var<T>::parameter(t));
  return v;
}

template <typename T>
VarMap<T> as_constants(const ParamMap<T>& params) {
  VarMap<T> v;
  for (const auto& [k, t] : params) v.emplace(k, ad::Var<T>::constant(t));
  return v;
}

template <typename T>
ad::Var<T> ms3_forward(const ArchSpec& spec, const VarMap<T>& p, std::size_t stage, std::size_t block,
                       const ad::Var<T>& x, ForwardTrace* trace) {
  using namespace ad;
  const std::size_t d = spec.stage_dims.at(stage), e = spec.mixer_width(stage);
  if (x.value().rank() != 3 || x.shape()[2] != d)
    throw DimensionError("ms3 block " + block_prefix(stage, block) + ": expected [H, W, " + std::to_string(d) +
                         "], got " + shape_str(x.shape()));
  const std::size_t H = x.shape()[0], W = x.shape()[1];
  const std::string b = block_prefix(stage, block);

  // MSVSS
  Var<T> t = linear(p, b + ".in_proj", norm(p, b + ".norm1", x));
  Var<T> xs = spec.gated ? slice_last(t, 0, e) : t;
  xs = activate(add_bias(dwconv(xs, get(p, b + ".conv.weight"), 1, 1), get(p, b + ".conv.bias")), Activation::silu);

  std::vector<RouteCapture>* capture = nullptr;
  if (trace && trace->capture_mixers) capture = &trace->mixers[mixer_layer_id(stage, block)];
  Var<T> y;
  if (spec.mixer == TokenMixer::ms2d) {
    const bool full = spec.ms2d.n_full() > 0, down = spec.ms2d.n_down() > 0;
    y = ms2d(xs, spec.ms2d, full ? get(p, b + ".mixer.dw_full") : Var<T>{},
             down ? get(p, b + ".mixer.dw_down") : Var<T>{}, full ? ssm_vars(p, b + ".mixer.ssm_full") : SsmVars<T>{},
             down ? ssm_vars(p, b + ".mixer.ssm_down") : SsmVars<T>{}, capture);
  } else {
    std::vector<SsmVars<T>> groups;
    for (std::size_t k = 0; k < kAllRoutes.size(); ++k) {
      groups.push_back(ssm_vars(p, b + ".mixer.ssm." + std::to_string(k)));
      if (capture)
        capture->push_back({kAllRoutes[k], 1, xs.value().template cast<double>(),
                            groups.back().values().template cast<double>()});
    }
    y = ss2d(xs, std::span<const SsmVars<T>>(groups));
  }
  y = norm(p, b + ".out_norm", y);
  if (spec.use_se) {
    Var<T> s = activate(linear(p, b + ".se.fc1", avg_pool(y)), Activation::relu);
    s = activate(linear(p, b + ".se.fc2", s), Activation::sigmoid);
    y = scale_channels(y, s);
  }
  if (spec.gated) y = mul(y, activate(slice_last(t, e, 2 * e), Activation::silu));
  Var<T> out = add(x, linear(p, b + ".out_proj", y));

  if (spec.use_convffn) {
    Var<T> h = linear(p, b + ".ffn.fc1", norm(p, b + ".norm2", out));
    h = activate(add_bias(dwconv(h, get(p, b + ".ffn.conv.weight"), 1, 1), get(p, b + ".ffn.conv.bias")),
                 Activation::gelu);
    out = add(out, linear(p, b + ".ffn.fc2", h));
  }
  (void)H;
  (void)W;
  return out;
}

template <typename T>
Tensor<T> ms3_forward(const Model<T>& model, std::size_t stage, std::size_t block, const Tensor<T>& x) {
  if (stage >= model.spec().num_stages() || block >= model.spec().stage_depths[stage])
    throw std::out_of_range("ms3_forward: no block " + block_prefix(stage, block));
  return ms3_forward(model.spec(), as_constants(model.params()), stage, block, ad::Var<T>::constant(x)).value();
}

template <typename T>
ad::Var<T> model_forward(const ArchSpec& spec, const VarMap<T>& p, const ad::Var<T>& image, ForwardTrace* trace) {
  using namespace ad;
  const auto& img = image.value();
  if (img.rank() != 3 || img.extent(2) != spec.in_channels)
    throw DimensionError("model_forward: expected [H, W, " + std::to_string(spec.in_channels) + "] image, got " +
                         shape_str(img.shape()));
  if (img.extent(0) < spec.stem_patch || img.extent(1) < spec.stem_patch)
    throw DimensionError("model_forward: input " + shape_str(img.shape()) + " too small for the " +
                         std::to_string(spec.stem_patch) + "x" + std::to_string(spec.stem_patch) + " stem");
  Var<T> x = norm(p, "stem.norm", linear(p, "stem", patchify(image, spec.stem_patch)));
  for (std::size_t i = 0; i < spec.num_stages(); ++i) {
    for (std::size_t j = 0; j < spec.stage_depths[i]; ++j) x = ms3_forward(spec, p, i, j, x, trace);
    if (trace) trace->stage_outputs.push_back(x.shape());
    if (i + 1 < spec.num_stages()) {
      const std::string ds = "stages." + std::to_string(i) + ".downsample";
      x = norm(p, ds + ".norm", linear(p, ds, patchify(x, 2)));
    }
  }
  x = norm(p, "head.norm", x);
  return linear(p, "head", avg_pool(x));
}

template <typename T>
void zero_residual_branches(Model<T>& model) {
  for (const auto& name : residual_output_params(model.spec())) {
    auto& t = model.params().at(name);
    std::fill(t.data().begin(), t.data().end(), T(0));
  }
}

#define MSVM_INSTANTIATE_MODEL(T)                                                                               \
  template class Model<T>;                                                                                      \
  template VarMap<T> as_parameters(const ParamMap<T>&);                                                         \
  template VarMap<T> as_constants(const ParamMap<T>&);                                                          \
  template ad::Var<T> model_forward(const ArchSpec&, const VarMap<T>&, const ad::Var<T>&, ForwardTrace*);       \
  template ad::Var<T> ms3_forward(const ArchSpec&, const VarMap<T>&, std::size_t, std::size_t, const ad::Var<T>&, \
                                  ForwardTrace*);                                                               \
  template Tensor<T> ms3_forward(const Model<T>&, std::size_t, std::size_t, const Tensor<T>&);                  \
  template void zero_residual_branches(Model<T>&);

MSVM_INSTANTIATE_MODEL(float)
MSVM_INSTANTIATE_MODEL(double)

}  // namespace msvm
