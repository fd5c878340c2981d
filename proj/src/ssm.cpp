#include "msvm/ssm.hpp"

#include <cmath>

#include "msvm/errors.hpp"
#include "msvm/ops.hpp"

namespace msvm {
namespace {

template <typename T>
void expect_shape(const Tensor<T>& t, const Shape& s, const char* what) {
  if (t.shape() != s)
    throw DimensionError(std::string(what) + ": expected " + shape_str(s) + ", got " + shape_str(t.shape()));
}

template <typename T>
void require_sequence(const Tensor<T>& u) {
  if (u.empty()) throw DimensionError("selective scan: empty sequence (L = 0)");
  if (u.rank() != 2) throw DimensionError("selective scan: input must be [L, D], got " + shape_str(u.shape()));
}

}  // namespace

std::size_t default_dt_rank(std::size_t channels) { return std::max<std::size_t>(1, (channels + 15) / 16); }

std::size_t ssm_param_count(std::size_t D, std::size_t N, std::size_t R, bool skip) {
  // a_log + w_b + w_c + w_dt_down + w_dt_up + dt_bias (+ d_skip)
  return D * N + 2 * N * D + R * D + D * R + D + (skip ? D : 0);
}

template <typename T>
std::size_t SsmParams<T>::param_count() const {
  return ssm_param_count(channels(), state_dim(), dt_rank(), has_skip());
}

template <typename T>
void SsmParams<T>::validate() const {
  if (a_log.rank() != 2) throw DimensionError("SsmParams: a_log must be [D, N], got " + shape_str(a_log.shape()));
  const std::size_t D = channels(), N = state_dim();
  if (w_dt_down.rank() != 2) throw DimensionError("SsmParams: w_dt_down must be [R, D]");
  const std::size_t R = dt_rank();
  expect_shape(w_b, {N, D}, "SsmParams.w_b");
  expect_shape(w_c, {N, D}, "SsmParams.w_c");
  expect_shape(w_dt_down, {R, D}, "SsmParams.w_dt_down");
  expect_shape(w_dt_up, {D, R}, "SsmParams.w_dt_up");
  expect_shape(dt_bias, {D}, "SsmParams.dt_bias");
  if (!d_skip.empty()) expect_shape(d_skip, {D}, "SsmParams.d_skip");
}

template <typename T>
SsmParams<T> init_ssm_params(std::size_t D, std::size_t N, std::size_t R, Rng& rng, bool skip) {
  if (D == 0 || N == 0 || R == 0) throw ConfigError("init_ssm_params: D, N and rank must be positive");
  SsmParams<T> p;
  p.a_log = Tensor<T>(Shape{D, N});
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t n = 0; n < N; ++n) p.a_log.at(d, n) = static_cast<T>(std::log(static_cast<double>(n + 1)));
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(D));
  p.w_b = random_uniform<T>({N, D}, rng, -in_bound, in_bound);
  p.w_c = random_uniform<T>({N, D}, rng, -in_bound, in_bound);
  p.w_dt_down = random_uniform<T>({R, D}, rng, -in_bound, in_bound);
  const double up_bound = 1.0 / std::sqrt(static_cast<double>(R));
  p.w_dt_up = random_uniform<T>({D, R}, rng, -up_bound, up_bound);
  p.dt_bias = Tensor<T>(Shape{D});
  for (std::size_t d = 0; d < D; ++d) {
    const double dt = std::exp(uniform(rng, std::log(1e-3), std::log(1e-1)));
    p.dt_bias[d] = static_cast<T>(softplus_inverse(std::max(dt, 1e-4)));
  }
  if (skip) p.d_skip = Tensor<T>(Shape{D}, T(1));
  return p;
}

template <typename T>
void ScanInputs<T>::validate() const {
  require_sequence(u);
  const std::size_t L = length(), D = channels();
  if (a.rank() != 2 || a.extent(0) != D) throw DimensionError("ScanInputs: A must be [D, N], got " + shape_str(a.shape()));
  const std::size_t N = state_dim();
  expect_shape(delta, {L, D}, "ScanInputs.delta");
  expect_shape(b, {L, N}, "ScanInputs.B");
  expect_shape(c, {L, N}, "ScanInputs.C");
  if (!d_skip.empty()) expect_shape(d_skip, {D}, "ScanInputs.d_skip");
}

template <typename T>
ScanInputs<T> project_inputs(const Tensor<T>& u, const SsmParams<T>& p) {
  require_sequence(u);
  p.validate();
  if (u.extent(1) != p.channels())
    throw DimensionError("selective scan: input " + shape_str(u.shape()) + " vs " + std::to_string(p.channels()) +
                         " parameter channels");
  const Tensor<T> none;
  ScanInputs<T> in;
  in.u = u;
  in.b = dense_affine(u, p.w_b, none);
  in.c = dense_affine(u, p.w_c, none);
  in.delta = activate(dense_affine(dense_affine(u, p.w_dt_down, none), p.w_dt_up, p.dt_bias), Activation::softplus);
  in.a = activate(p.a_log, Activation::neg_exp);
  in.d_skip = p.d_skip;
  return in;
}

template <typename T>
Discretized<T> discretize(const Tensor<T>& a, const Tensor<T>& delta, const Tensor<T>& b) {
  if (delta.rank() != 2 || a.rank() != 2 || b.rank() != 2)
    throw DimensionError("discretize: expected A [D,N], delta [L,D], B [L,N]");
  const std::size_t L = delta.extent(0), D = delta.extent(1), N = a.extent(1);
  expect_shape(a, {D, N}, "discretize.A");
  expect_shape(b, {L, N}, "discretize.B");
  for (auto v : delta.data())
    if (!(v > 0)) throw DomainError("discretize: timescale delta must be positive");
  Discretized<T> out{Tensor<T>(Shape{L, D, N}), Tensor<T>(Shape{L, D, N})};
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      const T dt = delta.at(t, d);
      for (std::size_t n = 0; n < N; ++n) {
        out.abar.at(t, d, n) = std::exp(dt * a.at(d, n));
        out.bbar.at(t, d, n) = dt * b.at(t, n);
      }
    }
  return out;
}

template <typename T>
Discretized<T> discretize_zoh(const Tensor<T>& a_log, const Tensor<T>& delta, const Tensor<T>& b) {
  return discretize(activate(a_log, Activation::neg_exp), delta, b);
}

template <typename T>
Tensor<T> scan_recurrent(const ScanInputs<T>& in, Tensor<T>* states) {
  in.validate();
  const std::size_t L = in.length(), D = in.channels(), N = in.state_dim();
  Tensor<T> y(Shape{L, D});
  if (states) *states = Tensor<T>(Shape{L, D, N});
  std::vector<T> h(D * N, T(0));
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      const T dt = in.delta.at(t, d);
      const T du = dt * in.u.at(t, d);
      T acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        T& hs = h[d * N + n];
        hs = std::exp(dt * in.a.at(d, n)) * hs + in.b.at(t, n) * du;
        acc += in.c.at(t, n) * hs;
      }
      if (!in.d_skip.empty()) acc += in.d_skip[d] * in.u.at(t, d);
      y.at(t, d) = acc;
    }
    if (states) std::copy(h.begin(), h.end(), states->data().begin() + t * D * N);
  }
  return y;
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const SsmParams<T>& params) {
  return scan_recurrent(project_inputs(u, params));
}

template <typename T>
ScanResult<T> selective_scan_recorded(const Tensor<T>& u, const SsmParams<T>& p) {
  require_sequence(u);
  p.validate();
  if (u.extent(1) != p.channels())
    throw DimensionError("selective scan: input " + shape_str(u.shape()) + " vs " + std::to_string(p.channels()) +
                         " parameter channels");
  const Tensor<T> none;
  ScanResult<T> r;
  auto& rec = r.record;
  rec.inputs.u = u;
  rec.inputs.b = dense_affine(u, p.w_b, none);
  rec.inputs.c = dense_affine(u, p.w_c, none);
  rec.dt_low = dense_affine(u, p.w_dt_down, none);
  rec.dt_pre = dense_affine(rec.dt_low, p.w_dt_up, p.dt_bias);
  rec.inputs.delta = activate(rec.dt_pre, Activation::softplus);
  rec.inputs.a = activate(p.a_log, Activation::neg_exp);
  rec.inputs.d_skip = p.d_skip;
  r.y = scan_recurrent(rec.inputs, &rec.states);
  return r;
}

template <typename T>
ScanCoreGrads<T> scan_core_vjp(const ScanInputs<T>& in, const Tensor<T>& states, const Tensor<T>& gy) {
  const std::size_t L = in.length(), D = in.channels(), N = in.state_dim();
  expect_shape(states, {L, D, N}, "scan_core_vjp.states");
  expect_shape(gy, {L, D}, "scan_core_vjp.cotangent");
  ScanCoreGrads<T> g{Tensor<T>(Shape{L, D}), Tensor<T>(Shape{L, D}), Tensor<T>(Shape{D, N}),
                     Tensor<T>(Shape{L, N}),  Tensor<T>(Shape{L, N}), Tensor<T>()};
  if (!in.d_skip.empty()) g.d_skip = Tensor<T>(Shape{D});
  std::vector<T> gh(D * N, T(0));
  for (std::size_t t = L; t-- > 0;) {
    for (std::size_t d = 0; d < D; ++d) {
      const T gyt = gy.at(t, d);
      const T dt = in.delta.at(t, d);
      const T ut = in.u.at(t, d);
      if (!in.d_skip.empty()) {
        g.u.at(t, d) += gyt * in.d_skip[d];
        g.d_skip[d] += gyt * ut;
      }
      for (std::size_t n = 0; n < N; ++n) {
        T& ghs = gh[d * N + n];
        const T ht = states.at(t, d, n);
        ghs += gyt * in.c.at(t, n);
        g.c.at(t, n) += gyt * ht;
        const T an = in.a.at(d, n);
        const T abar = std::exp(dt * an);
        const T hprev = t > 0 ? states.at(t - 1, d, n) : T(0);
        const T gabar = ghs * hprev * abar;
        g.delta.at(t, d) += gabar * an + ghs * in.b.at(t, n) * ut;
        g.a.at(d, n) += gabar * dt;
        g.b.at(t, n) += ghs * dt * ut;
        g.u.at(t, d) += ghs * dt * in.b.at(t, n);
        ghs *= abar;
      }
    }
  }
  return g;
}

template <typename T>
SsmGrads<T> selective_scan_vjp(const ScanRecord<T>& rec, const SsmParams<T>& p, const Tensor<T>& gy) {
  if (!rec.valid()) throw StateError("selective_scan_vjp: no forward record (run selective_scan_recorded first)");
  const auto core = scan_core_vjp(rec.inputs, rec.states, gy);
  const Tensor<T>& u = rec.inputs.u;
  SsmGrads<T> g;
  g.u = core.u;
  auto accumulate = [](Tensor<T>& into, const Tensor<T>& from) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
  };
  auto gb = dense_affine_vjp(u, p.w_b, false, core.b);
  auto gc = dense_affine_vjp(u, p.w_c, false, core.c);
  const Tensor<T> gpre = activate_vjp(rec.dt_pre, Activation::softplus, core.delta);
  auto gup = dense_affine_vjp(rec.dt_low, p.w_dt_up, true, gpre);
  auto gdown = dense_affine_vjp(u, p.w_dt_down, false, gup.x);
  accumulate(g.u, gb.x);
  accumulate(g.u, gc.x);
  accumulate(g.u, gdown.x);
  g.params.a_log = mul(core.a, rec.inputs.a);  // d(-exp(x))/dx = -exp(x) = A
  g.params.w_b = std::move(gb.w);
  g.params.w_c = std::move(gc.w);
  g.params.w_dt_down = std::move(gdown.w);
  g.params.w_dt_up = std::move(gup.w);
  g.params.dt_bias = std::move(gup.b);
  g.params.d_skip = core.d_skip;
  return g;
}

template <typename T>
Tensor<T> build_selective_kernel(const ScanInputs<T>& in) {
  in.validate();
  const std::size_t L = in.length(), D = in.channels(), N = in.state_dim();
  const auto disc = discretize(in.a, in.delta, in.b);
  Tensor<T> k(Shape{D, L, L});
  std::vector<T> prod(N);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t n = 0; n < L; ++n) {
      std::fill(prod.begin(), prod.end(), T(1));
      for (std::size_t m = n + 1; m-- > 0;) {
        T acc = 0;
        for (std::size_t s = 0; s < N; ++s) acc += in.c.at(n, s) * prod[s] * disc.bbar.at(m, d, s);
        k.at(d, n, m) = acc;
        for (std::size_t s = 0; s < N; ++s) prod[s] *= disc.abar.at(m, d, s);
      }
      if (!in.d_skip.empty()) k.at(d, n, n) += in.d_skip[d];
    }
  return k;
}

template <typename T>
Tensor<T> build_selective_kernel(const Tensor<T>& u, const SsmParams<T>& params) {
  return build_selective_kernel(project_inputs(u, params));
}

template <typename T>
Tensor<T> apply_kernel(const Tensor<T>& kernel, const Tensor<T>& u) {
  const std::size_t L = u.extent(0), D = u.extent(1);
  expect_shape(kernel, {D, L, L}, "apply_kernel.kernel");
  Tensor<T> y(Shape{L, D});
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t n = 0; n < L; ++n) {
      T acc = 0;
      for (std::size_t m = 0; m < L; ++m) acc += kernel.at(d, n, m) * u.at(m, d);
      y.at(n, d) = acc;
    }
  return y;
}

template <typename T>
Tensor<T> decay_factor(const Tensor<T>& a, const Tensor<T>& delta, std::size_t m, std::size_t n) {
  if (m > n) throw std::out_of_range("decay_factor: source token must not follow the target (m <= n)");
  if (n >= delta.extent(0)) throw std::out_of_range("decay_factor: token index beyond sequence");
  const std::size_t D = a.extent(0), N = a.extent(1);
  const Tensor<T> ones(Shape{delta.extent(0), N}, T(1));
  const auto disc = discretize(a, delta, ones);
  Tensor<T> f(Shape{D, N}, T(1));
  for (std::size_t i = m + 1; i <= n; ++i)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t s = 0; s < N; ++s) f.at(d, s) *= disc.abar.at(i, d, s);
  return f;
}

template <typename T>
Tensor<T> contribution(const ScanInputs<T>& in, std::size_t m, std::size_t n) {
  in.validate();
  if (m > n) throw std::out_of_range("contribution: source token must not follow the target (m <= n)");
  if (n >= in.length()) throw std::out_of_range("contribution: token index beyond sequence");
  const std::size_t D = in.channels(), N = in.state_dim();
  const Tensor<T> decay = decay_factor(in.a, in.delta, m, n);
  Tensor<T> out(Shape{D});
  for (std::size_t d = 0; d < D; ++d) {
    T acc = 0;
    for (std::size_t s = 0; s < N; ++s) acc += in.c.at(n, s) * decay.at(d, s) * in.delta.at(m, d) * in.b.at(m, s);
    out[d] = acc;
  }
  return out;
}

template <typename T>
Tensor<T> contribution(const Tensor<T>& u, const SsmParams<T>& params, std::size_t m, std::size_t n) {
  return contribution(project_inputs(u, params), m, n);
}

std::size_t s6_scan_macs(std::size_t L, std::size_t D, std::size_t N) { return 9 * L * D * N; }

#define MSVM_INSTANTIATE_SSM(T)                                                                           \
  template struct SsmParams<T>;                                                                           \
  template struct ScanInputs<T>;                                                                          \
  template SsmParams<T> init_ssm_params(std::size_t, std::size_t, std::size_t, Rng&, bool);               \
  template ScanInputs<T> project_inputs(const Tensor<T>&, const SsmParams<T>&);                           \
  template Discretized<T> discretize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Discretized<T> discretize_zoh(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> scan_recurrent(const ScanInputs<T>&, Tensor<T>*);                                    \
  template Tensor<T> selective_scan(const Tensor<T>&, const SsmParams<T>&);                               \
  template ScanResult<T> selective_scan_recorded(const Tensor<T>&, const SsmParams<T>&);                  \
  template ScanCoreGrads<T> scan_core_vjp(const ScanInputs<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template SsmGrads<T> selective_scan_vjp(const ScanRecord<T>&, const SsmParams<T>&, const Tensor<T>&);   \
  template Tensor<T> build_selective_kernel(const ScanInputs<T>&);                                        \
  template Tensor<T> build_selective_kernel(const Tensor<T>&, const SsmParams<T>&);                       \
  template Tensor<T> apply_kernel(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> decay_factor(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);          \
  template Tensor<T> contribution(const ScanInputs<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> contribution(const Tensor<T>&, const SsmParams<T>&, std::size_t, std::size_t);

MSVM_INSTANTIATE_SSM(float)
MSVM_INSTANTIATE_SSM(double)

}  // namespace msvm
