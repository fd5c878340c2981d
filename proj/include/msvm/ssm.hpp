#pragma once

// S6 selective scan: ZOH discretization, the recurrent form, the explicit
// lower-triangular kernel form (verification only, O(L^2)), per-token
// contribution / decay terms and exact reverse-mode gradients.
//
// Shapes: u, y, delta are [L, D]; B, C are [L, N] (shared across channels);
// A and a_log are [D, N] with A = -exp(a_log) < 0.

#include <cstddef>

#include "msvm/rng.hpp"
#include "msvm/tensor.hpp"

namespace msvm {

std::size_t default_dt_rank(std::size_t channels);

// One S6 parameter group. B, C and the timescale are linear projections of the
// input sequence; delta = softplus(w_dt_up * (w_dt_down * u) + dt_bias).
template <typename T>
struct SsmParams {
  Tensor<T> a_log;      // [D, N]
  Tensor<T> w_b;        // [N, D]
  Tensor<T> w_c;        // [N, D]
  Tensor<T> w_dt_down;  // [R, D]
  Tensor<T> w_dt_up;    // [D, R]
  Tensor<T> dt_bias;    // [D]
  Tensor<T> d_skip;     // [D], empty unless the skip term is enabled

  std::size_t channels() const { return a_log.extent(0); }
  std::size_t state_dim() const { return a_log.extent(1); }
  std::size_t dt_rank() const { return w_dt_down.extent(0); }
  bool has_skip() const { return !d_skip.empty(); }
  std::size_t param_count() const;
  void validate() const;

  template <typename U>
  SsmParams<U> cast() const {
    return {a_log.template cast<U>(),   w_b.template cast<U>(),     w_c.template cast<U>(),
            w_dt_down.template cast<U>(), w_dt_up.template cast<U>(), dt_bias.template cast<U>(),
            d_skip.empty() ? Tensor<U>() : d_skip.template cast<U>()};
  }
};

std::size_t ssm_param_count(std::size_t channels, std::size_t state_dim, std::size_t dt_rank, bool skip = false);

// a_log[d, n] = ln(n + 1); dt_bias puts the initial timescale in [1e-3, 1e-1].
template <typename T>
SsmParams<T> init_ssm_params(std::size_t channels, std::size_t state_dim, std::size_t dt_rank, Rng& rng,
                             bool skip = false);

// Fully resolved scan operands.
template <typename T>
struct ScanInputs {
  Tensor<T> u;      // [L, D]
  Tensor<T> delta;  // [L, D], > 0
  Tensor<T> a;      // [D, N], < 0
  Tensor<T> b;      // [L, N]
  Tensor<T> c;      // [L, N]
  Tensor<T> d_skip; // [D] or empty

  std::size_t length() const { return u.extent(0); }
  std::size_t channels() const { return u.extent(1); }
  std::size_t state_dim() const { return a.extent(1); }
  void validate() const;
};

template <typename T>
ScanInputs<T> project_inputs(const Tensor<T>& u, const SsmParams<T>& params);

template <typename T>
struct Discretized {
  Tensor<T> abar;  // [L, D, N]
  Tensor<T> bbar;  // [L, D, N]
};

// Abar = exp(delta * A), Bbar = delta * B (first-order ZOH input term).
template <typename T>
Discretized<T> discretize_zoh(const Tensor<T>& a_log, const Tensor<T>& delta, const Tensor<T>& b);
template <typename T>
Discretized<T> discretize(const Tensor<T>& a, const Tensor<T>& delta, const Tensor<T>& b);

// h_t = Abar_t * h_{t-1} + Bbar_t u_t, y_t = <C_t, h_t> (+ D u_t). If `states` is
// non-null it receives every h_t as [L, D, N].
template <typename T>
Tensor<T> scan_recurrent(const ScanInputs<T>& in, Tensor<T>* states = nullptr);

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const SsmParams<T>& params);

template <typename T>
struct ScanRecord {
  ScanInputs<T> inputs;
  Tensor<T> dt_low;  // [L, R]
  Tensor<T> dt_pre;  // [L, D], pre-softplus
  Tensor<T> states;  // [L, D, N]
  bool valid() const { return !states.empty(); }
};

template <typename T>
struct ScanResult {
  Tensor<T> y;
  ScanRecord<T> record;
};

template <typename T>
ScanResult<T> selective_scan_recorded(const Tensor<T>& u, const SsmParams<T>& params);

template <typename T>
struct ScanCoreGrads {
  Tensor<T> u, delta, a, b, c, d_skip;
};

template <typename T>
ScanCoreGrads<T> scan_core_vjp(const ScanInputs<T>& in, const Tensor<T>& states, const Tensor<T>& gy);

template <typename T>
struct SsmGrads {
  Tensor<T> u;
  SsmParams<T> params;
};

// Exact gradients of <gy, selective_scan(u, params)>; throws StateError if the
// record does not come from a forward pass.
template <typename T>
SsmGrads<T> selective_scan_vjp(const ScanRecord<T>& record, const SsmParams<T>& params, const Tensor<T>& gy);

// K[d, n, m] = C_n . (prod_{i=m+1..n} Abar_i) * Bbar_m for m <= n, else 0.
template <typename T>
Tensor<T> build_selective_kernel(const ScanInputs<T>& in);
template <typename T>
Tensor<T> build_selective_kernel(const Tensor<T>& u, const SsmParams<T>& params);

// y[n, d] = sum_m K[d, n, m] u[m, d]
template <typename T>
Tensor<T> apply_kernel(const Tensor<T>& kernel, const Tensor<T>& u);

// Contribution of token m to token n (m <= n) per channel, excluding the input value.
template <typename T>
Tensor<T> contribution(const ScanInputs<T>& in, std::size_t m, std::size_t n);
template <typename T>
Tensor<T> contribution(const Tensor<T>& u, const SsmParams<T>& params, std::size_t m, std::size_t n);

// prod_{i=m+1..n} Abar_i as [D, N]: the decay part of the contribution.
template <typename T>
Tensor<T> decay_factor(const Tensor<T>& a, const Tensor<T>& delta, std::size_t m, std::size_t n);

// 9 * L * D * N multiply-accumulates for one selective scan.
std::size_t s6_scan_macs(std::size_t length, std::size_t channels, std::size_t state_dim);

}  // namespace msvm
