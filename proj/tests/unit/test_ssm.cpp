#include <cmath>

#include "common.hpp"
#include "msvm/errors.hpp"
#include "msvm/ops.hpp"
#include "msvm/ssm.hpp"

using namespace msvm;
using testutil::TD;

namespace {

SsmParams<double> random_params(std::size_t D, std::size_t N, std::uint64_t seed) {
  Rng rng(seed);
  auto p = init_ssm_params<double>(D, N, default_dt_rank(D), rng);
  for (auto& v : p.dt_bias.data()) v = uniform(rng, -1.5, 1.0);
  return p;
}

// Straightforward double loop over time and state, written independently of the library.
TD naive_scan(const ScanInputs<double>& in) {
  const std::size_t L = in.length(), D = in.channels(), N = in.state_dim();
  TD y({L, D});
  for (std::size_t d = 0; d < D; ++d) {
    std::vector<double> h(N, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      double acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        h[n] = std::exp(in.delta.at(t, d) * in.a.at(d, n)) * h[n] + in.delta.at(t, d) * in.b.at(t, n) * in.u.at(t, d);
        acc += in.c.at(t, n) * h[n];
      }
      y.at(t, d) = acc;
    }
  }
  return y;
}

ScanInputs<double> lti_inputs(std::size_t L, std::size_t D, std::size_t N, std::uint64_t seed) {
  const TD b_row = testutil::rand({N}, seed), c_row = testutil::rand({N}, seed + 1);
  const TD dt = testutil::rand({D}, seed + 2, 0.1, 0.9);
  ScanInputs<double> in{testutil::rand({L, D}, seed + 3), TD({L, D}), testutil::rand({D, N}, seed + 4, -2.0, -0.1),
                        TD({L, N}), TD({L, N}), {}};
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < D; ++d) in.delta.at(t, d) = dt[d];
    for (std::size_t n = 0; n < N; ++n) {
      in.b.at(t, n) = b_row[n];
      in.c.at(t, n) = c_row[n];
    }
  }
  return in;
}

}  // namespace

TEST_CASE("zero-order hold discretization") {
  const TD a({1, 1}, -1.0);
  const auto z = discretize(a, TD({1, 1}, std::log(2.0)), TD({1, 1}, 3.0));
  CHECK(z.abar[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(z.bbar[0] == doctest::Approx(3.0 * std::log(2.0)));

  const auto tiny = discretize(a, TD({1, 1}, 1e-12), TD({1, 1}, 1.0));
  CHECK(tiny.abar[0] == doctest::Approx(1.0));
  CHECK(tiny.bbar[0] == doctest::Approx(0.0));

  CHECK_THROWS_AS(discretize(a, TD({1, 1}, 0.0), TD({1, 1}, 1.0)), DomainError);
  CHECK_THROWS_AS(discretize(a, TD({1, 1}, -0.1), TD({1, 1}, 1.0)), DomainError);

  const TD a_log = testutil::rand({3, 2}, 1), delta = testutil::rand({4, 3}, 2, 0.01, 1.0), b = testutil::rand({4, 2}, 3);
  const auto r = discretize_zoh(a_log, delta, b);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t d = 0; d < 3; ++d)
      for (std::size_t n = 0; n < 2; ++n) {
        CHECK(r.abar[(t * 3 + d) * 2 + n] == std::exp(-std::exp(a_log.at(d, n)) * delta.at(t, d)));
        CHECK(r.bbar[(t * 3 + d) * 2 + n] == delta.at(t, d) * b.at(t, n));
      }
}

TEST_CASE("single-step scan gives C * delta * B * u") {
  SsmParams<double> p{TD({1, 1}, 0.0), TD({1, 1}, 0.5), TD({1, 1}, 0.5), TD({1, 1}, 0.0),
                      TD({1, 1}, 0.0), TD({1}, softplus_inverse(1.0)), {}};
  const TD y = selective_scan(TD({1, 1}, 2.0), p);
  CHECK(y[0] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("vanishing timescale injects nothing") {
  auto p = random_params(2, 3, 5);
  for (auto& v : p.dt_bias.data()) v = -60.0;
  for (auto& v : p.w_dt_up.data()) v = 0.0;
  const TD y = selective_scan(testutil::rand({6, 2}, 6), p);
  for (double v : y.data()) CHECK(std::abs(v) < 1e-20);
}

TEST_CASE("recurrence matches the kernel and an independent loop") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    Rng rng(s);
    const std::size_t L = 1 + uniform_index(rng, 16), D = 1 + uniform_index(rng, 3), N = 1 + uniform_index(rng, 4);
    const auto p = random_params(D, N, s + 100);
    const TD u = testutil::rand({L, D}, s + 200);
    const TD y = selective_scan(u, p);
    CHECK(testutil::max_diff(y, apply_kernel(build_selective_kernel(u, p), u)) < 1e-12);
    CHECK(testutil::max_diff(y, naive_scan(project_inputs(u, p))) < 1e-12);
  }
  const auto p = random_params(1, 2, 7);
  const TD u = testutil::rand({4, 1}, 8);
  CHECK(testutil::max_diff(selective_scan(u, p), apply_kernel(build_selective_kernel(u, p), u)) < 1e-12);
}

TEST_CASE("kernel structure") {
  const auto p = random_params(2, 3, 9);
  const TD u = testutil::rand({5, 2}, 10);
  const auto in = project_inputs(u, p);
  const TD K = build_selective_kernel(in);
  REQUIRE(K.shape() == Shape{2, 5, 5});
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t n = 0; n < 5; ++n) {
      double diag = 0;
      for (std::size_t k = 0; k < 3; ++k) diag += in.c.at(n, k) * in.delta.at(n, d) * in.b.at(n, k);
      CHECK(K[(d * 5 + n) * 5 + n] == doctest::Approx(diag).epsilon(1e-14));
      for (std::size_t m = n + 1; m < 5; ++m) CHECK(K[(d * 5 + n) * 5 + m] == 0.0);
    }

  SUBCASE("time-invariant parameters give a Toeplitz kernel") {
    const auto lti = lti_inputs(7, 2, 3, 11);
    const TD Kl = build_selective_kernel(lti);
    for (std::size_t d = 0; d < 2; ++d)
      for (std::size_t n = 1; n < 7; ++n)
        for (std::size_t m = 1; m <= n; ++m)
          CHECK(Kl[(d * 7 + n) * 7 + m] == doctest::Approx(Kl[(d * 7 + n - 1) * 7 + m - 1]).epsilon(1e-12));
  }
}

TEST_CASE("contribution") {
  const auto p = random_params(2, 2, 12);
  const TD u = testutil::rand({6, 2}, 13);
  const auto in = project_inputs(u, p);
  const TD K = build_selective_kernel(in);
  for (std::size_t n = 0; n < 6; ++n)
    for (std::size_t m = 0; m <= n; ++m) {
      const TD c = contribution(in, m, n);
      for (std::size_t d = 0; d < 2; ++d) CHECK(c[d] == doctest::Approx(K[(d * 6 + n) * 6 + m]).epsilon(1e-13));
    }
  CHECK_THROWS(contribution(in, 3, 2));

  // delta * A = ln(0.5) per step with B = C = delta = 1
  ScanInputs<double> g{TD({8, 1}, 1.0), TD({8, 1}, 1.0), TD({1, 1}, std::log(0.5)), TD({8, 1}, 1.0), TD({8, 1}, 1.0), {}};
  for (std::size_t gap = 0; gap < 8; ++gap) CHECK(contribution(g, 0, gap)[0] == doctest::Approx(std::pow(0.5, gap)).epsilon(1e-14));
}

TEST_CASE("decay is non-increasing with distance for constant parameters") {
  const auto lti = lti_inputs(12, 3, 2, 14);
  for (std::size_t m = 0; m < 12; ++m) {
    double prev = INFINITY;
    for (std::size_t n = m; n < 12; ++n) {
      const TD f = decay_factor(lti.a, lti.delta, m, n);
      double s = 0;
      for (double v : f.data()) s += v;
      CHECK(s <= prev);
      prev = s;
    }
  }
}

TEST_CASE("causality") {
  const auto p = random_params(3, 2, 15);
  const TD u = testutil::rand({10, 3}, 16);
  const TD y = selective_scan(u, p);
  for (std::size_t tau = 0; tau < 10; ++tau) {
    TD v = u;
    for (std::size_t t = tau + 1; t < 10; ++t)
      for (std::size_t d = 0; d < 3; ++d) v.at(t, d) = 0.0;
    const TD yv = selective_scan(v, p);
    for (std::size_t t = 0; t <= tau; ++t)
      for (std::size_t d = 0; d < 3; ++d) CHECK(yv.at(t, d) == y.at(t, d));
  }
}

TEST_CASE("gradients") {
  const auto p = random_params(2, 3, 17);
  const TD u = testutil::rand({5, 2}, 18);
  const auto rec = selective_scan_recorded(u, p).record;

  SUBCASE("zero cotangent gives zero gradients") {
    const auto g = selective_scan_vjp(rec, p, TD({5, 2}));
    for (const TD* t : {&g.u, &g.params.a_log, &g.params.w_b, &g.params.w_c, &g.params.w_dt_down,
                        &g.params.w_dt_up, &g.params.dt_bias})
      for (double v : t->data()) CHECK(v == 0.0);
  }
  SUBCASE("missing record is a state error") {
    CHECK_THROWS_AS(selective_scan_vjp(ScanRecord<double>{}, p, TD({5, 2}, 1.0)), StateError);
  }
  SUBCASE("time-invariant input gradient is the transposed kernel") {
    const auto lti = lti_inputs(6, 2, 3, 19);
    TD states;
    scan_recurrent(lti, &states);
    const TD gy = testutil::rand({6, 2}, 20);
    const auto g = scan_core_vjp(lti, states, gy);
    const TD K = build_selective_kernel(lti);
    for (std::size_t m = 0; m < 6; ++m)
      for (std::size_t d = 0; d < 2; ++d) {
        double s = 0;
        for (std::size_t n = 0; n < 6; ++n) s += K[(d * 6 + n) * 6 + m] * gy.at(n, d);
        CHECK(g.u.at(m, d) == doctest::Approx(s).epsilon(1e-12));
      }
  }
}

TEST_CASE("parameterization and initialization") {
  Rng rng(21);
  const auto p = init_ssm_params<double>(8, 4, default_dt_rank(8), rng);
  CHECK(p.dt_rank() == 1);
  CHECK(default_dt_rank(33) == 3);
  for (std::size_t d = 0; d < 8; ++d)
    for (std::size_t n = 0; n < 4; ++n) CHECK(p.a_log.at(d, n) == doctest::Approx(std::log(n + 1.0)));
  for (double b : p.dt_bias.data()) {
    CHECK(softplus(b) >= 1e-3 * (1 - 1e-9));
    CHECK(softplus(b) <= 1e-1 * (1 + 1e-9));
  }
  CHECK(p.param_count() == ssm_param_count(8, 4, 1));
  CHECK(ssm_param_count(8, 4, 1) == 8 * 4 + 2 * 4 * 8 + 8 + 8 + 8);

  // A stays negative whatever a_log becomes.
  auto q = p;
  for (auto& v : q.a_log.data()) v = uniform(rng, -30, 30);
  const auto in = project_inputs(testutil::rand({3, 8}, 22), q);
  for (double a : in.a.data()) CHECK(a < 0.0);
  for (double dl : in.delta.data()) CHECK(dl > 0.0);

  CHECK(s6_scan_macs(100, 8, 1) == 7200);
}

TEST_CASE("optional skip term") {
  Rng rng(23);
  const auto p = init_ssm_params<double>(2, 2, 1, rng, true);
  CHECK(p.has_skip());
  auto q = p;
  q.d_skip = TD();
  const TD u = testutil::rand({4, 2}, 24);
  const TD with = selective_scan(u, p), without = selective_scan(u, q);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t d = 0; d < 2; ++d)
      CHECK(with.at(t, d) == doctest::Approx(without.at(t, d) + p.d_skip[d] * u.at(t, d)).epsilon(1e-13));
}
