#include "common.hpp"
#include "msvm/errors.hpp"
#include "msvm/ms2d.hpp"
#include "msvm/ops.hpp"

using namespace msvm;
using testutil::TD;

namespace {

SsmParams<double> params(std::size_t D, std::size_t N, std::uint64_t seed) {
  Rng rng(seed);
  auto p = init_ssm_params<double>(D, N, default_dt_rank(D), rng);
  for (auto& v : p.dt_bias.data()) v = uniform(rng, -1.0, 1.0);
  return p;
}

}  // namespace

TEST_CASE("scan cost of the (1, 3) split at stride 2") {
  const auto cfg = Ms2dConfig::with_split(1, 3, 2);
  for (std::size_t H = 2; H <= 64; H += 2)
    for (std::size_t W = 2; W <= 64; W += 2) {
      const auto c = scan_cost(H, W, cfg);
      CHECK(c.full_tokens == H * W);
      CHECK(c.down_tokens == 3 * (H / 2) * (W / 2));
      CHECK(4 * c.total_tokens == 7 * H * W);
      CHECK(c.ratio_vs_ss2d == 0.4375);
    }
  CHECK(scan_cost(7, 7, cfg).down_tokens == 3 * 16);  // ceil extents on odd grids
  CHECK(scan_cost(10, 10, Ms2dConfig::with_split(4, 0)).ratio_vs_ss2d == 1.0);
  CHECK(scan_cost(8, 8, cfg).s6_macs(16, 1) == s6_scan_macs(112, 16, 1));
}

TEST_CASE("configuration validation") {
  CHECK_NOTHROW(Ms2dConfig{}.validate());
  CHECK(Ms2dConfig{}.n_full() == 1);
  CHECK(Ms2dConfig{}.n_down() == 3);
  CHECK_THROWS_AS(Ms2dConfig::with_split(1, 3, 0), ConfigError);
  CHECK_THROWS_AS(Ms2dConfig::with_split(2, 3), ConfigError);
  Ms2dConfig dup;
  dup.down_routes = {ScanRoute::row_major_fwd, ScanRoute::col_major_fwd, ScanRoute::col_major_rev};
  CHECK_THROWS_AS(dup.validate(), ConfigError);
  CHECK(downsampled_extent(7, 2) == 4);
  CHECK(downsampled_extent(1, 4) == 1);
}

TEST_CASE("parameter groups") {
  CHECK(ms2d_param_groups(Ms2dConfig{}) == 2);
  CHECK(ms2d_param_groups(Ms2dConfig::with_split(4, 0)) == 1);
  CHECK(ss2d_param_groups(false) == 4);
  CHECK(ss2d_param_groups(true) == 1);
  CHECK(2 * ssm_param_count(96, 1, 6) < 4 * ssm_param_count(96, 1, 6));
}

TEST_CASE("MS2D equals its composition from primitives") {
  for (std::size_t H : {4, 5, 8}) {
    const std::size_t W = H + 1, D = 3;
    const TD z = testutil::rand({H, W, D}, H), k1 = testutil::rand({3, 3, D}, H + 1), k2 = testutil::rand({3, 3, D}, H + 2);
    const auto pf = params(D, 2, H + 3), pd = params(D, 2, H + 4);
    const Ms2dConfig cfg;
    const TD y = ms2d_forward(z, cfg, k1, k2, pf, pd);

    const TD z1 = dwconv2d(z, k1, 1, 1);
    TD expect = unflatten(ScanRoute::row_major_fwd, selective_scan(flatten(ScanRoute::row_major_fwd, z1), pf), H, W);
    const TD z2 = dwconv2d(z, k2, 2, 1);
    const std::size_t h = z2.extent(0), w = z2.extent(1);
    CHECK(h == downsampled_extent(H, 2));
    TD down({h, w, D});
    for (ScanRoute r : {ScanRoute::row_major_rev, ScanRoute::col_major_fwd, ScanRoute::col_major_rev}) {
      const TD part = unflatten(r, selective_scan(flatten(r, z2), pd), h, w);
      for (std::size_t i = 0; i < down.size(); ++i) down[i] += part[i];
    }
    const TD up = interpolate_nearest(down, H, W);
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += up[i];
    CHECK(testutil::max_diff(y, expect) < 1e-13);
  }
}

TEST_CASE("stride 1 with one shared group and identity kernels reduces to SS2D") {
  const std::size_t D = 2;
  const TD z = testutil::rand({5, 4, D}, 70);
  TD id({3, 3, D});
  for (std::size_t d = 0; d < D; ++d) id.at(1, 1, d) = 1.0;
  const auto p = params(D, 3, 71);
  const std::vector<SsmParams<double>> shared{p};
  const TD a = ms2d_forward(z, Ms2dConfig::with_split(1, 3, 1), id, id, p, p);
  const TD b = ss2d(z, std::span<const SsmParams<double>>(shared));
  CHECK(testutil::max_diff(a, b) < 1e-13);
}

TEST_CASE("capture records each route with its stride") {
  using V = ad::Var<double>;
  std::vector<RouteCapture> caps;
  const auto p = params(2, 2, 80);
  ad::ms2d(V::constant(testutil::rand({6, 6, 2}, 81)), Ms2dConfig{}, V::constant(testutil::rand({3, 3, 2}, 82)),
           V::constant(testutil::rand({3, 3, 2}, 83)), ad::SsmVars<double>::constant(p),
           ad::SsmVars<double>::constant(p), &caps);
  REQUIRE(caps.size() == 4);
  CHECK(caps[0].stride == 1);
  CHECK(caps[0].grid.shape() == Shape{6, 6, 2});
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK(caps[i].stride == 2);
    CHECK(caps[i].grid.shape() == Shape{3, 3, 2});
  }
}
