#include <set>

#include "common.hpp"
#include "msvm/errors.hpp"
#include "msvm/routes.hpp"

using namespace msvm;
using testutil::TD;

namespace {

TD transpose(const TD& z) {
  TD out({z.extent(1), z.extent(0), z.extent(2)});
  for (std::size_t i = 0; i < z.extent(0); ++i)
    for (std::size_t j = 0; j < z.extent(1); ++j)
      for (std::size_t d = 0; d < z.extent(2); ++d) out.at(j, i, d) = z.at(i, j, d);
  return out;
}

TD rot180(const TD& z) {
  const std::size_t H = z.extent(0), W = z.extent(1);
  TD out(z.shape());
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t d = 0; d < z.extent(2); ++d) out.at(H - 1 - i, W - 1 - j, d) = z.at(i, j, d);
  return out;
}

SsmParams<double> params(std::size_t D, std::size_t N, std::uint64_t seed) {
  Rng rng(seed);
  return init_ssm_params<double>(D, N, default_dt_rank(D), rng);
}

}  // namespace

TEST_CASE("route orders") {
  // 2x3 grid, row-major index p*3+q
  CHECK(route_order(ScanRoute::row_major_fwd, 2, 3) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  CHECK(route_order(ScanRoute::row_major_rev, 2, 3) == std::vector<std::size_t>{5, 4, 3, 2, 1, 0});
  CHECK(route_order(ScanRoute::col_major_fwd, 2, 3) == std::vector<std::size_t>{0, 3, 1, 4, 2, 5});
  CHECK(route_order(ScanRoute::col_major_rev, 2, 3) == std::vector<std::size_t>{5, 2, 4, 1, 3, 0});
  for (ScanRoute r : kAllRoutes) {
    CHECK(parse_route(route_name(r)) == r);
    for (std::size_t i = 0; i < 6; ++i) CHECK(route_position(r, route_cell(r, i, 2, 3), 2, 3) == i);
  }
  CHECK_THROWS_AS(parse_route("diagonal"), ConfigError);
}

TEST_CASE("unflatten inverts flatten exactly on every grid up to 12x12") {
  for (std::size_t H = 1; H <= 12; ++H)
    for (std::size_t W = 1; W <= 12; ++W) {
      const TD z = testutil::rand({H, W, 2}, H * 100 + W);
      for (ScanRoute r : kAllRoutes) {
        const TD x = flatten(r, z);
        CHECK(x.shape() == Shape{H * W, 2});
        CHECK(unflatten(r, x, H, W) == z);
      }
    }
  CHECK_THROWS_AS(unflatten(ScanRoute::row_major_fwd, TD({6, 2}), 2, 4), DimensionError);
}

TEST_CASE("route distances") {
  CHECK(route_distance(ScanRoute::row_major_fwd, {0, 0}, {1, 0}, 4, 4) == 4);
  CHECK(route_distance(ScanRoute::row_major_rev, {0, 0}, {1, 0}, 4, 4) == -4);
  CHECK(route_distance(ScanRoute::col_major_fwd, {0, 0}, {1, 0}, 4, 4) == 1);

  const std::vector<ScanRoute> only_fwd{ScanRoute::row_major_fwd};
  CHECK(min_route_distance(only_fwd, {1, 1}, {0, 0}, 3, 3) == std::nullopt);
  CHECK(min_route_distance(only_fwd, {0, 0}, {1, 1}, 3, 3) == std::optional<std::size_t>(4));
  CHECK_THROWS_AS(min_route_distance(std::span<const ScanRoute>(), {0, 0}, {0, 1}, 2, 2), std::invalid_argument);
}

TEST_CASE("minimum distance matches a position table on 8x8") {
  const std::size_t H = 8, W = 8;
  std::vector<std::vector<std::size_t>> pos;
  for (ScanRoute r : kAllRoutes) {
    std::vector<std::size_t> table(H * W);
    const auto order = route_order(r, H, W);
    for (std::size_t i = 0; i < order.size(); ++i) table[order[i]] = i;
    pos.push_back(table);
  }
  for (std::size_t a = 0; a < H * W; ++a)
    for (std::size_t b = 0; b < H * W; ++b) {
      std::optional<std::size_t> best;
      for (const auto& t : pos)
        if (t[b] >= t[a] && (!best || t[b] - t[a] < *best)) best = t[b] - t[a];
      CHECK(min_route_distance(kAllRoutes, {a / W, a % W}, {b / W, b % W}, H, W) == best);
    }
  for (std::size_t p = 0; p < H; ++p)
    for (std::size_t q = 0; q + 1 < W; ++q) {
      CHECK(min_route_distance(kAllRoutes, {p, q}, {p, q + 1}, H, W) == std::optional<std::size_t>(1));
      CHECK(min_route_distance(kAllRoutes, {q, p}, {q + 1, p}, H, W) == std::optional<std::size_t>(1));
      CHECK(min_route_distance(kAllRoutes, {p, q + 1}, {p, q}, H, W) == std::optional<std::size_t>(1));
    }
}

TEST_CASE("shared-parameter SS2D is transpose and rot180 equivariant") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const TD z = testutil::rand({6, 6, 3}, s);
    const std::vector<SsmParams<double>> shared{params(3, 2, s + 10)};
    const std::span<const SsmParams<double>> sp(shared);
    const TD y = ss2d(z, sp);
    CHECK(testutil::max_diff(ss2d(transpose(z), sp), transpose(y)) < 1e-10);
    CHECK(testutil::max_diff(ss2d(rot180(z), sp), rot180(y)) < 1e-10);
  }
}

TEST_CASE("SS2D sums the four route scans") {
  const TD z = testutil::rand({3, 4, 2}, 30);
  std::vector<SsmParams<double>> groups;
  for (int k = 0; k < 4; ++k) groups.push_back(params(2, 2, 40 + k));
  TD expect({3, 4, 2});
  for (std::size_t k = 0; k < 4; ++k) {
    const ScanRoute r = kAllRoutes[k];
    const TD part = unflatten(r, selective_scan(flatten(r, z), groups[k]), 3, 4);
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += part[i];
  }
  CHECK(testutil::max_diff(ss2d(z, std::span<const SsmParams<double>>(groups)), expect) < 1e-14);
  CHECK_THROWS(ss2d(z, std::span<const SsmParams<double>>(groups.data(), 2)));
}

TEST_CASE("threaded route scans are bitwise identical to sequential ones") {
  const TD z = testutil::rand({9, 7, 4}, 50);
  std::vector<SsmParams<double>> groups;
  for (int k = 0; k < 4; ++k) groups.push_back(params(4, 2, 60 + k));
  const std::size_t saved = scan_threads();
  set_scan_threads(1);
  const TD a = ss2d(z, std::span<const SsmParams<double>>(groups));
  set_scan_threads(4);
  const TD b = ss2d(z, std::span<const SsmParams<double>>(groups));
  set_scan_threads(saved);
  CHECK(a == b);
}
