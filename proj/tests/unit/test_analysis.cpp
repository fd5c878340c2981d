#include <limits>

#include "common.hpp"
#include "msvm/analysis.hpp"
#include "msvm/errors.hpp"

using namespace msvm;
using testutil::TD;

namespace {

// Mean over (d, k) of prod_{i=m+1..n} exp(delta[i, d] * a[d, k]), evaluated one factor at a time.
double naive_decay(const TD& delta, const TD& a, std::size_t m, std::size_t n) {
  double s = 0;
  for (std::size_t d = 0; d < a.extent(0); ++d)
    for (std::size_t k = 0; k < a.extent(1); ++k) {
      double prod = 1;
      for (std::size_t i = m + 1; i <= n; ++i) prod *= std::exp(delta.at(i, d) * a.at(d, k));
      s += prod;
    }
  return s / static_cast<double>(a.extent(0) * a.extent(1));
}

}  // namespace

TEST_CASE("decay map matches the product oracle on every route") {
  const std::size_t h = 5, w = 6;
  const TD delta = testutil::rand({h * w, 3}, 1, 0.01, 1.0);
  const TD a = testutil::rand({3, 2}, 2, -2.0, -0.1);
  for (ScanRoute r : kAllRoutes)
    for (GridPoint anchor : {GridPoint{0, 0}, GridPoint{2, 3}, GridPoint{4, 5}}) {
      const DecayMap map = decay_map_from_scan(delta, a, r, h, w, anchor);
      const std::size_t n = route_position(r, anchor, h, w);
      for (std::size_t p = 0; p < h; ++p)
        for (std::size_t q = 0; q < w; ++q) {
          const std::size_t m = route_position(r, {p, q}, h, w);
          if (m > n) {
            CHECK(map.present.at(p, q) == 0.0);
            CHECK(map.values.at(p, q) == 0.0);
          } else {
            CHECK(map.present.at(p, q) == 1.0);
            CHECK(std::abs(map.values.at(p, q) - naive_decay(delta, a, m, n)) < 1e-12);
          }
        }
      CHECK(map.values.at(anchor.p, anchor.q) == 1.0);
    }
  CHECK_THROWS_AS(decay_map_from_scan(delta, a, ScanRoute::row_major_fwd, h, w, {5, 0}), std::out_of_range);
  CHECK_THROWS_AS(decay_map_from_scan(delta, a, ScanRoute::row_major_fwd, h, w + 1, {0, 0}), DimensionError);
}

TEST_CASE("decay is monotone along a route") {
  const TD delta = testutil::rand({16, 2}, 3, 0.05, 0.5);
  const TD a = testutil::rand({2, 2}, 4, -1.5, -0.2);
  const DecayMap map = decay_map_from_scan(delta, a, ScanRoute::row_major_fwd, 4, 4, {3, 3});
  for (std::size_t i = 1; i < 16; ++i) CHECK(map.values[i - 1] < map.values[i]);
}

TEST_CASE("ratio map and binarization") {
  DecayMap x{TD({2, 2}, {1.0, 0.5, 0.01, 0.0}), TD({2, 2}, {1, 1, 1, 1}), {0, 0}};
  DecayMap y{TD({2, 2}, {1.0, 0.05, 0.02, 0.3}), TD({2, 2}, {1, 1, 1, 0}), {0, 0}};
  const RatioMap r = decay_ratio_map(x, y);
  CHECK(r.values[0] == 1.0);
  CHECK(r.values[1] == doctest::Approx(10.0));
  CHECK(r.values[2] == doctest::Approx(2.0));
  CHECK(r.present[3] == 0.0);

  const BinarizedRatio b = binarize_ratio(r, 10.0);
  CHECK(b.mask[1] == 1.0);
  CHECK(b.mask[2] == 0.0);
  CHECK(b.coverage == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(binarize_ratio(r, 0.0), DomainError);

  y.present[3] = 1.0;
  CHECK(decay_ratio_map(x, y).values[3] == std::numeric_limits<double>::infinity());
  y.anchor = {1, 1};
  CHECK_THROWS_AS(decay_ratio_map(x, y), std::invalid_argument);
  DecayMap z{TD({3, 2}), TD({3, 2}), {0, 0}};
  CHECK_THROWS_AS(decay_ratio_map(x, z), std::invalid_argument);
}

TEST_CASE("upsampled maps repeat each coarse cell") {
  DecayMap m{TD({2, 2}, {0.1, 0.2, 0.3, 1.0}), TD({2, 2}, {1, 1, 1, 1}), {1, 1}};
  m.stride = 2;
  const DecayMap up = upsample_decay_map(m, 4, 4);
  CHECK(up.values.at(0, 1) == 0.1);
  CHECK(up.values.at(2, 1) == 0.3);
  CHECK(up.values.at(3, 3) == 1.0);
  CHECK(up.stride == 1);
}

TEST_CASE("model decay maps") {
  const ArchSpec spec = build_arch("toy");
  const Model<float> m(spec, 5);
  const Tensor<float> img = testutil::rand({32, 32, 3}, 6).cast<float>();
  const std::string layer = last_layer_id(spec);
  CHECK(layer == "stages.3.blocks.0");
  const std::string first = mixer_layer_id(0, 0);
  const DecayMap full = decay_map(m, img, first, ScanRoute::row_major_fwd, {7, 7});
  CHECK(full.stride == 1);
  CHECK(full.values.shape() == Shape{8, 8});
  const DecayMap down = decay_map(m, img, first, ScanRoute::col_major_rev, {7, 7});
  CHECK(down.stride == 2);
  CHECK(down.anchor == GridPoint{3, 3});
  CHECK_THROWS_AS(decay_map(m, img, "stages.9.blocks.0", ScanRoute::row_major_fwd, {0, 0}), std::out_of_range);
}

TEST_CASE("comparison of MS2D and SS2D decay") {
  const ArchSpec spec = build_arch("toy");
  const Tensor<float> img = testutil::rand({64, 64, 3}, 7).cast<float>();
  const DecayComparison c = compare_ms2d_ss2d_decay(spec, 8, img);
  CHECK(c.H == 2);
  CHECK(c.ss2d.size() == 4);
  CHECK(c.ms2d.size() == 4);
  CHECK(c.anchor == GridPoint{1, 1});
  for (const auto& rd : c.ms2d) {
    CHECK(rd.upsampled.values.shape() == Shape{2, 2});
    CHECK(rd.radius_mean.size() == c.radii.size());
    CHECK_FALSE(rd.radius_mean[3].has_value());  // radius 8 lies outside a 2x2 grid
  }
}

TEST_CASE("route redundancy") {
  const auto all = route_redundancy(6, 6, kAllRoutes);
  CHECK(all.unreachable_pairs == 0);
  CHECK(all.adjacent_at_one == 1.0);
  const std::vector<ScanRoute> one{ScanRoute::row_major_fwd};
  const auto single = route_redundancy(6, 6, one);
  CHECK(single.unreachable_pairs == 36 * 35 / 2);
  CHECK(single.adjacent_at_one < 1.0);
  CHECK(all.mean_min_distance < single.mean_min_distance);
}

TEST_CASE("map CSV round trip") {
  const TD v({2, 3}, {0.1, 1.0 / 3.0, 1e-300, 0.0, 1.0, 0.75});
  const std::string text = map_csv(v, {1, 2}, "col_major_fwd");
  CHECK(text.rfind("H,W,anchor_p,anchor_q,route\n2,3,1,2,col_major_fwd\n", 0) == 0);
  const MapCsv back = parse_map_csv(text);
  CHECK(back.values == v);
  CHECK(back.anchor == GridPoint{1, 2});
  CHECK(back.label == "col_major_fwd");
  CHECK_THROWS_AS(parse_map_csv("x\n"), IoError);
  CHECK_THROWS_AS(parse_map_csv("H,W,anchor_p,anchor_q,route\n2,2,0,0,r\n1,2\n"), IoError);
  CHECK_THROWS_AS(parse_map_csv("H,W,anchor_p,anchor_q,route\n1,2,0,0,r\n1,2,3\n"), IoError);
}
