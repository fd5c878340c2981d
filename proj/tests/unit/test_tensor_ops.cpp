#include <cmath>
#include <string>

#include "common.hpp"
#include "msvm/errors.hpp"
#include "msvm/ops.hpp"

using namespace msvm;
using testutil::TD;

TEST_CASE("tensor construction validates extents and data length") {
  CHECK_THROWS_AS(TD({2, 0}), DimensionError);
  CHECK_THROWS_AS(TD({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  TD t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
  CHECK(t.cast<float>().cast<double>() == t);
  CHECK(TD().empty());
}

TEST_CASE("dense_affine") {
  SUBCASE("identity weight") {
    TD x({2}, {1, 2}), w({2, 2}, {1, 0, 0, 1}), b({2}, {0, 0});
    CHECK(dense_affine(x, w, b) == x);
  }
  SUBCASE("single output") {
    TD x({2}, {1, 1}), w({1, 2}, {2, 3}), b({1}, {1});
    CHECK(dense_affine(x, w, b)[0] == 6.0);
  }
  SUBCASE("matches a naive triple loop exactly") {
    const TD x = testutil::rand({3, 4}, 1), w = testutil::rand({5, 4}, 2), b = testutil::rand({5}, 3);
    const TD y = dense_affine(x, w, b);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < 4; ++i) s += w.at(j, i) * x.at(r, i);
        CHECK(std::abs(y.at(r, j) - (s + b[j])) < 1e-14);
      }
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      dense_affine(TD({2, 3}), TD({4, 5}), TD());
      FAIL("expected a DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2,3]") != std::string::npos);
      CHECK(msg.find("[4,5]") != std::string::npos);
    }
  }
}

TEST_CASE("dwconv2d") {
  SUBCASE("centre-one kernel is the identity") {
    const TD x = testutil::rand({5, 4, 3}, 4);
    TD k({3, 3, 3});
    for (std::size_t d = 0; d < 3; ++d) k.at(1, 1, d) = 1.0;
    CHECK(dwconv2d(x, k, 1, 1) == x);
  }
  SUBCASE("stride 2 matches nested loops") {
    const TD x({4, 4, 1}, 1.0), k({3, 3, 1}, 1.0);
    const TD y = dwconv2d(x, k, 2, 1);
    REQUIRE(y.shape() == Shape{2, 2, 1});
    for (long i = 0; i < 2; ++i)
      for (long j = 0; j < 2; ++j) {
        double s = 0;
        for (long a = 0; a < 3; ++a)
          for (long b = 0; b < 3; ++b) {
            const long p = 2 * i + a - 1, q = 2 * j + b - 1;
            if (p >= 0 && p < 4 && q >= 0 && q < 4) s += 1.0;
          }
        CHECK(y.at(i, j, 0) == s);
      }
  }
  SUBCASE("channels never mix") {
    TD x({3, 3, 2});
    x.at(1, 1, 0) = 1.0;
    const TD y = dwconv2d(x, TD({3, 3, 2}, 1.0), 1, 1);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(y.at(i, j, 1) == 0.0);
  }
  CHECK(dwconv2d(TD({14, 14, 2}), TD({3, 3, 2}), 2, 1).shape() == Shape{7, 7, 2});
  CHECK_THROWS_AS(dwconv2d(TD({4, 4, 1}), TD({2, 2, 1}), 1, 0), DimensionError);
  CHECK_THROWS_AS(dwconv2d(TD({1, 1, 1}), TD({5, 5, 1}), 1, 0), DimensionError);
}

TEST_CASE("interpolate_nearest") {
  SUBCASE("integer ratio replicates blocks") {
    const TD x({2, 2, 1}, {1, 2, 3, 4});
    const TD y = interpolate_nearest(x, 4, 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(i, j, 0) == x.at(i / 2, j / 2, 0));
  }
  SUBCASE("same size is the identity") {
    const TD x = testutil::rand({3, 5, 2}, 5);
    CHECK(interpolate_nearest(x, 3, 5) == x);
  }
  SUBCASE("4x4 to 7x7 follows floor(i*h/H)") {
    const TD x = testutil::rand({4, 4, 2}, 6);
    const TD y = interpolate_nearest(x, 7, 7);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j)
        for (std::size_t d = 0; d < 2; ++d) CHECK(y.at(i, j, d) == x.at(i * 4 / 7, j * 4 / 7, d));
  }
  SUBCASE("subsampling recovers the source") {
    const TD x = testutil::rand({3, 4, 2}, 7);
    const TD y = interpolate_nearest(x, 6, 8);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t d = 0; d < 2; ++d) CHECK(y.at(2 * i, 2 * j, d) == x.at(i, j, d));
  }
  CHECK_THROWS_AS(interpolate_nearest(TD({2, 2, 1}), 0, 3), DimensionError);
  CHECK_THROWS_AS(interpolate_nearest(TD({4, 4, 1}), 2, 2), DimensionError);
}

TEST_CASE("layer_norm, activations and pooling") {
  const TD g({4}, 1.0), b({4}, 0.0);
  const TD flat = layer_norm(TD({2, 4}, 3.25), g, b);
  for (double v : flat.data()) CHECK(v == 0.0);

  const TD x = testutil::rand({3, 8}, 8, -4, 4);
  const TD y = layer_norm(x, TD({8}, 1.0), TD({8}, 0.0));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 8; ++i) m += y.at(r, i) / 8;
    for (std::size_t i = 0; i < 8; ++i) v += (y.at(r, i) - m) * (y.at(r, i) - m) / 8;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }

  const TD zero({1}, 0.0);
  CHECK(activate(zero, Activation::silu)[0] == 0.0);
  CHECK(activate(zero, Activation::gelu)[0] == 0.0);
  CHECK(activate(zero, Activation::sigmoid)[0] == 0.5);
  CHECK(activate(TD({1}, 2.0), Activation::softplus)[0] == doctest::Approx(std::log1p(std::exp(2.0))));
  CHECK(softplus(softplus_inverse(0.37)) == doctest::Approx(0.37).epsilon(1e-14));

  CHECK(global_avg_pool(TD({2, 2, 1}, {1, 2, 3, 5}))[0] == 2.75);
}

TEST_CASE("patchify, slicing and cross entropy") {
  const TD x = testutil::rand({5, 3, 2}, 9);
  const TD p = patchify(x, 2);
  REQUIRE(p.shape() == Shape{3, 2, 8});
  CHECK(p.at(0, 0, 0) == x.at(0, 0, 0));
  CHECK(p.at(0, 0, 3) == x.at(0, 1, 1));
  CHECK(p.at(2, 1, 4) == 0.0);  // zero padding past the bottom edge

  const TD s = slice_last(testutil::rand({2, 5}, 10), 1, 3);
  CHECK(s.shape() == Shape{2, 2});
  CHECK_THROWS_AS(slice_last(TD({2, 5}), 3, 6), DimensionError);

  const TD logits({3}, {1.0, 2.0, 0.5});
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  CHECK(softmax_cross_entropy(logits, 1)[0] == doctest::Approx(-std::log(std::exp(2.0) / z)));
}

TEST_CASE("primitives are bitwise deterministic") {
  const TD x = testutil::rand({6, 5, 4}, 11), k = testutil::rand({3, 3, 4}, 12);
  CHECK(dwconv2d(x, k, 2, 1) == dwconv2d(x, k, 2, 1));
  CHECK(layer_norm(x, TD({4}, 1.0), TD({4}, 0.0)) == layer_norm(x, TD({4}, 1.0), TD({4}, 0.0)));
  CHECK(activate(x, Activation::gelu) == activate(x, Activation::gelu));
}

TEST_CASE("finite inputs stay finite") {
  const TD x = testutil::rand({4, 4, 3}, 13, -50, 50);
  for (Activation a : {Activation::silu, Activation::gelu, Activation::sigmoid, Activation::relu,
                       Activation::softplus, Activation::neg_exp})
    CHECK(activate(x, a).all_finite());
  CHECK(layer_norm(x, TD({3}, 1.0), TD({3}, 0.0)).all_finite());
  CHECK(softmax_cross_entropy(TD({3}, {800.0, -800.0, 0.0}), 1).all_finite());
}
