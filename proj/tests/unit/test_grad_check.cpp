#include <cmath>
#include <string>

#include "common.hpp"
#include "msvm/errors.hpp"
#include "msvm/grad_check.hpp"
#include "msvm/ops.hpp"

using namespace msvm;
using testutil::TD;

namespace {

DiffOp square() {
  return {"square",
          [](const Tensors& in) { return Tensors{mul(in[0], in[0])}; },
          [](const Tensors& in, const Tensors& g) {
            TD out = mul(g[0], in[0]);
            for (auto& v : out.data()) v *= 2;
            return Tensors{out};
          }};
}

}  // namespace

TEST_CASE("square at 3 has gradient 6") {
  const auto rep = grad_check(square(), {TD({1}, 3.0)});
  CHECK(rep.max_rel_err < 1e-8);
  CHECK(rep.coords_checked == 1);
  CHECK(square().vjp({TD({1}, 3.0)}, {TD({1}, 1.0)})[0][0] == 6.0);
}

TEST_CASE("dense_affine and the selective scan pass the checker") {
  const auto cat = diff_op_catalog();
  auto find = [&](const std::string& name) {
    for (const auto& c : cat)
      if (c.op.name == name) return c;
    FAIL("missing op " << name);
    return cat.front();
  };
  const auto dense = find("dense_affine");
  CHECK(grad_check(dense.op, {testutil::rand({4, 3}, 1), testutil::rand({2, 3}, 2), testutil::rand({2}, 3)})
            .max_rel_err < 1e-6);

  const auto scan = find("selective_scan");
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Tensors in = scan.sample(rng);
    CHECK(grad_check(scan.op, in).max_rel_err < 1e-4);
  }
}

TEST_CASE("every catalogued op passes at f64 with step 1e-5") {
  Rng rng(5);
  for (const auto& c : diff_op_catalog()) {
    double worst = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
      GradCheckOptions o;
      o.max_coords = 48;
      o.seed = i;
      o.random_cotangent = i % 2 == 1;
      const auto rep = grad_check(c.op, c.sample(rng), o);
      worst = std::max(worst, rep.max_rel_err);
    }
    INFO(c.op.name << " worst relative error " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("vjp cotangents match the input shapes") {
  Rng rng(6);
  for (const auto& c : diff_op_catalog()) {
    const Tensors in = c.sample(rng);
    Tensors cot;
    for (const auto& o : c.op.forward(in)) cot.push_back(TD(o.shape(), 1.0));
    const Tensors g = c.op.vjp(in, cot);
    REQUIRE(g.size() == in.size());
    for (std::size_t k = 0; k < in.size(); ++k) CHECK(g[k].shape() == in[k].shape());
  }
}

TEST_CASE("step must lie in [1e-6, 1e-3]") {
  GradCheckOptions o;
  o.step = 1e-2;
  CHECK_THROWS_AS(grad_check(square(), {TD({1}, 1.0)}, o), DomainError);
  o.step = 1e-7;
  CHECK_THROWS_AS(grad_check(square(), {TD({1}, 1.0)}, o), DomainError);
}

TEST_CASE("non-finite outputs name the op") {
  DiffOp bad{"log_of_negative",
             [](const Tensors& in) {
               TD out = in[0];
               for (auto& v : out.data()) v = std::log(v);
               return Tensors{out};
             },
             [](const Tensors& in, const Tensors&) { return Tensors{in[0]}; }};
  try {
    grad_check(bad, {TD({2}, -1.0)});
    FAIL("expected a NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("log_of_negative") != std::string::npos);
  }
}

TEST_CASE("a wrong vjp is detected") {
  DiffOp wrong = square();
  wrong.vjp = [](const Tensors& in, const Tensors& g) { return Tensors{mul(g[0], in[0])}; };
  CHECK_FALSE(grad_check(wrong, {TD({1}, 3.0)}).passed);
}

TEST_CASE("relative error floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-6));
}
