#include <algorithm>

#include "common.hpp"
#include "msvm/arch.hpp"
#include "msvm/errors.hpp"
#include "msvm/model.hpp"
#include "msvm/ops.hpp"

using namespace msvm;
using testutil::TD;

namespace {

// Randomizes every parameter so norms, biases and gates are all non-trivial.
Model<double> randomized(const ArchSpec& spec, std::uint64_t seed) {
  Model<double> m(spec, seed);
  Rng rng(seed + 1);
  for (auto& [name, t] : m.params()) {
    const bool is_a_log = name.size() > 6 && name.compare(name.size() - 6, 6, ".a_log") == 0;
    for (auto& v : t.data()) v = is_a_log ? uniform(rng, -1.0, 1.0) : uniform(rng, -0.5, 0.5);
  }
  return m;
}

SsmParams<double> ssm_from(const ParamMap<double>& p, const std::string& prefix) {
  return {p.at(prefix + ".a_log"), p.at(prefix + ".w_b"),     p.at(prefix + ".w_c"),
          p.at(prefix + ".w_dt_down"), p.at(prefix + ".w_dt_up"), p.at(prefix + ".dt_bias"), {}};
}

}  // namespace

TEST_CASE("variants and targets") {
  for (const auto& v : known_variants()) {
    const ArchSpec s = build_arch(v);
    CHECK_NOTHROW(s.validate());
    CHECK(s.stem_dim == s.stage_dims[0]);
  }
  CHECK_THROWS_AS(build_arch("huge"), ConfigError);
  CHECK_FALSE(cost_targets("toy").has_value());

  for (const std::string v : {"nano", "micro", "tiny"}) {
    const auto t = cost_targets(v);
    REQUIRE(t.has_value());
    const ArchSpec s = build_arch(v);
    const double params = static_cast<double>(count_params(s));
    const double macs = static_cast<double>(count_flops(s, 224, 224).macs);
    CHECK(std::abs(params - t->params) / t->params <= t->params_tolerance);
    CHECK(std::abs(macs - t->flops) / t->flops <= t->flops_tolerance);
  }
  CHECK(count_params(build_arch("nano")) < count_params(build_arch("micro")));
  CHECK(count_params(build_arch("micro")) < count_params(build_arch("tiny")));
  CHECK(count_flops(build_arch("nano"), 224, 224).macs < count_flops(build_arch("micro"), 224, 224).macs);
}

TEST_CASE("analytic parameter count equals the instantiated model") {
  for (const std::string v : {"toy", "nano"}) {
    const ArchSpec s = build_arch(v);
    CHECK(count_params(s) == Model<float>(s, 0).param_count());
  }
  for (const auto& s : ablation_specs({8, 16, 32, 64}, {1, 1, 1, 1}, 2)) {
    std::size_t total = 0;
    for (const auto& [name, shape] : parameter_shapes(s)) total += shape_size(shape);
    CHECK(count_params(s) == total);
    CHECK(count_params(s) == Model<double>(s, 3).param_count());
  }
}

TEST_CASE("ablation ladder") {
  const auto ladder = ablation_specs({8, 16, 32, 64}, {1, 1, 1, 1}, 2);
  REQUIRE(ladder.size() == 5);
  CHECK(ladder[0].mixer == TokenMixer::ss2d);
  CHECK(ladder[1].mixer == TokenMixer::ms2d);
  CHECK(ladder[4].state_dim == 1);
  // MS2D keeps two S6 groups where SS2D keeps four.
  CHECK(count_params(ladder[1]) < count_params(ladder[0]));
}

TEST_CASE("spatial MACs scale linearly with the token count") {
  const ArchSpec s = build_arch("nano");
  // Even grids at every stage, so the stride-2 branch has no ceil remainder.
  const auto a = count_flops(s, 256, 256), b = count_flops(s, 512, 512);
  CHECK(b.spatial_macs == 4 * a.spatial_macs);
  CHECK(b.fixed_macs == a.fixed_macs);
  CHECK(a.macs == a.spatial_macs + a.fixed_macs);
}

TEST_CASE("stage resolutions and forward shapes") {
  const ArchSpec nano = build_arch("nano");
  const auto r = stage_resolutions(nano, 224, 224);
  REQUIRE(r.size() == 4);
  CHECK(r[0].first == 56);
  CHECK(r[1].first == 28);
  CHECK(r[2].first == 14);
  CHECK(r[3].first == 7);

  const ArchSpec toy = build_arch("toy");
  const auto rt = stage_resolutions(toy, 32, 32);
  CHECK(rt[0].first == 8);
  CHECK(rt[1].first == 4);
  CHECK(rt[2].first == 2);
  CHECK(rt[3].first == 1);

  const Model<float> m(toy, 1);
  ForwardTrace trace;
  const auto logits = m.forward(testutil::rand({32, 32, 3}, 2).cast<float>(), &trace);
  CHECK(logits.shape() == Shape{2});
  REQUIRE(trace.stage_outputs.size() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(trace.stage_outputs[i] == Shape{rt[i].first, rt[i].second, toy.stage_dims[i]});

  CHECK_THROWS_AS(m.forward(Tensor<float>({32, 32, 4})), DimensionError);
  CHECK_THROWS_AS(m.forward(Tensor<float>({3, 32, 3})), DimensionError);
}

TEST_CASE("nano forward at 224") {
  const Model<float> m(build_arch("nano"), 0);
  ForwardTrace trace;
  const auto logits = m.forward(testutil::rand({224, 224, 3}, 5).cast<float>(), &trace);
  CHECK(logits.shape() == Shape{1000});
  CHECK(logits.all_finite());
  REQUIRE(trace.stage_outputs.size() == 4);
  CHECK(trace.stage_outputs[3] == Shape{7, 7, 384});
}

TEST_CASE("construction and forward are deterministic") {
  const ArchSpec toy = build_arch("toy");
  const Model<double> a(toy, 9), b(toy, 9), c(toy, 10);
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());
  const TD img = testutil::rand({16, 16, 3}, 11);
  CHECK(a.forward(img) == b.forward(img));
}

TEST_CASE("zeroed residual branches make every block the identity") {
  for (const std::string v : {"toy", "nano"}) {
    Model<double> m = randomized(build_arch(v), 12);
    zero_residual_branches(m);
    for (std::size_t i = 0; i < m.spec().num_stages(); ++i) {
      const TD x = testutil::rand({4, 5, m.spec().stage_dims[i]}, 13 + i);
      CHECK(ms3_forward(m, i, 0, x) == x);
    }
  }
  const Model<double> m(build_arch("toy"), 0);
  CHECK_THROWS_AS(ms3_forward(m, 0, 0, TD({4, 4, 5})), DimensionError);
  CHECK_THROWS_AS(ms3_forward(m, 0, 7, TD({4, 4, 8})), std::out_of_range);
}

TEST_CASE("MS3 block matches a hand-composed pipeline") {
  const ArchSpec spec = build_arch("toy");
  const Model<double> m = randomized(spec, 20);
  const auto& p = m.params();
  const std::string b = block_prefix(1, 0);
  const std::size_t d = spec.stage_dims[1], e = spec.mixer_width(1);
  const TD x = testutil::rand({6, 5, d}, 21);

  const auto lin = [&](const std::string& n, const TD& v) { return dense_affine(v, p.at(n + ".weight"), p.at(n + ".bias")); };
  const auto ln = [&](const std::string& n, const TD& v) { return layer_norm(v, p.at(n + ".gamma"), p.at(n + ".beta")); };

  const TD t = lin(b + ".in_proj", ln(b + ".norm1", x));
  const TD xs = activate(add_bias(dwconv2d(slice_last(t, 0, e), p.at(b + ".conv.weight"), 1, 1), p.at(b + ".conv.bias")),
                         Activation::silu);
  TD y = ms2d_forward(xs, spec.ms2d, p.at(b + ".mixer.dw_full"), p.at(b + ".mixer.dw_down"),
                      ssm_from(p, b + ".mixer.ssm_full"), ssm_from(p, b + ".mixer.ssm_down"));
  y = ln(b + ".out_norm", y);
  const TD s = activate(lin(b + ".se.fc2", activate(lin(b + ".se.fc1", global_avg_pool(y)), Activation::relu)),
                        Activation::sigmoid);
  y = mul(scale_channels(y, s), activate(slice_last(t, e, 2 * e), Activation::silu));
  TD out = add(x, lin(b + ".out_proj", y));
  const TD h = activate(add_bias(dwconv2d(lin(b + ".ffn.fc1", ln(b + ".norm2", out)), p.at(b + ".ffn.conv.weight"), 1, 1),
                                 p.at(b + ".ffn.conv.bias")),
                        Activation::gelu);
  out = add(out, lin(b + ".ffn.fc2", h));

  CHECK(testutil::max_diff(ms3_forward(m, 1, 0, x), out) < 1e-12);
}

TEST_CASE("every parameter receives gradient") {
  // 128 px leaves a 2x2 stride-2 grid in the last stage; a single token would not see a_log.
  const ArchSpec spec = build_arch("toy");
  const Model<double> m = randomized(spec, 30);
  const VarMap<double> vars = as_parameters(m.params());
  const auto logits = model_forward(spec, vars, ad::Var<double>::constant(testutil::rand({128, 128, 3}, 31)));
  ad::backward(ad::cross_entropy(logits, 1));
  for (const auto& [name, v] : vars) {
    const auto& g = v.grad();
    REQUIRE_MESSAGE(g.size() == v.value().size(), name);
    const bool any = std::any_of(g.data().begin(), g.data().end(), [](double z) { return z != 0.0; });
    CHECK_MESSAGE(any, name);
  }
}

TEST_CASE("restoring a model from a parameter map") {
  const ArchSpec spec = build_arch("toy");
  const Model<double> a(spec, 40);
  const Model<double> b(spec, a.params());
  CHECK(b.forward(testutil::rand({16, 16, 3}, 41)) == a.forward(testutil::rand({16, 16, 3}, 41)));
  ParamMap<double> missing = a.params();
  missing.erase(missing.begin());
  CHECK_THROWS(Model<double>(spec, missing));
}
