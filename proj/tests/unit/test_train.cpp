#include <numeric>

#include "common.hpp"
#include "msvm/errors.hpp"
#include "msvm/train.hpp"

using namespace msvm;

namespace {

TrainConfig quick(std::size_t steps, double lr) {
  TrainConfig c;
  c.steps = steps;
  c.lr = lr;
  c.batch = 4;
  c.eval_every = 5;
  c.eval_size = 8;
  c.spot_check_every = 0;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("synthetic task") {
  const SyntheticTask task;
  const auto data = task.dataset(40, 1);
  REQUIRE(data.size() == 40);
  std::size_t ones = 0;
  for (const auto& s : data) {
    CHECK(s.image.shape() == Shape{16, 16, 3});
    CHECK(s.label < 2);
    CHECK(s.image.all_finite());
    ones += s.label;
  }
  CHECK(ones > 0);
  CHECK(ones < 40);
  const auto again = task.dataset(40, 1);
  for (std::size_t i = 0; i < 40; ++i) CHECK(again[i].image == data[i].image);

  Rng rng(2);
  const Sample s = task.draw(rng, 1);
  CHECK(s.label == 1);
  CHECK_THROWS(task.draw(rng, 2));
}

TEST_CASE("zero learning rate leaves the loss unchanged") {
  const TrainTrace t = train_toy(build_arch("toy"), SyntheticTask{}, quick(4, 0.0));
  REQUIRE(t.loss.size() == 4);
  for (double l : t.loss) CHECK(l == t.loss.front());
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto a = train_toy(build_arch("toy"), SyntheticTask{}, quick(6, 0.03));
  const auto b = train_toy(build_arch("toy"), SyntheticTask{}, quick(6, 0.03));
  CHECK(a.loss == b.loss);
  CHECK(a.acc == b.acc);
  CHECK(a.final_acc() == b.final_acc());
}

TEST_CASE("an SGD step lowers the batch loss") {
  Model<float> m(build_arch("toy"), 4);
  const auto batch = SyntheticTask{}.dataset(8, 5);
  const double before = mean_loss(m, batch);
  const double reported = sgd_step(m, batch, 0.01);
  CHECK(reported == doctest::Approx(before).epsilon(1e-5));
  CHECK(mean_loss(m, batch) < before);
  const double acc = accuracy(m, batch);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("divergence names the step") {
  try {
    train_toy(build_arch("toy"), SyntheticTask{}, quick(50, 1e12));
    FAIL("expected a NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("at step") != std::string::npos);
  }
}

TEST_CASE("mismatched task and model are rejected") {
  SyntheticTask task;
  task.num_classes = 3;
  CHECK_THROWS_AS(train_toy(build_arch("toy"), task, quick(1, 0.01)), ConfigError);
}

TEST_CASE("trace CSV and spot checks") {
  TrainConfig c = quick(4, 0.03);
  c.spot_check_every = 2;
  const TrainTrace t = train_toy(build_arch("toy"), SyntheticTask{}, c);
  const std::string csv = t.csv();
  CHECK(csv.rfind("step,loss,acc\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);  // header, 4 steps, final eval
  REQUIRE_FALSE(t.spot_checks.empty());
  for (const auto& s : t.spot_checks) CHECK(s.max_rel_err < 1e-4);
}

TEST_CASE("ablation ladder rows") {
  const auto specs = ablation_specs({8, 16, 32, 64}, {1, 1, 1, 1}, 2);
  const auto rows = ablation_ladder({specs[0], specs[1]}, SyntheticTask{}, quick(2, 0.03));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].mixer == "ss2d");
  CHECK(rows[1].mixer == "ms2d");
  CHECK(rows[0].params == count_params(specs[0]));
  CHECK(rows[1].params < rows[0].params);
}
