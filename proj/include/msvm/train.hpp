#pragma once

// Desk-scale training on a synthetic oriented-stripe classification task.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msvm/model.hpp"

namespace msvm {

struct Sample {
  Tensor<float> image;  // [H, W, C]
  std::size_t label = 0;
};

// Class k shows sinusoidal stripes at angle pi * k / num_classes with a random
// phase, plus Gaussian noise of standard deviation `noise`.
struct SyntheticTask {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t num_classes = 2;
  double noise = 0.0;
  double period = 6.0;  // stripe period in pixels; avoid multiples of the stem patch

  Sample draw(Rng& rng) const;
  Sample draw(Rng& rng, std::size_t label) const;
  // Deterministic set of n samples with labels cycling through the classes.
  std::vector<Sample> dataset(std::size_t n, std::uint64_t seed) const;
};

struct TrainConfig {
  std::size_t steps = 500;
  double lr = 0.03;
  std::size_t batch = 8;
  std::size_t eval_every = 50;
  std::size_t eval_size = 64;
  std::size_t spot_check_every = 100;  // 0 disables the f64 gradient spot checks
  std::uint64_t seed = 0;
};

struct SpotCheck {
  std::size_t step = 0;
  std::string tensor;
  double max_rel_err = 0;
};

struct TrainTrace {
  std::vector<double> loss;        // probe-batch loss before each update, one per step
  std::vector<double> batch_loss;  // minibatch loss used for each update
  std::vector<std::pair<std::size_t, double>> acc;  // (step, held-out accuracy)
  std::vector<SpotCheck> spot_checks;

  double initial_loss() const { return loss.front(); }
  // Mean of the last min(10, steps) probe losses.
  double final_loss() const;
  double final_acc() const { return acc.back().second; }
  // CSV with header step,loss,acc; acc is blank on steps without an evaluation.
  std::string csv() const;
};

double accuracy(const Model<float>& model, const std::vector<Sample>& data);
double mean_loss(const Model<float>& model, const std::vector<Sample>& data);

// Plain SGD on mean softmax cross-entropy. Initializes the model from `config.seed`.
// A non-finite loss throws NumericError naming the step.
TrainTrace train_toy(const ArchSpec& spec, const SyntheticTask& task, const TrainConfig& config);
// Same, continuing from the given model (updated in place).
TrainTrace train_toy(Model<float>& model, const SyntheticTask& task, const TrainConfig& config);

// One SGD step on `batch`; returns the batch loss.
double sgd_step(Model<float>& model, const std::vector<Sample>& batch, double lr);

struct LadderRow {
  std::string name;
  std::string mixer;
  bool se = false;
  bool convffn = false;
  std::size_t state_dim = 0;
  std::size_t params = 0;
  std::size_t flops = 0;  // MACs at 224 x 224
  double final_loss = 0;
  double final_acc = 0;
};

std::vector<LadderRow> ablation_ladder(const std::vector<ArchSpec>& configs, const SyntheticTask& task,
                                       const TrainConfig& config);

}  // namespace msvm
