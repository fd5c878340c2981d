#include "msvm/train.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "msvm/errors.hpp"
#include "msvm/log.hpp"
#include "msvm/rng.hpp"

namespace msvm {
namespace {

enum Stream : std::uint64_t { kTrain = 1, kHeldOut = 2, kProbe = 3, kSpot = 4 };

template <typename T>
ad::Var<T> batch_loss(const ArchSpec& spec, const VarMap<T>& params, const std::vector<Sample>& batch) {
  ad::Var<T> total;
  for (const auto& s : batch) {
    auto logits = model_forward(spec, params, ad::Var<T>::constant(s.image.template cast<T>()));
    auto l = ad::cross_entropy(logits, s.label);
    total = total.defined() ? ad::add(total, l) : l;
  }
  return ad::scale(total, static_cast<T>(1.0 / static_cast<double>(batch.size())));
}

// Max relative error between reverse-mode and central-difference gradients of the
// f64 batch loss, over a few coordinates of one randomly chosen tensor.
SpotCheck spot_check(const Model<float>& model, const std::vector<Sample>& batch, std::size_t step, Rng& rng) {
  const Model<double> m = model.cast<double>();
  auto names = std::vector<std::string>{};
  for (const auto& [k, v] : m.params()) names.push_back(k);
  const std::string name = names[uniform_index(rng, names.size())];

  VarMap<double> vars = as_parameters(m.params());
  ad::backward(batch_loss(m.spec(), vars, batch));
  const Tensor<double> grad = vars.at(name).grad().empty() ? Tensor<double>(m.params().at(name).shape())
                                                            : vars.at(name).grad();
  SpotCheck sc{step, name, 0.0};
  ParamMap<double> probe = m.params();
  const double h = 1e-5;
  for (int c = 0; c < 4; ++c) {
    const std::size_t i = uniform_index(rng, grad.size());
    const double x0 = probe.at(name)[i];
    auto loss_at = [&](double x) {
      probe.at(name)[i] = x;
      return batch_loss(m.spec(), as_constants(probe), batch).value()[0];
    };
    const double fd = (loss_at(x0 + h) - loss_at(x0 - h)) / (2 * h);
    probe.at(name)[i] = x0;
    const double rel = std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-3});
    sc.max_rel_err = std::max(sc.max_rel_err, rel);
  }
  return sc;
}

}  // namespace

Sample SyntheticTask::draw(Rng& rng) const { return draw(rng, uniform_index(rng, num_classes)); }

Sample SyntheticTask::draw(Rng& rng, std::size_t label) const {
  if (label >= num_classes) throw std::out_of_range("SyntheticTask: label out of range");
  const double theta = std::numbers::pi * static_cast<double>(label) / static_cast<double>(num_classes);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double kx = std::cos(theta) * 2.0 * std::numbers::pi / period;
  const double ky = std::sin(theta) * 2.0 * std::numbers::pi / period;
  Sample s{Tensor<float>({height, width, channels}), label};
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      const double v = 0.5 + 0.5 * std::sin(kx * static_cast<double>(j) + ky * static_cast<double>(i) + phase);
      for (std::size_t c = 0; c < channels; ++c)
        s.image.at(i, j, c) = static_cast<float>(v + (noise > 0 ? noise * normal(rng) : 0.0));
    }
  return s;
}

std::vector<Sample> SyntheticTask::dataset(std::size_t n, std::uint64_t seed) const {
  Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw(rng, i % num_classes));
  return out;
}

double TrainTrace::final_loss() const {
  const std::size_t n = std::min<std::size_t>(10, loss.size());
  double s = 0;
  for (std::size_t i = loss.size() - n; i < loss.size(); ++i) s += loss[i];
  return s / static_cast<double>(n);
}

std::string TrainTrace::csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "step,loss,acc\n";
  std::size_t k = 0;
  for (std::size_t t = 0; t <= loss.size(); ++t) {
    if (t == loss.size() && (k >= acc.size() || acc[k].first != t)) break;
    os << t << ",";
    if (t < loss.size()) os << loss[t];
    os << ",";
    while (k < acc.size() && acc[k].first < t) ++k;
    if (k < acc.size() && acc[k].first == t) os << acc[k].second;
    os << "\n";
  }
  return os.str();
}

double accuracy(const Model<float>& model, const std::vector<Sample>& data) {
  std::size_t correct = 0;
  for (const auto& s : data) {
    const auto logits = model.forward(s.image);
    const auto& v = logits.vec();
    const std::size_t pred = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    correct += pred == s.label;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double mean_loss(const Model<float>& model, const std::vector<Sample>& data) {
  return batch_loss(model.spec(), as_constants(model.params()), data).value()[0];
}

double sgd_step(Model<float>& model, const std::vector<Sample>& batch, double lr) {
  VarMap<float> vars = as_parameters(model.params());
  const auto loss = batch_loss(model.spec(), vars, batch);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) return value;
  ad::backward(loss);
  const float step = static_cast<float>(lr);
  for (auto& [name, t] : model.params()) {
    const auto& g = vars.at(name).grad();
    if (g.empty()) continue;
    auto d = t.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= step * gd[i];
  }
  return value;
}

TrainTrace train_toy(const ArchSpec& spec, const SyntheticTask& task, const TrainConfig& config) {
  Model<float> model(spec, config.seed);
  return train_toy(model, task, config);
}

TrainTrace train_toy(Model<float>& model, const SyntheticTask& task, const TrainConfig& config) {
  const ArchSpec& spec = model.spec();
  if (task.channels != spec.in_channels || task.num_classes != spec.num_classes)
    throw ConfigError("train_toy: task has " + std::to_string(task.channels) + " channels / " +
                      std::to_string(task.num_classes) + " classes, model expects " +
                      std::to_string(spec.in_channels) + " / " + std::to_string(spec.num_classes));
  if (config.batch == 0 || config.eval_size == 0) throw ConfigError("train_toy: batch and eval_size must be positive");
  if (!(config.lr >= 0) || !std::isfinite(config.lr)) throw ConfigError("train_toy: lr must be finite and >= 0");

  const auto held_out = task.dataset(config.eval_size, derived_rng(config.seed, kHeldOut)());
  const auto probe = task.dataset(config.batch, derived_rng(config.seed, kProbe)());
  Rng spot_rng = derived_rng(config.seed, kSpot);

  TrainTrace trace;
  auto evaluate = [&](std::size_t step) {
    trace.acc.emplace_back(step, accuracy(model, held_out));
    log::info("train step " + std::to_string(step) + ": loss " + std::to_string(trace.loss.empty() ? 0.0 : trace.loss.back()) +
              ", held-out acc " + std::to_string(trace.acc.back().second));
  };

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (config.eval_every && step % config.eval_every == 0) evaluate(step);
    const double probe_loss = mean_loss(model, probe);
    if (!std::isfinite(probe_loss))
      throw NumericError("train_toy: loss diverged (non-finite) at step " + std::to_string(step));
    trace.loss.push_back(probe_loss);

    Rng rng = derived_rng(config.seed, kTrain, step);
    std::vector<Sample> batch;
    for (std::size_t b = 0; b < config.batch; ++b) batch.push_back(task.draw(rng));

    if (config.spot_check_every && step % config.spot_check_every == 0) {
      trace.spot_checks.push_back(spot_check(model, batch, step, spot_rng));
      const auto& sc = trace.spot_checks.back();
      log::debug("gradient spot check at step " + std::to_string(step) + " on " + sc.tensor + ": max rel err " +
                 std::to_string(sc.max_rel_err));
    }

    const double bl = sgd_step(model, batch, config.lr);
    if (!std::isfinite(bl)) throw NumericError("train_toy: loss diverged (non-finite) at step " + std::to_string(step));
    trace.batch_loss.push_back(bl);
  }
  evaluate(config.steps);
  return trace;
}

std::vector<LadderRow> ablation_ladder(const std::vector<ArchSpec>& configs, const SyntheticTask& task,
                                       const TrainConfig& config) {
  std::vector<LadderRow> rows;
  for (const auto& spec : configs) {
    const TrainTrace tr = train_toy(spec, task, config);
    rows.push_back({spec.name, mixer_name(spec.mixer), spec.use_se, spec.use_convffn, spec.state_dim,
                    count_params(spec), count_flops(spec, 224, 224).macs, tr.final_loss(), tr.final_acc()});
  }
  return rows;
}

}  // namespace msvm
