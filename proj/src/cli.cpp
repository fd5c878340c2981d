#include "msvm/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include "msvm/analysis.hpp"
#include "msvm/bench.hpp"
#include "msvm/errors.hpp"
#include "msvm/io.hpp"
#include "msvm/log.hpp"
#include "msvm/train.hpp"
#include "msvm/verify.hpp"

namespace msvm {
namespace fs = std::filesystem;
namespace {

struct Common {
  std::string variant;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 1;
};

void add_common(CLI::App* sub, Common& c, const std::string& default_variant, bool with_variant = true) {
  c.variant = default_variant;
  if (with_variant) sub->add_option("--variant", c.variant, "Variant name or JSON config path")->capture_default_str();
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--out", c.out, "Output directory");
  sub->add_option("--threads", c.threads, "Concurrent route scans")->check(CLI::Range(1, 64))->capture_default_str();
}

Json nullable(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

// ---- verify

int cmd_verify(const Common& c, const std::string& fault, bool skip_train, std::ostream& out, std::ostream& err) {
  VerifyOptions o;
  o.seed = c.seed;
  o.inject_fault = fault;
  o.include_training = !skip_train;
  const auto results = run_verify(o);
  const Json report = verify_report(results);
  out << report.dump(2) << "\n";
  if (!c.out.empty()) write_json(fs::path(c.out) / "verify.json", report);
  int code = kExitOk;
  for (const auto& r : results)
    if (!r.passed) {
      err << "verify: suite '" << r.name << "' failed: " << r.detail;
      if (r.failing_seed) err << " (instance seed " << *r.failing_seed << ")";
      err << "\n";
      code = kExitFailed;
    }
  return code;
}

// ---- arch

int cmd_arch(const Common& c, std::size_t resolution, std::ostream& out) {
  const ArchSpec spec = resolve_arch(c.variant);
  const auto cost224 = count_flops(spec, 224, 224);
  const auto cost = count_flops(spec, resolution, resolution);
  const std::size_t params = count_params(spec);
  Json j{{"variant", c.variant}, {"name", spec.name}, {"params", params}, {"flops_224", cost224.macs}};
  j["flops_at_resolution"] = {{"resolution", resolution}, {"macs", cost.macs}, {"s6_macs", cost.s6_macs},
                              {"scanned_tokens", cost.scanned_tokens}};
  const auto t = cost_targets(spec.name);
  if (t) {
    j["target_params"] = t->params;
    j["target_flops"] = t->flops;
    j["within_tolerance"] = {
        {"params", std::abs(static_cast<double>(params) / t->params - 1) <= t->params_tolerance},
        {"flops", std::abs(static_cast<double>(cost224.macs) / t->flops - 1) <= t->flops_tolerance}};
  } else {
    j["target_params"] = nullptr;
    j["target_flops"] = nullptr;
    j["within_tolerance"] = nullptr;
  }
  Json res = Json::array();
  for (auto [h, w] : stage_resolutions(spec, resolution, resolution)) res.push_back({h, w});
  j["stage_resolutions"] = res;
  j["spec"] = arch_to_json(spec);
  out << j.dump(2) << "\n";
  if (!c.out.empty()) write_json(fs::path(c.out) / "arch.json", j);
  return kExitOk;
}

// ---- decay

std::pair<std::size_t, std::size_t> layer_stage_block(const ArchSpec& spec, const std::string& id) {
  for (std::size_t i = 0; i < spec.num_stages(); ++i)
    for (std::size_t b = 0; b < spec.stage_depths[i]; ++b)
      if (mixer_layer_id(i, b) == id) return {i, b};
  throw std::out_of_range("unknown layer '" + id + "' (e.g. " + last_layer_id(spec) + ")");
}

GridPoint parse_anchor(const std::string& s, std::size_t H, std::size_t W) {
  if (s == "center") return {H / 2, W / 2};
  if (s == "last") return {H - 1, W - 1};
  const auto comma = s.find(',');
  GridPoint a;
  try {
    if (comma == std::string::npos) throw std::invalid_argument(s);
    a = {std::stoul(s.substr(0, comma)), std::stoul(s.substr(comma + 1))};
  } catch (const std::logic_error&) {
    throw ConfigError("bad anchor '" + s + "' (expected center, last or p,q)");
  }
  if (a.p >= H || a.q >= W)
    throw ConfigError("anchor " + s + " outside the " + std::to_string(H) + "x" + std::to_string(W) + " layer grid");
  return a;
}

int cmd_decay(const Common& c, std::size_t resolution, double tau, std::size_t images, const std::string& image_path,
              const std::string& anchor_s, std::string layer, const std::string& weights, std::ostream& out) {
  if (!(tau > 0)) throw ConfigError("--tau must be positive");
  const ArchSpec spec = resolve_arch(c.variant);
  const Model<float> model = weights.empty() ? Model<float>(spec, c.seed) : Model<float>(spec, load_weights(weights));
  if (layer.empty()) layer = last_layer_id(spec);
  const auto [stage, block] = layer_stage_block(spec, layer);
  (void)block;

  std::vector<Tensor<float>> inputs;
  if (!image_path.empty()) {
    inputs.push_back(read_ppm(image_path));
    if (spec.in_channels != 3) throw ConfigError("PPM input needs a 3-channel model");
  } else {
    SyntheticTask task;
    task.height = task.width = resolution;
    task.channels = spec.in_channels;
    task.noise = 0.1;
    for (std::size_t i = 0; i < std::max<std::size_t>(1, images); ++i) {
      Rng rng = derived_rng(c.seed, 7, i);
      inputs.push_back(task.draw(rng, 0).image);
    }
  }
  const std::size_t img_h = inputs.front().extent(0), img_w = inputs.front().extent(1);
  const auto [H, W] = stage_resolutions(spec, img_h, img_w).at(stage);
  const GridPoint anchor = parse_anchor(anchor_s, H, W);

  // Per-route maps on the layer's full-resolution grid, averaged over images.
  std::map<ScanRoute, DecayMap> avg;
  std::map<ScanRoute, std::size_t> strides;
  for (const auto& img : inputs) {
    ForwardTrace trace;
    trace.capture_mixers = true;
    model.forward(img, &trace);
    for (const auto& cap : trace.mixers.at(layer)) {
      DecayMap m = upsample_decay_map(decay_map(cap, {anchor.p / cap.stride, anchor.q / cap.stride}, layer), H, W);
      m.anchor = anchor;
      strides[cap.route] = cap.stride;
      auto it = avg.find(cap.route);
      if (it == avg.end()) {
        avg.emplace(cap.route, m);
      } else {
        for (std::size_t i = 0; i < m.values.size(); ++i) it->second.values[i] += m.values[i];
      }
    }
  }
  for (auto& [r, m] : avg)
    for (auto& v : m.values.data()) v /= static_cast<double>(inputs.size());

  const fs::path dir = c.out.empty() ? fs::path("decay_out") : fs::path(c.out);
  Json routes = Json::array();
  for (const auto& [r, m] : avg) {
    const std::string base = std::string("decay_") + route_name(r);
    write_text(dir / (base + ".csv"), decay_map_csv(m));
    write_pgm(dir / (base + ".pgm"), m.values);
    routes.push_back({{"route", route_name(r)}, {"stride", strides[r]}, {"csv", base + ".csv"}, {"pgm", base + ".pgm"}});
  }
  Json report{{"variant", c.variant}, {"layer", layer},     {"image_size", {img_h, img_w}},
              {"grid", {H, W}},       {"anchor", {anchor.p, anchor.q}}, {"images", inputs.size()},
              {"tau", tau},           {"routes", routes}};

  const auto horiz = avg.find(ScanRoute::row_major_fwd), vert = avg.find(ScanRoute::col_major_fwd);
  if (horiz != avg.end() && vert != avg.end()) {
    const RatioMap ratio = decay_ratio_map(horiz->second, vert->second);
    const BinarizedRatio bin = binarize_ratio(ratio, tau);
    write_text(dir / "ratio.csv", map_csv(ratio.values, anchor, "ratio"));
    write_text(dir / "ratio_mask.csv", map_csv(bin.mask, anchor, "mask"));
    write_pgm(dir / "ratio_mask.pgm", bin.mask);
    report["ratio"] = {{"routes", {"row_fwd", "col_fwd"}}, {"csv", "ratio.csv"}, {"mask_csv", "ratio_mask.csv"},
                       {"mask_pgm", "ratio_mask.pgm"}, {"coverage", bin.coverage}};
  }

  if (spec.mixer == TokenMixer::ms2d && layer == last_layer_id(spec)) {
    const auto cmp = compare_ms2d_ss2d_decay(spec, c.seed, inputs.front(), anchor);
    auto side = [&](const std::vector<RouteDecay>& v) {
      Json a = Json::array();
      for (const auto& rd : v) {
        Json means = Json::array();
        for (const auto& m : rd.radius_mean) means.push_back(nullable(m));
        a.push_back({{"route", route_name(rd.route)}, {"stride", rd.stride}, {"radius_mean", means}});
      }
      return a;
    };
    const Json comparison{{"radii", cmp.radii}, {"ss2d", side(cmp.ss2d)}, {"ms2d", side(cmp.ms2d)}};
    write_json(dir / "decay_compare.json", comparison);
    report["comparison"] = "decay_compare.json";
  }
  write_json(dir / "decay_report.json", report);
  out << report.dump(2) << "\n";
  return kExitOk;
}

// ---- train-toy

struct TrainRequest {
  ArchSpec spec;
  SyntheticTask task;
  TrainConfig train;
};

void reject_unknown(const Json& j, const std::set<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <typename V>
void read_key(const Json& j, const char* key, V& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

TrainRequest parse_train_config(const Json& j, TrainRequest r) {
  reject_unknown(j, {"arch", "task", "train"}, "train config");
  if (j.contains("arch")) r.spec = j.at("arch").is_string() ? resolve_arch(j.at("arch").get<std::string>()) : arch_from_json(j.at("arch"));
  if (j.contains("task")) {
    const Json& t = j.at("task");
    reject_unknown(t, {"height", "width", "noise", "period"}, "task");
    read_key(t, "height", r.task.height);
    read_key(t, "width", r.task.width);
    read_key(t, "noise", r.task.noise);
    read_key(t, "period", r.task.period);
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    reject_unknown(t, {"steps", "lr", "batch", "eval_every", "eval_size", "spot_check_every", "seed"}, "train");
    read_key(t, "steps", r.train.steps);
    read_key(t, "lr", r.train.lr);
    read_key(t, "batch", r.train.batch);
    read_key(t, "eval_every", r.train.eval_every);
    read_key(t, "eval_size", r.train.eval_size);
    read_key(t, "spot_check_every", r.train.spot_check_every);
    read_key(t, "seed", r.train.seed);
  }
  return r;
}

int cmd_train(const Common& c, const CLI::App& sub, const std::string& config, std::size_t steps, double lr,
              std::size_t resolution, bool ladder, std::ostream& out) {
  TrainRequest r{resolve_arch(c.variant), {}, {}};
  r.train.seed = c.seed;
  if (!config.empty()) r = parse_train_config(read_json(config), r);
  // Explicit flags win over the config file.
  if (sub.count("--seed")) r.train.seed = c.seed;
  if (sub.count("--steps")) r.train.steps = steps;
  if (sub.count("--lr")) r.train.lr = lr;
  if (sub.count("--resolution")) r.task.height = r.task.width = resolution;
  r.task.channels = r.spec.in_channels;
  r.task.num_classes = r.spec.num_classes;
  if (count_params(r.spec) > 2'000'000)
    throw ConfigError("train-toy: " + std::to_string(count_params(r.spec)) +
                      " parameters exceeds the desk-scale limit of 2000000");
  if (r.task.height > 128 || r.task.width > 128) throw ConfigError("train-toy: images are limited to 128x128");

  const fs::path dir = c.out.empty() ? fs::path("train_out") : fs::path(c.out);
  if (ladder) {
    const auto specs = ablation_specs(r.spec.stage_dims, r.spec.stage_depths, r.spec.num_classes);
    const auto rows = ablation_ladder(specs, r.task, r.train);
    std::ostringstream os;
    os << "name,mixer,se,convffn,state_dim,params,flops_224,final_loss,final_acc\n";
    for (const auto& row : rows)
      os << row.name << "," << row.mixer << "," << row.se << "," << row.convffn << "," << row.state_dim << ","
         << row.params << "," << row.flops << "," << row.final_loss << "," << row.final_acc << "\n";
    write_text(dir / "ladder.csv", os.str());
    out << os.str();
    return kExitOk;
  }

  Model<float> model(r.spec, r.train.seed);
  const TrainTrace tr = train_toy(model, r.task, r.train);
  write_text(dir / "trace.csv", tr.csv());
  save_weights(model.params(), dir / "model");
  Json spots = Json::array();
  for (const auto& s : tr.spot_checks) spots.push_back({{"step", s.step}, {"tensor", s.tensor}, {"max_rel_err", s.max_rel_err}});
  Json summary{{"arch", arch_to_json(r.spec)},
               {"params", count_params(r.spec)},
               {"steps", r.train.steps},
               {"lr", r.train.lr},
               {"seed", r.train.seed},
               {"initial_loss", tr.initial_loss()},
               {"final_loss", tr.final_loss()},
               {"final_acc", tr.final_acc()},
               {"spot_checks", spots},
               {"trace", "trace.csv"},
               {"weights", {"model.json", "model.bin"}}};
  write_json(dir / "summary.json", summary);
  out << summary.dump(2) << "\n";
  return kExitOk;
}

// ---- bench

int cmd_bench(const Common& c, std::size_t repeats, bool quick, std::ostream& out) {
  BenchConfig cfg;
  cfg.seed = c.seed;
  cfg.threads = c.threads;
  cfg.repeats = repeats;
  if (quick) {
    cfg.lengths = {256, 512};
    cfg.grids = {16};
  }
  const BenchReport rep = run_bench(cfg);
  const std::string csv = rep.csv();
  out << csv;
  if (!c.out.empty()) {
    write_text(fs::path(c.out) / "bench.csv", csv);
    write_json(fs::path(c.out) / "bench.json", {{"threads", cfg.threads},
                                                {"linearity_ratio", rep.linearity_ratio},
                                                {"stride_speedup", rep.stride_speedup},
                                                {"stride_speedup_model", rep.stride_speedup_model}});
  }
  log::info("bench: time(2L)/time(L) = " + std::to_string(rep.linearity_ratio) + ", MS2D s=1/s=2 = " +
            std::to_string(rep.stride_speedup) + " (token model " + std::to_string(rep.stride_speedup_model) + ")");
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale selective-scan vision backbone toolkit", "msvm"};
  app.require_subcommand(1);

  Common vc, ac, dc, tc, bc;
  std::string fault;
  bool skip_train = false;
  auto* verify = app.add_subcommand("verify", "Run all oracle and property suites");
  add_common(verify, vc, "", false);
  verify->add_option("--inject-fault", fault, "Test-only fault injection (scan)");
  verify->add_flag("--skip-train", skip_train, "Skip the toy learnability suite");

  std::size_t arch_res = 224;
  auto* arch = app.add_subcommand("arch", "Parameter and MAC report for a variant");
  add_common(arch, ac, "nano");
  arch->add_option("--resolution", arch_res, "Input side length")->check(CLI::Range(1, 4096))->capture_default_str();

  std::size_t decay_res = 224, images = 1;
  double tau = 10.0;
  std::string image_path, anchor = "center", layer, weights;
  auto* decay = app.add_subcommand("decay", "Decay maps, ratio maps and the MS2D/SS2D comparison");
  add_common(decay, dc, "nano");
  decay->add_option("--resolution", decay_res, "Synthetic image side length")->check(CLI::Range(4, 1024))->capture_default_str();
  decay->add_option("--tau", tau, "Ratio threshold")->capture_default_str();
  decay->add_option("--images", images, "Synthetic images to average over")->check(CLI::Range(1, 1000))->capture_default_str();
  decay->add_option("--image", image_path, "P6 PPM input instead of synthetic images");
  decay->add_option("--anchor", anchor, "center, last or p,q in the layer grid")->capture_default_str();
  decay->add_option("--layer", layer, "Layer id, default the last block");
  decay->add_option("--weights", weights, "Weight file stem (<stem>.json / <stem>.bin)");

  std::size_t steps = 500, train_res = 16;
  double lr = TrainConfig{}.lr;
  std::string config;
  bool ladder = false;
  auto* train = app.add_subcommand("train-toy", "Train on the synthetic stripe task");
  add_common(train, tc, "toy");
  train->add_option("--config", config, "JSON config with arch / task / train sections");
  train->add_option("--steps", steps, "SGD steps")->check(CLI::Range(1, 100000))->capture_default_str();
  train->add_option("--lr", lr, "Learning rate")->capture_default_str();
  train->add_option("--resolution", train_res, "Image side length")->check(CLI::Range(4, 128))->capture_default_str();
  train->add_flag("--ladder", ladder, "Run the ablation ladder at the variant's dims and depths");

  std::size_t repeats = 3;
  bool quick = false;
  auto* bench = app.add_subcommand("bench", "Time the selective scan and MS2D");
  add_common(bench, bc, "", false);
  bench->add_option("--repeats", repeats, "Best-of repeats")->check(CLI::Range(1, 100))->capture_default_str();
  bench->add_flag("--quick", quick, "Small size grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (verify->parsed()) {
      set_scan_threads(vc.threads);
      return cmd_verify(vc, fault, skip_train, out, err);
    }
    if (arch->parsed()) return cmd_arch(ac, arch_res, out);
    if (decay->parsed()) {
      set_scan_threads(dc.threads);
      return cmd_decay(dc, decay_res, tau, images, image_path, anchor, layer, weights, out);
    }
    if (train->parsed()) return cmd_train(tc, *train, config, steps, lr, train_res, ladder, out);
    if (bench->parsed()) return cmd_bench(bc, repeats, quick, out);
  } catch (const ConfigError& e) {
    err << "msvm: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "msvm: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "msvm: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "msvm: " << e.what() << "\n";
    return kExitFailed;
  }
  return kExitUsage;
}

}  // namespace msvm
