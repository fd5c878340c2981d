#include "msvm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "msvm/errors.hpp"
#include "msvm/log.hpp"
#include "msvm/ms2d.hpp"
#include "msvm/routes.hpp"

namespace msvm {
namespace {

template <typename F>
double best_of(std::size_t repeats, F&& f) {
  double best = 0;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, repeats); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    best = r == 0 ? s : std::min(best, s);
  }
  return best;
}

void finish(BenchRow& row) {
  row.tokens_per_sec = row.seconds > 0 ? static_cast<double>(row.scanned_tokens) / row.seconds : 0;
  row.ns_per_model_mac = row.model_macs ? row.seconds * 1e9 / static_cast<double>(row.model_macs) : 0;
}

// Restores the scan thread count on scope exit.
struct ThreadScope {
  std::size_t saved = scan_threads();
  explicit ThreadScope(std::size_t n) { set_scan_threads(n); }
  ~ThreadScope() { set_scan_threads(saved); }
};

}  // namespace

std::string BenchReport::csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "kernel,L,D,N,H,W,stride,scanned_tokens,model_macs,seconds,tokens_per_sec,ns_per_model_mac\n";
  for (const auto& r : rows)
    os << r.kernel << "," << r.length << "," << r.channels << "," << r.state_dim << "," << r.height << "," << r.width
       << "," << r.stride << "," << r.scanned_tokens << "," << r.model_macs << "," << r.seconds << ","
       << r.tokens_per_sec << "," << r.ns_per_model_mac << "\n";
  return os.str();
}

BenchReport run_bench(const BenchConfig& cfg) {
  if (cfg.lengths.empty() || cfg.state_dims.empty() || cfg.channels == 0 || cfg.threads == 0)
    throw ConfigError("bench: empty size grid or zero channels/threads");
  for (auto L : cfg.lengths)
    if (L == 0 || L > (1u << 20)) throw ConfigError("bench: lengths must lie in [1, 1048576]");
  for (auto g : cfg.grids)
    if (g == 0 || g > 512) throw ConfigError("bench: grid sizes must lie in [1, 512]");
  ThreadScope threads(cfg.threads);
  Rng rng(cfg.seed);
  BenchReport rep;
  const std::size_t D = cfg.channels;

  for (std::size_t N : cfg.state_dims)
    for (std::size_t L : cfg.lengths) {
      const auto p = init_ssm_params<float>(D, N, default_dt_rank(D), rng);
      const auto u = random_uniform<float>({L, D}, rng);
      BenchRow row{"selective_scan", L, D, N, 0, 0, 1, L, s6_scan_macs(L, D, N)};
      row.seconds = best_of(cfg.repeats, [&] { (void)selective_scan(u, p); });
      finish(row);
      log::debug("bench scan L=" + std::to_string(L) + " N=" + std::to_string(N) + ": " + std::to_string(row.seconds) + " s");
      rep.rows.push_back(row);
    }

  const std::size_t N = cfg.state_dims.front();
  for (std::size_t g : cfg.grids)
    for (std::size_t s : cfg.strides) {
      const auto ms = Ms2dConfig::with_split(1, 3, s);
      const auto p_full = init_ssm_params<float>(D, N, default_dt_rank(D), rng);
      const auto p_down = init_ssm_params<float>(D, N, default_dt_rank(D), rng);
      const auto k1 = random_uniform<float>({3, 3, D}, rng), k2 = random_uniform<float>({3, 3, D}, rng);
      const auto z = random_uniform<float>({g, g, D}, rng);
      const auto cost = scan_cost(g, g, ms);
      BenchRow row{"ms2d", g * g, D, N, g, g, s, cost.total_tokens, cost.s6_macs(D, N)};
      row.seconds = best_of(cfg.repeats, [&] { (void)ms2d_forward(z, ms, k1, k2, p_full, p_down); });
      finish(row);
      rep.rows.push_back(row);
    }

  // Derived ratios from the rows above.
  std::vector<std::size_t> Ls = cfg.lengths;
  std::sort(Ls.begin(), Ls.end());
  auto scan_time = [&](std::size_t L) {
    for (const auto& r : rep.rows)
      if (r.kernel == "selective_scan" && r.length == L && r.state_dim == N) return r.seconds;
    return 0.0;
  };
  if (Ls.size() >= 2 && Ls.back() == 2 * Ls[Ls.size() - 2] && scan_time(Ls[Ls.size() - 2]) > 0)
    rep.linearity_ratio = scan_time(Ls.back()) / scan_time(Ls[Ls.size() - 2]);
  if (!cfg.grids.empty()) {
    const std::size_t g = *std::max_element(cfg.grids.begin(), cfg.grids.end());
    double t1 = 0, t2 = 0;
    for (const auto& r : rep.rows)
      if (r.kernel == "ms2d" && r.height == g) {
        if (r.stride == 1) t1 = r.seconds;
        if (r.stride == 2) t2 = r.seconds;
      }
    if (t1 > 0 && t2 > 0) rep.stride_speedup = t1 / t2;
    rep.stride_speedup_model = static_cast<double>(scan_cost(g, g, Ms2dConfig::with_split(1, 3, 1)).total_tokens) /
                               static_cast<double>(scan_cost(g, g, Ms2dConfig::with_split(1, 3, 2)).total_tokens);
  }
  return rep;
}

}  // namespace msvm
