#pragma once

// Wall-clock timing of the selective scan and MS2D across a size grid.

#include <cstdint>
#include <string>
#include <vector>

namespace msvm {

struct BenchConfig {
  std::vector<std::size_t> lengths{1024, 2048, 4096};
  std::size_t channels = 16;
  std::vector<std::size_t> state_dims{1, 8};
  std::vector<std::size_t> grids{32, 64};  // square H = W for the MS2D rows
  std::vector<std::size_t> strides{1, 2};
  std::size_t repeats = 3;  // best-of
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string kernel;  // "selective_scan" or "ms2d"
  std::size_t length = 0, channels = 0, state_dim = 0, height = 0, width = 0, stride = 0;
  std::size_t scanned_tokens = 0;
  std::size_t model_macs = 0;  // 9 * tokens * D * N
  double seconds = 0;
  double tokens_per_sec = 0;
  double ns_per_model_mac = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  // time(2L) / time(L) for the two largest lengths at the smallest N; ~2 for a linear scan.
  double linearity_ratio = 0;
  // MS2D forward time at s=1 over s=2 on the largest grid, and the token-count model's 4 / 1.75.
  double stride_speedup = 0;
  double stride_speedup_model = 0;

  std::string csv() const;
};

BenchReport run_bench(const BenchConfig& config);

}  // namespace msvm
