#pragma once

// Multi-scale 2D scan: one set of routes on the stride-1 depthwise features,
// the remaining routes on stride-s depthwise features through a single shared
// S6 group, merged by nearest interpolation.

#include <vector>

#include "msvm/autodiff.hpp"
#include "msvm/routes.hpp"
#include "msvm/ssm.hpp"

namespace msvm {

struct Ms2dConfig {
  std::size_t stride = 2;
  std::vector<ScanRoute> full_routes{ScanRoute::row_major_fwd};
  std::vector<ScanRoute> down_routes{ScanRoute::row_major_rev, ScanRoute::col_major_fwd, ScanRoute::col_major_rev};

  // First `n_full` routes of kAllRoutes at full resolution, the rest downsampled.
  static Ms2dConfig with_split(std::size_t n_full, std::size_t n_down, std::size_t stride = 2);

  std::size_t n_full() const { return full_routes.size(); }
  std::size_t n_down() const { return down_routes.size(); }
  // Throws ConfigError unless the two route lists partition the four routes and stride >= 1.
  void validate() const;
};

// Spatial extent of the stride-s branch (ceil division, never below 1).
std::size_t downsampled_extent(std::size_t extent, std::size_t stride);

struct ScanCost {
  std::size_t full_tokens = 0;
  std::size_t down_tokens = 0;
  std::size_t total_tokens = 0;
  double ratio_vs_ss2d = 0;  // total_tokens / (4 L)
  std::size_t s6_macs(std::size_t channels, std::size_t state_dim) const;
};

ScanCost scan_cost(std::size_t H, std::size_t W, const Ms2dConfig& cfg);

// Independent S6 parameter groups: one per non-empty branch.
std::size_t ms2d_param_groups(const Ms2dConfig& cfg);
std::size_t ss2d_param_groups(bool shared);

// Scan operands seen by one route of a token mixer, kept for decay analysis.
struct RouteCapture {
  ScanRoute route = ScanRoute::row_major_fwd;
  std::size_t stride = 1;
  Tensor<double> grid;  // [h, w, D] features the route flattens
  SsmParams<double> params;
};

namespace ad {
template <typename T>
Var<T> ms2d(const Var<T>& grid, const Ms2dConfig& cfg, const Var<T>& dw_full, const Var<T>& dw_down,
            const SsmVars<T>& p_full, const SsmVars<T>& p_down, std::vector<RouteCapture>* capture = nullptr);
}

// Z' = sum_full gamma(S6(sigma(Z1))) + interpolate(sum_down gamma(S6(sigma(Z2)))) with
// Z1 = dwconv(Z, dw_full, 1), Z2 = dwconv(Z, dw_down, s); 3x3 kernels, padding 1.
template <typename T>
Tensor<T> ms2d_forward(const Tensor<T>& grid, const Ms2dConfig& cfg, const Tensor<T>& dw_full,
                       const Tensor<T>& dw_down, const SsmParams<T>& p_full, const SsmParams<T>& p_down);

}  // namespace msvm
