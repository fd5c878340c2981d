#pragma once

// The four 2D -> 1D scan routes, their inverses, route distances and the
// four-route SS2D aggregate.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msvm/autodiff.hpp"
#include "msvm/ssm.hpp"
#include "msvm/tensor.hpp"

namespace msvm {

enum class ScanRoute { row_major_fwd, row_major_rev, col_major_fwd, col_major_rev };

inline constexpr std::array<ScanRoute, 4> kAllRoutes{ScanRoute::row_major_fwd, ScanRoute::row_major_rev,
                                                     ScanRoute::col_major_fwd, ScanRoute::col_major_rev};

const char* route_name(ScanRoute route);
ScanRoute parse_route(const std::string& name);

struct GridPoint {
  std::size_t p = 0;  // row
  std::size_t q = 0;  // column
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

// Sequence index of grid cell (p, q) under the route.
std::size_t route_position(ScanRoute route, GridPoint cell, std::size_t H, std::size_t W);
GridPoint route_cell(ScanRoute route, std::size_t index, std::size_t H, std::size_t W);
// order[i] = row-major grid index (p * W + q) of the i-th token of the route.
std::vector<std::size_t> route_order(ScanRoute route, std::size_t H, std::size_t W);

// Z [H, W, D] -> X [H*W, D] in route order.
template <typename T>
Tensor<T> flatten(ScanRoute route, const Tensor<T>& grid);
// X [H*W, D] -> Z [H, W, D]; exact inverse of flatten.
template <typename T>
Tensor<T> unflatten(ScanRoute route, const Tensor<T>& seq, std::size_t H, std::size_t W);

// position(to) - position(from) under the route.
long route_distance(ScanRoute route, GridPoint from, GridPoint to, std::size_t H, std::size_t W);

// Minimum forward distance from `from` to `to` over the routes, counting only
// routes that place `from` at or before `to`. nullopt if no route does.
std::optional<std::size_t> min_route_distance(std::span<const ScanRoute> routes, GridPoint from, GridPoint to,
                                              std::size_t H, std::size_t W);

namespace ad {
template <typename T>
Var<T> flatten(ScanRoute route, const Var<T>& grid);
template <typename T>
Var<T> unflatten(ScanRoute route, const Var<T>& seq, std::size_t H, std::size_t W);

// Sum over the four routes of unflatten(scan(flatten(Z))). `params` holds one
// shared group or one group per route (in kAllRoutes order).
template <typename T>
Var<T> ss2d(const Var<T>& grid, std::span<const SsmVars<T>> params);
}  // namespace ad

template <typename T>
Tensor<T> ss2d(const Tensor<T>& grid, std::span<const SsmParams<T>> params);

// Number of route scans run concurrently in ss2d / ms2d (1 = sequential).
void set_scan_threads(std::size_t n);
std::size_t scan_threads();

}  // namespace msvm
