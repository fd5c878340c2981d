#include "msvm/routes.hpp"

#include <atomic>
#include <future>

#include "msvm/errors.hpp"

namespace msvm {
namespace {

std::atomic<std::size_t> g_scan_threads{1};

void check_cell(GridPoint c, std::size_t H, std::size_t W) {
  if (c.p >= H || c.q >= W)
    throw std::out_of_range("grid coordinate (" + std::to_string(c.p) + "," + std::to_string(c.q) +
                            ") outside " + std::to_string(H) + "x" + std::to_string(W) + " grid");
}

}  // namespace

void set_scan_threads(std::size_t n) { g_scan_threads = std::max<std::size_t>(1, n); }
std::size_t scan_threads() { return g_scan_threads; }

const char* route_name(ScanRoute route) {
  switch (route) {
    case ScanRoute::row_major_fwd: return "row_fwd";
    case ScanRoute::row_major_rev: return "row_rev";
    case ScanRoute::col_major_fwd: return "col_fwd";
    case ScanRoute::col_major_rev: return "col_rev";
  }
  return "?";
}

ScanRoute parse_route(const std::string& name) {
  for (auto r : kAllRoutes)
    if (name == route_name(r)) return r;
  throw ConfigError("unknown scan route '" + name + "' (expected row_fwd, row_rev, col_fwd or col_rev)");
}

std::size_t route_position(ScanRoute route, GridPoint c, std::size_t H, std::size_t W) {
  check_cell(c, H, W);
  const std::size_t L = H * W;
  switch (route) {
    case ScanRoute::row_major_fwd: return c.p * W + c.q;
    case ScanRoute::row_major_rev: return L - 1 - (c.p * W + c.q);
    case ScanRoute::col_major_fwd: return c.q * H + c.p;
    case ScanRoute::col_major_rev: return L - 1 - (c.q * H + c.p);
  }
  return 0;
}

GridPoint route_cell(ScanRoute route, std::size_t index, std::size_t H, std::size_t W) {
  const std::size_t L = H * W;
  if (index >= L) throw std::out_of_range("route index beyond grid");
  switch (route) {
    case ScanRoute::row_major_fwd: return {index / W, index % W};
    case ScanRoute::row_major_rev: return {(L - 1 - index) / W, (L - 1 - index) % W};
    case ScanRoute::col_major_fwd: return {index % H, index / H};
    case ScanRoute::col_major_rev: return {(L - 1 - index) % H, (L - 1 - index) / H};
  }
  return {};
}

std::vector<std::size_t> route_order(ScanRoute route, std::size_t H, std::size_t W) {
  std::vector<std::size_t> order(H * W);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto c = route_cell(route, i, H, W);
    order[i] = c.p * W + c.q;
  }
  return order;
}

template <typename T>
Tensor<T> flatten(ScanRoute route, const Tensor<T>& grid) {
  if (grid.rank() != 3) throw DimensionError("flatten: expected [H, W, D], got " + shape_str(grid.shape()));
  const std::size_t H = grid.extent(0), W = grid.extent(1), D = grid.extent(2);
  Tensor<T> out(Shape{H * W, D});
  const auto order = route_order(route, H, W);
  for (std::size_t i = 0; i < order.size(); ++i)
    std::copy_n(grid.data().data() + order[i] * D, D, out.data().data() + i * D);
  return out;
}

template <typename T>
Tensor<T> unflatten(ScanRoute route, const Tensor<T>& seq, std::size_t H, std::size_t W) {
  if (seq.rank() != 2 || seq.extent(0) != H * W)
    throw DimensionError("unflatten: sequence " + shape_str(seq.shape()) + " does not hold a " + std::to_string(H) +
                         "x" + std::to_string(W) + " grid");
  const std::size_t D = seq.extent(1);
  Tensor<T> out(Shape{H, W, D});
  const auto order = route_order(route, H, W);
  for (std::size_t i = 0; i < order.size(); ++i)
    std::copy_n(seq.data().data() + i * D, D, out.data().data() + order[i] * D);
  return out;
}

long route_distance(ScanRoute route, GridPoint from, GridPoint to, std::size_t H, std::size_t W) {
  return static_cast<long>(route_position(route, to, H, W)) - static_cast<long>(route_position(route, from, H, W));
}

std::optional<std::size_t> min_route_distance(std::span<const ScanRoute> routes, GridPoint from, GridPoint to,
                                              std::size_t H, std::size_t W) {
  if (routes.empty()) throw std::invalid_argument("min_route_distance: empty route set");
  std::optional<std::size_t> best;
  for (auto r : routes) {
    const long d = route_distance(r, from, to, H, W);
    if (d < 0) continue;
    if (!best || static_cast<std::size_t>(d) < *best) best = static_cast<std::size_t>(d);
  }
  return best;
}

namespace ad {

template <typename T>
Var<T> flatten(ScanRoute route, const Var<T>& grid) {
  if (grid.value().rank() != 3) throw DimensionError("flatten: expected [H, W, D], got " + shape_str(grid.shape()));
  const std::size_t H = grid.shape()[0], W = grid.shape()[1], D = grid.shape()[2];
  return gather_rows(grid, route_order(route, H, W), Shape{H * W, D});
}

template <typename T>
Var<T> unflatten(ScanRoute route, const Var<T>& seq, std::size_t H, std::size_t W) {
  if (seq.value().rank() != 2 || seq.shape()[0] != H * W)
    throw DimensionError("unflatten: sequence " + shape_str(seq.shape()) + " does not hold a " + std::to_string(H) +
                         "x" + std::to_string(W) + " grid");
  const auto order = route_order(route, H, W);
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = i;
  return gather_rows(seq, inverse, Shape{H, W, seq.shape()[1]});
}

template <typename T>
Var<T> ss2d(const Var<T>& grid, std::span<const SsmVars<T>> params) {
  if (params.size() != 1 && params.size() != kAllRoutes.size())
    throw ConfigError("ss2d: expected 1 shared or 4 per-route parameter groups, got " + std::to_string(params.size()));
  if (grid.value().rank() != 3) throw DimensionError("ss2d: expected [H, W, D], got " + shape_str(grid.shape()));
  const std::size_t H = grid.shape()[0], W = grid.shape()[1];
  auto run = [&](std::size_t k) {
    const auto& p = params.size() == 1 ? params[0] : params[k];
    return unflatten(kAllRoutes[k], selective_scan(flatten(kAllRoutes[k], grid), p), H, W);
  };
  std::array<Var<T>, 4> outs;
  if (scan_threads() > 1 && !grid.requires_grad()) {
    std::array<std::future<Var<T>>, 4> fut;
    for (std::size_t k = 0; k < 4; ++k) fut[k] = std::async(std::launch::async, run, k);
    for (std::size_t k = 0; k < 4; ++k) outs[k] = fut[k].get();
  } else {
    for (std::size_t k = 0; k < 4; ++k) outs[k] = run(k);
  }
  Var<T> sum = outs[0];
  for (std::size_t k = 1; k < 4; ++k) sum = add(sum, outs[k]);
  return sum;
}

}  // namespace ad

template <typename T>
Tensor<T> ss2d(const Tensor<T>& grid, std::span<const SsmParams<T>> params) {
  std::vector<ad::SsmVars<T>> vars;
  for (const auto& p : params) vars.push_back(ad::SsmVars<T>::constant(p));
  return ad::ss2d(ad::Var<T>::constant(grid), std::span<const ad::SsmVars<T>>(vars)).value();
}

#define MSVM_INSTANTIATE_ROUTES(T)                                                         \
  template Tensor<T> flatten(ScanRoute, const Tensor<T>&);                                 \
  template Tensor<T> unflatten(ScanRoute, const Tensor<T>&, std::size_t, std::size_t);     \
  template Tensor<T> ss2d(const Tensor<T>&, std::span<const SsmParams<T>>);                \
  template ad::Var<T> ad::flatten(ScanRoute, const ad::Var<T>&);                           \
  template ad::Var<T> ad::unflatten(ScanRoute, const ad::Var<T>&, std::size_t, std::size_t); \
  template ad::Var<T> ad::ss2d(const ad::Var<T>&, std::span<const ad::SsmVars<T>>);

MSVM_INSTANTIATE_ROUTES(float)
MSVM_INSTANTIATE_ROUTES(double)

}  // namespace msvm
