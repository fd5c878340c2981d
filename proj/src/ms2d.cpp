#include "msvm/ms2d.hpp"

#include <algorithm>

#include "msvm/errors.hpp"

namespace msvm {

Ms2dConfig Ms2dConfig::with_split(std::size_t n_full, std::size_t n_down, std::size_t stride) {
  if (n_full + n_down != kAllRoutes.size())
    throw ConfigError("MS2D split (" + std::to_string(n_full) + "," + std::to_string(n_down) +
                      ") must cover exactly 4 routes");
  Ms2dConfig cfg;
  cfg.stride = stride;
  cfg.full_routes.assign(kAllRoutes.begin(), kAllRoutes.begin() + static_cast<long>(n_full));
  cfg.down_routes.assign(kAllRoutes.begin() + static_cast<long>(n_full), kAllRoutes.end());
  cfg.validate();
  return cfg;
}

void Ms2dConfig::validate() const {
  if (stride == 0) throw ConfigError("MS2D stride must be >= 1");
  if (n_full() + n_down() != kAllRoutes.size())
    throw ConfigError("MS2D split (" + std::to_string(n_full()) + "," + std::to_string(n_down()) +
                      ") must cover exactly 4 routes");
  for (auto r : kAllRoutes) {
    const auto nf = std::count(full_routes.begin(), full_routes.end(), r);
    const auto nd = std::count(down_routes.begin(), down_routes.end(), r);
    if (nf + nd != 1)
      throw ConfigError(std::string("MS2D routes must partition the four routes; '") + route_name(r) +
                        "' appears " + std::to_string(nf + nd) + " times");
  }
}

std::size_t downsampled_extent(std::size_t extent, std::size_t stride) {
  return std::max<std::size_t>(1, (extent + stride - 1) / stride);
}

std::size_t ScanCost::s6_macs(std::size_t channels, std::size_t state_dim) const {
  return s6_scan_macs(total_tokens, channels, state_dim);
}

ScanCost scan_cost(std::size_t H, std::size_t W, const Ms2dConfig& cfg) {
  cfg.validate();
  if (H == 0 || W == 0) throw DimensionError("scan_cost: empty grid");
  const std::size_t L = H * W;
  const std::size_t Ld = downsampled_extent(H, cfg.stride) * downsampled_extent(W, cfg.stride);
  ScanCost c;
  c.full_tokens = cfg.n_full() * L;
  c.down_tokens = cfg.n_down() * Ld;
  c.total_tokens = c.full_tokens + c.down_tokens;
  c.ratio_vs_ss2d = static_cast<double>(c.total_tokens) / static_cast<double>(4 * L);
  return c;
}

std::size_t ms2d_param_groups(const Ms2dConfig& cfg) {
  cfg.validate();
  return (cfg.n_full() > 0 ? 1 : 0) + (cfg.n_down() > 0 ? 1 : 0);
}

std::size_t ss2d_param_groups(bool shared) { return shared ? 1 : kAllRoutes.size(); }

namespace ad {

template <typename T>
Var<T> ms2d(const Var<T>& grid, const Ms2dConfig& cfg, const Var<T>& dw_full, const Var<T>& dw_down,
            const SsmVars<T>& p_full, const SsmVars<T>& p_down, std::vector<RouteCapture>* capture) {
  cfg.validate();
  if (grid.value().rank() != 3) throw DimensionError("ms2d: expected [H, W, D], got " + shape_str(grid.shape()));
  const std::size_t H = grid.shape()[0], W = grid.shape()[1];

  auto record = [&](ScanRoute r, std::size_t stride, const Var<T>& z, const SsmVars<T>& p) {
    if (!capture) return;
    capture->push_back({r, stride, z.value().template cast<double>(), p.values().template cast<double>()});
  };

  Var<T> out;
  if (cfg.n_full() > 0) {
    const Var<T> z1 = dwconv(grid, dw_full, 1, 1);
    for (auto r : cfg.full_routes) {
      record(r, 1, z1, p_full);
      Var<T> y = unflatten(r, selective_scan(flatten(r, z1), p_full), H, W);
      out = out.defined() ? add(out, y) : y;
    }
  }
  if (cfg.n_down() > 0) {
    const Var<T> z2 = dwconv(grid, dw_down, cfg.stride, 1);
    const std::size_t h = z2.shape()[0], w = z2.shape()[1];
    Var<T> sum;
    for (auto r : cfg.down_routes) {
      record(r, cfg.stride, z2, p_down);
      Var<T> y = unflatten(r, selective_scan(flatten(r, z2), p_down), h, w);
      sum = sum.defined() ? add(sum, y) : y;
    }
    Var<T> up = interpolate(sum, H, W);
    out = out.defined() ? add(out, up) : up;
  }
  return out;
}

}  // namespace ad

template <typename T>
Tensor<T> ms2d_forward(const Tensor<T>& grid, const Ms2dConfig& cfg, const Tensor<T>& dw_full,
                       const Tensor<T>& dw_down, const SsmParams<T>& p_full, const SsmParams<T>& p_down) {
  using V = ad::Var<T>;
  const auto full = cfg.n_full() > 0 ? ad::SsmVars<T>::constant(p_full) : ad::SsmVars<T>{};
  const auto down = cfg.n_down() > 0 ? ad::SsmVars<T>::constant(p_down) : ad::SsmVars<T>{};
  return ad::ms2d(V::constant(grid), cfg, cfg.n_full() ? V::constant(dw_full) : V{},
                  cfg.n_down() ? V::constant(dw_down) : V{}, full, down)
      .value();
}

#define MSVM_INSTANTIATE_MS2D(T)                                                                             \
  template ad::Var<T> ad::ms2d(const ad::Var<T>&, const Ms2dConfig&, const ad::Var<T>&, const ad::Var<T>&,   \
                               const ad::SsmVars<T>&, const ad::SsmVars<T>&, std::vector<RouteCapture>*);    \
  template Tensor<T> ms2d_forward(const Tensor<T>&, const Ms2dConfig&, const Tensor<T>&, const Tensor<T>&,   \
                                  const SsmParams<T>&, const SsmParams<T>&);

MSVM_INSTANTIATE_MS2D(float)
MSVM_INSTANTIATE_MS2D(double)

}  // namespace msvm
