#pragma once

#include <cmath>
#include <vector>

#include "doctest.h"
#include "msvm/rng.hpp"
#include "msvm/tensor.hpp"

namespace testutil {

using msvm::Shape;
using TD = msvm::Tensor<double>;

inline TD rand(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  msvm::Rng rng(seed);
  return msvm::random_uniform<double>(std::move(s), rng, lo, hi);
}

inline double max_diff(const TD& a, const TD& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
