#pragma once

// Long-range decay analysis: per-route decay maps, ratio / binarized-ratio maps,
// the MS2D vs SS2D comparison and route-redundancy statistics.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msvm/model.hpp"
#include "msvm/routes.hpp"

namespace msvm {

struct DecayMap {
  Tensor<double> values;   // [h, w]; 1 at the anchor, 0 where not causally before it
  Tensor<double> present;  // [h, w]; 1 on the causal region (anchor included)
  GridPoint anchor;
  ScanRoute route = ScanRoute::row_major_fwd;
  std::string layer_id;
  std::size_t stride = 1;  // grid stride relative to the layer's full-resolution map

  std::size_t height() const { return values.extent(0); }
  std::size_t width() const { return values.extent(1); }
};

// value(cell at route position m) = mean_{d,k} exp(A[d,k] * sum_{i=m+1..n} delta[i,d]) for m <= n,
// where n is the anchor's route position. `delta` is [h*w, D] in route order.
DecayMap decay_map_from_scan(const Tensor<double>& delta, const Tensor<double>& a, ScanRoute route, std::size_t h,
                             std::size_t w, GridPoint anchor);

// Decay map of one captured route; the anchor is given in the capture's own grid.
DecayMap decay_map(const RouteCapture& capture, GridPoint anchor, const std::string& layer_id = {});

// Runs the model on `image` and maps the named layer's `route`. The anchor is in the
// layer's full-resolution grid; downsampled routes use the cell containing it.
// Unknown layers or routes not run by the layer throw std::out_of_range.
template <typename T>
DecayMap decay_map(const Model<T>& model, const Tensor<T>& image, const std::string& layer_id, ScanRoute route,
                   GridPoint anchor);

// Nearest-neighbour upsampling of a map (values and presence) to H x W.
DecayMap upsample_decay_map(const DecayMap& map, std::size_t H, std::size_t W);

struct RatioMap {
  Tensor<double> values;   // max(a/b, b/a) where both maps are present, else 0
  Tensor<double> present;
};

// Maps must agree in shape and anchor (std::invalid_argument otherwise).
RatioMap decay_ratio_map(const DecayMap& a, const DecayMap& b);

struct BinarizedRatio {
  Tensor<double> mask;  // 1 where ratio >= tau on present cells
  double coverage = 0;  // fraction of present cells in the mask
};

BinarizedRatio binarize_ratio(const RatioMap& ratio, double tau = 10.0);

struct RouteDecay {
  ScanRoute route = ScanRoute::row_major_fwd;
  std::size_t stride = 1;
  DecayMap native;     // on the grid the route actually scanned
  DecayMap upsampled;  // on the full-resolution grid
  std::vector<std::optional<double>> radius_mean;  // per radius, over present cells at that Chebyshev radius
};

struct DecayComparison {
  std::size_t H = 0, W = 0;
  GridPoint anchor;
  std::vector<std::size_t> radii{1, 2, 4, 8};
  std::vector<RouteDecay> ss2d, ms2d;
};

// Compares the decay of captured SS2D and MS2D layers over the same H x W grid.
DecayComparison compare_decay(const std::vector<RouteCapture>& ss2d, const std::vector<RouteCapture>& ms2d,
                              std::size_t H, std::size_t W, GridPoint anchor);

// Builds the MS2D spec and its SS2D counterpart (same widths and N) with the same seed,
// runs both on `image` and compares the last layer. A missing anchor means the last token.
DecayComparison compare_ms2d_ss2d_decay(const ArchSpec& ms2d_spec, std::uint64_t seed, const Tensor<float>& image,
                                        std::optional<GridPoint> anchor = std::nullopt);

std::string last_layer_id(const ArchSpec& spec);

struct RedundancyReport {
  std::size_t H = 0, W = 0;
  double mean_min_distance = 0;      // over ordered pairs reachable by some route
  std::size_t max_min_distance = 0;
  std::size_t unreachable_pairs = 0;  // ordered pairs no route scans forward
  double adjacent_at_one = 0;         // fraction of 4-neighbour pairs at distance 1
};

RedundancyReport route_redundancy(std::size_t H, std::size_t W, std::span<const ScanRoute> routes);

// CSV layout: "H,W,anchor_p,anchor_q,route", one line with those values, then H rows of W values.
std::string map_csv(const Tensor<double>& values, GridPoint anchor, const std::string& label);
std::string decay_map_csv(const DecayMap& map);

struct MapCsv {
  std::size_t H = 0, W = 0;
  GridPoint anchor;
  std::string label;
  Tensor<double> values;
};
MapCsv parse_map_csv(const std::string& text);

}  // namespace msvm
