#include "msvm/analysis.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "msvm/errors.hpp"
#include "msvm/ops.hpp"

namespace msvm {

DecayMap decay_map_from_scan(const Tensor<double>& delta, const Tensor<double>& a, ScanRoute route, std::size_t h,
                             std::size_t w, GridPoint anchor) {
  if (delta.rank() != 2 || delta.extent(0) != h * w || a.rank() != 2 || a.extent(0) != delta.extent(1))
    throw DimensionError("decay_map: delta " + shape_str(delta.shape()) + " and A " + shape_str(a.shape()) +
                         " do not match a " + std::to_string(h) + "x" + std::to_string(w) + " grid");
  if (anchor.p >= h || anchor.q >= w)
    throw std::out_of_range("decay_map: anchor (" + std::to_string(anchor.p) + ", " + std::to_string(anchor.q) +
                            ") outside the " + std::to_string(h) + "x" + std::to_string(w) + " grid");
  const std::size_t D = a.extent(0), N = a.extent(1);
  DecayMap map{Tensor<double>({h, w}), Tensor<double>({h, w}), anchor, route, {}, 1};
  const std::size_t n = route_position(route, anchor, h, w);
  std::vector<double> acc(D, 0.0);  // sum_{i=m+1..n} delta[i, d]
  for (std::size_t m = n + 1; m-- > 0;) {
    if (m < n)
      for (std::size_t d = 0; d < D; ++d) acc[d] += delta.at(m + 1, d);
    double s = 0;
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t k = 0; k < N; ++k) s += std::exp(a.at(d, k) * acc[d]);
    const GridPoint cell = route_cell(route, m, h, w);
    map.values.at(cell.p, cell.q) = m == n ? 1.0 : s / static_cast<double>(D * N);
    map.present.at(cell.p, cell.q) = 1.0;
  }
  return map;
}

DecayMap decay_map(const RouteCapture& capture, GridPoint anchor, const std::string& layer_id) {
  const std::size_t h = capture.grid.extent(0), w = capture.grid.extent(1);
  const auto in = project_inputs(flatten(capture.route, capture.grid), capture.params);
  DecayMap map = decay_map_from_scan(in.delta, in.a, capture.route, h, w, anchor);
  map.layer_id = layer_id;
  map.stride = capture.stride;
  return map;
}

template <typename T>
DecayMap decay_map(const Model<T>& model, const Tensor<T>& image, const std::string& layer_id, ScanRoute route,
                   GridPoint anchor) {
  ForwardTrace trace;
  trace.capture_mixers = true;
  model.forward(image, &trace);
  auto it = trace.mixers.find(layer_id);
  if (it == trace.mixers.end()) throw std::out_of_range("decay_map: unknown layer '" + layer_id + "'");
  for (const auto& cap : it->second)
    if (cap.route == route) return decay_map(cap, {anchor.p / cap.stride, anchor.q / cap.stride}, layer_id);
  throw std::out_of_range(std::string("decay_map: layer '") + layer_id + "' does not scan route " + route_name(route));
}

DecayMap upsample_decay_map(const DecayMap& map, std::size_t H, std::size_t W) {
  DecayMap out = map;
  out.values = interpolate_nearest(map.values.reshaped({map.height(), map.width(), 1}), H, W).reshaped({H, W});
  out.present = interpolate_nearest(map.present.reshaped({map.height(), map.width(), 1}), H, W).reshaped({H, W});
  out.stride = 1;
  return out;
}

RatioMap decay_ratio_map(const DecayMap& a, const DecayMap& b) {
  if (a.values.shape() != b.values.shape())
    throw std::invalid_argument("decay_ratio_map: shapes " + shape_str(a.values.shape()) + " and " +
                                shape_str(b.values.shape()) + " differ");
  if (!(a.anchor == b.anchor)) throw std::invalid_argument("decay_ratio_map: maps have different anchors");
  RatioMap r{Tensor<double>(a.values.shape()), Tensor<double>(a.values.shape())};
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    if (a.present[i] == 0.0 || b.present[i] == 0.0) continue;
    const double x = a.values[i], y = b.values[i];
    // Both are strictly positive on the causal region; an underflowed zero counts as infinitely far.
    r.values[i] = (x == 0.0 || y == 0.0) ? std::numeric_limits<double>::infinity() : std::max(x / y, y / x);
    r.present[i] = 1.0;
  }
  return r;
}

BinarizedRatio binarize_ratio(const RatioMap& ratio, double tau) {
  if (!(tau > 0)) throw DomainError("binarize_ratio: tau must be positive");
  BinarizedRatio b{Tensor<double>(ratio.values.shape()), 0.0};
  std::size_t present = 0, hit = 0;
  for (std::size_t i = 0; i < ratio.values.size(); ++i) {
    if (ratio.present[i] == 0.0) continue;
    ++present;
    if (ratio.values[i] >= tau) {
      b.mask[i] = 1.0;
      ++hit;
    }
  }
  b.coverage = present ? static_cast<double>(hit) / static_cast<double>(present) : 0.0;
  return b;
}

namespace {

std::vector<std::optional<double>> radius_means(const DecayMap& map, const std::vector<std::size_t>& radii) {
  std::vector<std::optional<double>> out;
  for (std::size_t r : radii) {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < map.height(); ++p)
      for (std::size_t q = 0; q < map.width(); ++q) {
        const std::size_t dp = p > map.anchor.p ? p - map.anchor.p : map.anchor.p - p;
        const std::size_t dq = q > map.anchor.q ? q - map.anchor.q : map.anchor.q - q;
        if (std::max(dp, dq) != r || map.present.at(p, q) == 0.0) continue;
        s += map.values.at(p, q);
        ++n;
      }
    out.push_back(n ? std::optional<double>(s / static_cast<double>(n)) : std::nullopt);
  }
  return out;
}

std::vector<RouteDecay> route_decays(const std::vector<RouteCapture>& caps, std::size_t H, std::size_t W,
                                     GridPoint anchor, const std::vector<std::size_t>& radii) {
  std::vector<RouteDecay> out;
  for (const auto& cap : caps) {
    RouteDecay rd;
    rd.route = cap.route;
    rd.stride = cap.stride;
    rd.native = decay_map(cap, {anchor.p / cap.stride, anchor.q / cap.stride});
    rd.upsampled = upsample_decay_map(rd.native, H, W);
    rd.upsampled.anchor = anchor;
    rd.radius_mean = radius_means(rd.upsampled, radii);
    out.push_back(std::move(rd));
  }
  return out;
}

}  // namespace

DecayComparison compare_decay(const std::vector<RouteCapture>& ss2d, const std::vector<RouteCapture>& ms2d,
                              std::size_t H, std::size_t W, GridPoint anchor) {
  DecayComparison c;
  c.H = H;
  c.W = W;
  c.anchor = anchor;
  c.ss2d = route_decays(ss2d, H, W, anchor, c.radii);
  c.ms2d = route_decays(ms2d, H, W, anchor, c.radii);
  return c;
}

std::string last_layer_id(const ArchSpec& spec) {
  const std::size_t s = spec.num_stages() - 1;
  return mixer_layer_id(s, spec.stage_depths[s] - 1);
}

DecayComparison compare_ms2d_ss2d_decay(const ArchSpec& ms2d_spec, std::uint64_t seed, const Tensor<float>& image,
                                        std::optional<GridPoint> anchor) {
  ArchSpec ss = ms2d_spec;
  ss.mixer = TokenMixer::ss2d;
  ss.name = ms2d_spec.name + "-ss2d";
  const std::string layer = last_layer_id(ms2d_spec);

  auto captures = [&](const ArchSpec& spec) {
    ForwardTrace trace;
    trace.capture_mixers = true;
    Model<float>(spec, seed).forward(image, &trace);
    return trace.mixers.at(layer);
  };
  const auto ms = captures(ms2d_spec);
  const auto sd = captures(ss);
  const std::size_t H = sd.front().grid.extent(0), W = sd.front().grid.extent(1);
  return compare_decay(sd, ms, H, W, anchor.value_or(GridPoint{H - 1, W - 1}));
}

RedundancyReport route_redundancy(std::size_t H, std::size_t W, std::span<const ScanRoute> routes) {
  RedundancyReport rep{H, W};
  double total = 0;
  std::size_t reachable = 0, adjacent = 0, adjacent_one = 0;
  for (std::size_t a = 0; a < H * W; ++a)
    for (std::size_t b = 0; b < H * W; ++b) {
      if (a == b) continue;
      const GridPoint from{a / W, a % W}, to{b / W, b % W};
      const auto d = min_route_distance(routes, from, to, H, W);
      const bool adj = (from.p == to.p && (from.q + 1 == to.q || to.q + 1 == from.q)) ||
                       (from.q == to.q && (from.p + 1 == to.p || to.p + 1 == from.p));
      if (adj) {
        ++adjacent;
        if (d && *d == 1) ++adjacent_one;
      }
      if (!d) {
        ++rep.unreachable_pairs;
        continue;
      }
      total += static_cast<double>(*d);
      rep.max_min_distance = std::max(rep.max_min_distance, *d);
      ++reachable;
    }
  rep.mean_min_distance = reachable ? total / static_cast<double>(reachable) : 0.0;
  rep.adjacent_at_one = adjacent ? static_cast<double>(adjacent_one) / static_cast<double>(adjacent) : 0.0;
  return rep;
}

std::string map_csv(const Tensor<double>& values, GridPoint anchor, const std::string& label) {
  if (values.rank() != 2) throw DimensionError("map_csv: expected [H, W], got " + shape_str(values.shape()));
  std::ostringstream os;
  os << std::setprecision(17);
  os << "H,W,anchor_p,anchor_q,route\n"
     << values.extent(0) << "," << values.extent(1) << "," << anchor.p << "," << anchor.q << "," << label << "\n";
  for (std::size_t i = 0; i < values.extent(0); ++i) {
    for (std::size_t j = 0; j < values.extent(1); ++j) os << (j ? "," : "") << values.at(i, j);
    os << "\n";
  }
  return os.str();
}

std::string decay_map_csv(const DecayMap& map) { return map_csv(map.values, map.anchor, route_name(map.route)); }

MapCsv parse_map_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "H,W,anchor_p,anchor_q,route") throw IoError("map CSV: bad header");
  MapCsv out;
  if (!std::getline(in, line)) throw IoError("map CSV: missing metadata line");
  {
    std::istringstream ls(line);
    std::string f;
    std::vector<std::string> fields;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 5) throw IoError("map CSV: metadata line needs 5 fields");
    try {
      out.H = std::stoul(fields[0]);
      out.W = std::stoul(fields[1]);
      out.anchor = {std::stoul(fields[2]), std::stoul(fields[3])};
    } catch (const std::exception&) {
      throw IoError("map CSV: non-numeric metadata");
    }
    out.label = fields[4];
  }
  if (!out.H || !out.W) throw IoError("map CSV: zero extent");
  out.values = Tensor<double>({out.H, out.W});
  for (std::size_t i = 0; i < out.H; ++i) {
    if (!std::getline(in, line)) throw IoError("map CSV: expected " + std::to_string(out.H) + " rows");
    std::istringstream ls(line);
    std::string f;
    std::size_t j = 0;
    while (std::getline(ls, f, ',')) {
      if (j >= out.W) throw IoError("map CSV: row " + std::to_string(i) + " is too long");
      try {
        out.values.at(i, j++) = std::stod(f);
      } catch (const std::exception&) {
        throw IoError("map CSV: bad value '" + f + "'");
      }
    }
    if (j != out.W) throw IoError("map CSV: row " + std::to_string(i) + " is too short");
  }
  return out;
}

template DecayMap decay_map(const Model<float>&, const Tensor<float>&, const std::string&, ScanRoute, GridPoint);
template DecayMap decay_map(const Model<double>&, const Tensor<double>&, const std::string&, ScanRoute, GridPoint);

}  // namespace msvm
