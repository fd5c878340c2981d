#include "msvm/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "msvm/errors.hpp"

namespace msvm {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "weight files are little-endian f32");

WeightFiles WeightFiles::at(const fs::path& stem) {
  fs::path bin = stem, manifest = stem;
  bin += ".bin";
  manifest += ".json";
  return {bin, manifest};
}

void save_weights(const ParamMap<float>& params, const fs::path& stem) {
  const auto files = WeightFiles::at(stem);
  std::ofstream bin(files.bin, std::ios::binary);
  if (!bin) throw IoError("cannot write " + files.bin.string());
  Json tensors = Json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {  // std::map iterates in name order
    bin.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  if (!bin) throw IoError("write failed for " + files.bin.string());
  write_json(files.manifest, {{"dtype", "f32"}, {"byte_order", "little"}, {"total_bytes", offset}, {"tensors", tensors}});
}

ParamMap<float> load_weights(const fs::path& stem) {
  const auto files = WeightFiles::at(stem);
  const Json manifest = read_json(files.manifest);
  std::ifstream bin(files.bin, std::ios::binary);
  if (!bin) throw IoError("cannot read " + files.bin.string());
  const std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  ParamMap<float> out;
  try {
    if (manifest.at("dtype") != "f32") throw IoError(files.manifest.string() + ": only f32 weights are supported");
    for (const auto& e : manifest.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (offset + n * sizeof(float) > bytes.size())
        throw IoError(files.bin.string() + ": tensor '" + name + "' extends past the end of the file");
      std::vector<float> data(n);
      std::memcpy(data.data(), bytes.data() + offset, n * sizeof(float));
      if (!out.emplace(name, Tensor<float>(shape, std::move(data))).second)
        throw IoError(files.manifest.string() + ": duplicate tensor '" + name + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(files.manifest.string() + ": malformed manifest: " + ex.what());
  }
  return out;
}

Json arch_to_json(const ArchSpec& s) {
  Json routes_full = Json::array(), routes_down = Json::array();
  for (auto r : s.ms2d.full_routes) routes_full.push_back(route_name(r));
  for (auto r : s.ms2d.down_routes) routes_down.push_back(route_name(r));
  return {{"name", s.name},
          {"in_channels", s.in_channels},
          {"stem_dim", s.stem_dim},
          {"stem_patch", s.stem_patch},
          {"stage_depths", s.stage_depths},
          {"stage_dims", s.stage_dims},
          {"state_dim", s.state_dim},
          {"mixer", mixer_name(s.mixer)},
          {"ms2d", {{"stride", s.ms2d.stride}, {"full_routes", routes_full}, {"down_routes", routes_down}}},
          {"use_se", s.use_se},
          {"use_convffn", s.use_convffn},
          {"gated", s.gated},
          {"ssm_ratio", s.ssm_ratio},
          {"ffn_ratio", s.ffn_ratio},
          {"se_reduction", s.se_reduction},
          {"dt_rank", s.dt_rank},
          {"num_classes", s.num_classes}};
}

namespace {

template <typename V>
V field(const Json& j, const std::string& key) {
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::size_t positive(const Json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

std::vector<ScanRoute> routes(const Json& j, const std::string& key) {
  std::vector<ScanRoute> out;
  for (const auto& name : field<std::vector<std::string>>(j, key)) out.push_back(parse_route(name));
  return out;
}

}  // namespace

ArchSpec arch_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("architecture config must be a JSON object");
  static const std::set<std::string> keys{"variant",  "name",      "in_channels", "stem_dim",    "stem_patch",
                                          "stage_depths", "stage_dims", "state_dim", "mixer",   "ms2d",
                                          "use_se",   "use_convffn", "gated",     "ssm_ratio",   "ffn_ratio",
                                          "se_reduction", "dt_rank",  "num_classes"};
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw ConfigError("unknown config key '" + k + "'");

  ArchSpec s = j.contains("variant") ? build_arch(field<std::string>(j, "variant")) : ArchSpec{};
  if (j.contains("name")) s.name = field<std::string>(j, "name");
  for (auto [key, dst] : {std::pair{"in_channels", &s.in_channels}, {"stem_dim", &s.stem_dim},
                          {"stem_patch", &s.stem_patch}, {"state_dim", &s.state_dim}, {"ssm_ratio", &s.ssm_ratio},
                          {"ffn_ratio", &s.ffn_ratio}, {"se_reduction", &s.se_reduction}, {"dt_rank", &s.dt_rank},
                          {"num_classes", &s.num_classes}})
    if (j.contains(key)) *dst = positive(j, key);
  if (j.contains("stage_depths")) s.stage_depths = field<std::vector<std::size_t>>(j, "stage_depths");
  if (j.contains("stage_dims")) s.stage_dims = field<std::vector<std::size_t>>(j, "stage_dims");
  for (auto [key, dst] : {std::pair{"use_se", &s.use_se}, {"use_convffn", &s.use_convffn}, {"gated", &s.gated}})
    if (j.contains(key)) *dst = field<bool>(j, key);
  if (j.contains("mixer")) {
    const auto m = field<std::string>(j, "mixer");
    if (m == "ms2d") s.mixer = TokenMixer::ms2d;
    else if (m == "ss2d") s.mixer = TokenMixer::ss2d;
    else throw ConfigError("unknown mixer '" + m + "' (expected ms2d or ss2d)");
  }
  if (j.contains("ms2d")) {
    const Json& m = j.at("ms2d");
    if (!m.is_object()) throw ConfigError("config key 'ms2d' must be an object");
    for (const auto& [k, v] : m.items())
      if (k != "stride" && k != "full_routes" && k != "down_routes") throw ConfigError("unknown config key 'ms2d." + k + "'");
    if (m.contains("stride")) s.ms2d.stride = positive(m, "stride");
    if (m.contains("full_routes")) s.ms2d.full_routes = routes(m, "full_routes");
    if (m.contains("down_routes")) s.ms2d.down_routes = routes(m, "down_routes");
  }
  s.validate();
  return s;
}

ArchSpec load_arch(const fs::path& path) { return arch_from_json(read_json(path)); }

ArchSpec resolve_arch(const std::string& variant_or_path) {
  const auto names = known_variants();
  if (std::find(names.begin(), names.end(), variant_or_path) != names.end()) return build_arch(variant_or_path);
  if (fs::exists(variant_or_path)) return load_arch(variant_or_path);
  return build_arch(variant_or_path);  // raises the unknown-variant error
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& ex) {
    throw IoError(path.string() + ": " + ex.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_pgm(const fs::path& path, const Tensor<double>& image, double lo, double hi) {
  if (image.rank() != 2) throw DimensionError("write_pgm: expected [H, W], got " + shape_str(image.shape()));
  if (!(hi > lo)) throw DomainError("write_pgm: empty value range");
  std::ostringstream os;
  const std::size_t H = image.extent(0), W = image.extent(1);
  os << "P2\n" << W << " " << H << "\n255\n";
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const double v = std::clamp((image.at(i, j) - lo) / (hi - lo), 0.0, 1.0);
      os << (j ? " " : "") << static_cast<int>(std::lround(v * 255.0));
    }
    os << "\n";
  }
  write_text(path, os.str());
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const fs::path& path) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  if (tok.empty()) throw IoError(path.string() + ": truncated header");
  return tok;
}

std::size_t header_number(std::istream& in, const fs::path& path) {
  const std::string tok = header_token(in, path);
  if (tok.find_first_not_of("0123456789") != std::string::npos)
    throw IoError(path.string() + ": bad header field '" + tok + "'");
  return std::stoul(tok);
}

}  // namespace

Tensor<double> read_pgm(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  if (header_token(in, path) != "P2") throw IoError(path.string() + ": not a P2 PGM file");
  const std::size_t W = header_number(in, path), H = header_number(in, path);
  header_number(in, path);
  if (!W || !H) throw IoError(path.string() + ": zero image extent");
  Tensor<double> out({H, W});
  for (auto& v : out.data()) v = static_cast<double>(header_number(in, path));
  return out;
}

Tensor<float> read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  if (header_token(in, path) != "P6") throw IoError(path.string() + ": not a P6 PPM file");
  const std::size_t W = header_number(in, path), H = header_number(in, path), maxval = header_number(in, path);
  if (!W || !H) throw IoError(path.string() + ": zero image extent");
  if (maxval == 0 || maxval > 255) throw IoError(path.string() + ": unsupported maxval " + std::to_string(maxval));
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> raster(H * W * 3);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (static_cast<std::size_t>(in.gcount()) != raster.size()) throw IoError(path.string() + ": truncated raster");
  Tensor<float> out({H, W, 3});
  for (std::size_t i = 0; i < raster.size(); ++i) out[i] = static_cast<float>(raster[i]) / static_cast<float>(maxval);
  return out;
}

void write_ppm(const fs::path& path, const Tensor<float>& rgb) {
  if (rgb.rank() != 3 || rgb.extent(2) != 3) throw DimensionError("write_ppm: expected [H, W, 3], got " + shape_str(rgb.shape()));
  std::string s = "P6\n" + std::to_string(rgb.extent(1)) + " " + std::to_string(rgb.extent(0)) + "\n255\n";
  for (float v : rgb.data()) s.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  write_text(path, s);
}

}  // namespace msvm
