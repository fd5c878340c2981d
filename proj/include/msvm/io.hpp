#pragma once

// File formats: weight containers, JSON architecture configs, PGM/PPM images.

#include <filesystem>
#include <string>

#include "msvm/arch.hpp"
#include "msvm/model.hpp"
#include "json.hpp"

namespace msvm {

using Json = nlohmann::ordered_json;

// Weights are stored as `<stem>.bin` (little-endian f32, tensors concatenated in
// name order) and `<stem>.json` listing name, shape and byte offset of each tensor.
struct WeightFiles {
  std::filesystem::path bin, manifest;
  static WeightFiles at(const std::filesystem::path& stem);
};

void save_weights(const ParamMap<float>& params, const std::filesystem::path& stem);
ParamMap<float> load_weights(const std::filesystem::path& stem);

Json arch_to_json(const ArchSpec& spec);
// Strict: unknown keys, wrong types and invalid values are ConfigErrors. An optional
// "variant" key selects the named spec the remaining keys override.
ArchSpec arch_from_json(const Json& j);
ArchSpec load_arch(const std::filesystem::path& path);
// A known variant name or a path to a JSON config.
ArchSpec resolve_arch(const std::string& variant_or_path);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

// P2 greyscale; values are mapped linearly from [lo, hi] to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor<double>& image, double lo = 0.0, double hi = 1.0);
// Returns [H, W] with raw grey levels.
Tensor<double> read_pgm(const std::filesystem::path& path);

// P6 binary RGB, maxval <= 255; returns [H, W, 3] scaled to [0, 1].
Tensor<float> read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor<float>& rgb);

}  // namespace msvm
