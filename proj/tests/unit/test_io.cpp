#include <filesystem>
#include <fstream>

#include "common.hpp"
#include "msvm/errors.hpp"
#include "msvm/io.hpp"

using namespace msvm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("msvm_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_CASE("weights round trip bitwise with a sorted manifest") {
  const fs::path dir = scratch("weights");
  const Model<float> m(build_arch("toy"), 1);
  save_weights(m.params(), dir / "model");
  CHECK(fs::exists(dir / "model.bin"));
  CHECK(fs::exists(dir / "model.json"));
  const ParamMap<float> back = load_weights(dir / "model");
  CHECK(back == m.params());

  const Json manifest = read_json(dir / "model.json");
  std::string prev;
  std::size_t offset = 0;
  for (const auto& t : manifest["tensors"]) {
    const std::string name = t["name"];
    CHECK(prev < name);
    prev = name;
    CHECK(t["offset"].get<std::size_t>() == offset);
    std::size_t n = 1;
    for (const auto& e : t["shape"]) n *= e.get<std::size_t>();
    offset += 4 * n;
  }
  CHECK(offset == fs::file_size(dir / "model.bin"));
  CHECK(manifest["total_bytes"].get<std::size_t>() == offset);
}

TEST_CASE("corrupt weight files are rejected") {
  const fs::path dir = scratch("corrupt");
  const Model<float> m(build_arch("toy"), 2);
  save_weights(m.params(), dir / "w");
  fs::resize_file(dir / "w.bin", fs::file_size(dir / "w.bin") - 4);
  CHECK_THROWS_AS(load_weights(dir / "w"), IoError);
  CHECK_THROWS_AS(load_weights(dir / "missing"), IoError);
  spit(dir / "bad.json", "{not json");
  spit(dir / "bad.bin", "");
  CHECK_THROWS_AS(load_weights(dir / "bad"), IoError);
}

TEST_CASE("architecture JSON") {
  for (const auto& v : known_variants()) {
    const ArchSpec s = build_arch(v);
    const ArchSpec back = arch_from_json(arch_to_json(s));
    CHECK(arch_to_json(back) == arch_to_json(s));
    CHECK(count_params(back) == count_params(s));
  }
  CHECK_THROWS_AS(arch_from_json(Json::parse(R"({"stage_dimz": [8]})")), ConfigError);
  CHECK_THROWS_AS(arch_from_json(Json::parse(R"({"ms2d": {"strid": 2}})")), ConfigError);
  CHECK_THROWS_AS(arch_from_json(Json::parse(R"({"variant": "nope"})")), ConfigError);
  CHECK_THROWS_AS(arch_from_json(Json::parse(R"({"stage_dims": "wide"})")), ConfigError);

  const ArchSpec s = arch_from_json(Json::parse(R"({"variant": "toy", "state_dim": 4})"));
  CHECK(s.state_dim == 4);
  CHECK(s.stage_dims == build_arch("toy").stage_dims);

  const fs::path dir = scratch("arch");
  write_json(dir / "a.json", arch_to_json(build_arch("micro")));
  CHECK(resolve_arch((dir / "a.json").string()).stage_dims == build_arch("micro").stage_dims);
  CHECK(resolve_arch("nano").name == "nano");
  CHECK_THROWS(resolve_arch((dir / "none.json").string()));
}

TEST_CASE("PGM and PPM") {
  const fs::path dir = scratch("img");
  const testutil::TD v({2, 3}, {0.0, 0.5, 1.0, 2.0, -1.0, 0.25});
  write_pgm(dir / "a.pgm", v);
  const auto g = read_pgm(dir / "a.pgm");
  REQUIRE(g.shape() == Shape{2, 3});
  CHECK(g.at(0, 0) == 0.0);
  CHECK(g.at(0, 2) == 255.0);
  CHECK(g.at(1, 0) == 255.0);  // clamped
  CHECK(g.at(1, 1) == 0.0);
  CHECK(std::abs(g.at(0, 1) - 127.5) <= 0.5);

  Tensor<float> rgb({3, 2, 3});
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<float>(i) / 17.0f;
  write_ppm(dir / "b.ppm", rgb);
  const auto back = read_ppm(dir / "b.ppm");
  REQUIRE(back.shape() == rgb.shape());
  for (std::size_t i = 0; i < rgb.size(); ++i) CHECK(std::abs(back[i] - rgb[i]) <= 0.5f / 255.0f + 1e-6f);

  spit(dir / "c.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_ppm(dir / "c.ppm"), IoError);
  spit(dir / "d.ppm", "P6\n2 2\n255\nabc");
  CHECK_THROWS_AS(read_ppm(dir / "d.ppm"), IoError);
  CHECK_THROWS_AS(read_pgm(dir / "nothing.pgm"), IoError);
}
