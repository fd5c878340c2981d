#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "msvm/analysis.hpp"
#include "msvm/arch.hpp"
#include "msvm/cli.hpp"
#include "msvm/errors.hpp"
#include "msvm/io.hpp"
#include "msvm/model.hpp"
#include "msvm/ms2d.hpp"
#include "msvm/routes.hpp"
#include "msvm/ssm.hpp"
#include "msvm/verify.hpp"

namespace py = pybind11;
using namespace msvm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
Array to_array(const Tensor<T>& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Json from_py(const py::object& o) { return Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>()); }

ArchSpec spec_of(const py::object& o) {
  if (py::isinstance<py::str>(o)) return resolve_arch(o.cast<std::string>());
  return arch_from_json(from_py(o));
}

SsmParams<double> ssm_of(const py::dict& d) {
  SsmParams<double> p{to_tensor<double>(d["a_log"].cast<Array>()),     to_tensor<double>(d["w_b"].cast<Array>()),
                      to_tensor<double>(d["w_c"].cast<Array>()),       to_tensor<double>(d["w_dt_down"].cast<Array>()),
                      to_tensor<double>(d["w_dt_up"].cast<Array>()),   to_tensor<double>(d["dt_bias"].cast<Array>()),
                      {}};
  if (d.contains("d_skip")) p.d_skip = to_tensor<double>(d["d_skip"].cast<Array>());
  return p;
}

py::dict ssm_dict(const SsmParams<double>& p) {
  py::dict d;
  d["a_log"] = to_array(p.a_log);
  d["w_b"] = to_array(p.w_b);
  d["w_c"] = to_array(p.w_c);
  d["w_dt_down"] = to_array(p.w_dt_down);
  d["w_dt_up"] = to_array(p.w_dt_up);
  d["dt_bias"] = to_array(p.dt_bias);
  if (p.has_skip()) d["d_skip"] = to_array(p.d_skip);
  return d;
}

}  // namespace

PYBIND11_MODULE(_msvm, m) {
  m.doc() = "Multi-scale selective-scan vision backbone: kernels, cost model and analysis";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("known_variants", &known_variants);
  m.def("arch", [](const py::object& v) { return to_py(arch_to_json(spec_of(v))); }, py::arg("variant"),
        "Architecture spec of a variant name, JSON path or dict, as a dict.");
  m.def("count_params", [](const py::object& v) { return count_params(spec_of(v)); }, py::arg("variant"));
  m.def(
      "count_flops",
      [](const py::object& v, std::size_t H, std::size_t W) {
        const CostReport c = count_flops(spec_of(v), H, W);
        py::dict d;
        d["macs"] = c.macs;
        d["spatial_macs"] = c.spatial_macs;
        d["fixed_macs"] = c.fixed_macs;
        d["s6_macs"] = c.s6_macs;
        d["scanned_tokens"] = c.scanned_tokens;
        return d;
      },
      py::arg("variant"), py::arg("height") = 224, py::arg("width") = 224);

  m.def(
      "init_ssm_params",
      [](std::size_t D, std::size_t N, std::uint64_t seed) {
        Rng rng(seed);
        return ssm_dict(init_ssm_params<double>(D, N, default_dt_rank(D), rng));
      },
      py::arg("channels"), py::arg("state_dim"), py::arg("seed") = 0);
  m.def(
      "selective_scan", [](const Array& u, const py::dict& p) { return to_array(selective_scan(to_tensor<double>(u), ssm_of(p))); },
      py::arg("u"), py::arg("params"), "Recurrent S6 scan of u [L, D].");
  m.def(
      "selective_kernel",
      [](const Array& u, const py::dict& p) { return to_array(build_selective_kernel(to_tensor<double>(u), ssm_of(p))); },
      py::arg("u"), py::arg("params"), "Materialized kernel K[d, n, m].");
  m.def(
      "apply_kernel", [](const Array& k, const Array& u) { return to_array(apply_kernel(to_tensor<double>(k), to_tensor<double>(u))); },
      py::arg("kernel"), py::arg("u"));

  m.def("route_names", [] {
    std::vector<std::string> n;
    for (ScanRoute r : kAllRoutes) n.push_back(route_name(r));
    return n;
  });
  m.def(
      "route_order", [](const std::string& r, std::size_t H, std::size_t W) { return route_order(parse_route(r), H, W); },
      py::arg("route"), py::arg("height"), py::arg("width"));
  m.def(
      "flatten", [](const std::string& r, const Array& z) { return to_array(flatten(parse_route(r), to_tensor<double>(z))); },
      py::arg("route"), py::arg("grid"));
  m.def(
      "unflatten",
      [](const std::string& r, const Array& x, std::size_t H, std::size_t W) {
        return to_array(unflatten(parse_route(r), to_tensor<double>(x), H, W));
      },
      py::arg("route"), py::arg("seq"), py::arg("height"), py::arg("width"));
  m.def(
      "min_route_distance",
      [](std::pair<std::size_t, std::size_t> a, std::pair<std::size_t, std::size_t> b, std::size_t H, std::size_t W) {
        return min_route_distance(kAllRoutes, {a.first, a.second}, {b.first, b.second}, H, W);
      },
      py::arg("src"), py::arg("dst"), py::arg("height"), py::arg("width"),
      "Minimum forward distance over the four routes, None if no route reaches dst after src.");
  m.def(
      "scan_cost",
      [](std::size_t H, std::size_t W, std::size_t n_full, std::size_t n_down, std::size_t stride) {
        const ScanCost c = scan_cost(H, W, Ms2dConfig::with_split(n_full, n_down, stride));
        py::dict d;
        d["full_tokens"] = c.full_tokens;
        d["down_tokens"] = c.down_tokens;
        d["total_tokens"] = c.total_tokens;
        d["ratio_vs_ss2d"] = c.ratio_vs_ss2d;
        return d;
      },
      py::arg("height"), py::arg("width"), py::arg("n_full") = 1, py::arg("n_down") = 3, py::arg("stride") = 2);
  m.def(
      "ss2d",
      [](const Array& z, const py::dict& p) {
        const std::vector<SsmParams<double>> shared{ssm_of(p)};
        return to_array(ss2d(to_tensor<double>(z), std::span<const SsmParams<double>>(shared)));
      },
      py::arg("grid"), py::arg("params"), "Four-route scan with one shared parameter group.");
  m.def(
      "decay_map",
      [](const Array& delta, const Array& a, const std::string& route, std::size_t h, std::size_t w,
         std::pair<std::size_t, std::size_t> anchor) {
        const DecayMap d = decay_map_from_scan(to_tensor<double>(delta), to_tensor<double>(a), parse_route(route), h, w,
                                               {anchor.first, anchor.second});
        return py::make_tuple(to_array(d.values), to_array(d.present));
      },
      py::arg("delta"), py::arg("a"), py::arg("route"), py::arg("height"), py::arg("width"), py::arg("anchor"),
      "Decay map (values, present) of one route from timescales delta [h*w, D] and A [D, N].");

  py::class_<Model<float>>(m, "Model")
      .def(py::init([](const py::object& v, std::uint64_t seed) { return Model<float>(spec_of(v), seed); }),
           py::arg("variant"), py::arg("seed") = 0)
      .def_static(
          "load",
          [](const py::object& v, const std::string& stem) { return Model<float>(spec_of(v), load_weights(stem)); },
          py::arg("variant"), py::arg("weights"))
      .def("save", [](const Model<float>& self, const std::string& stem) { save_weights(self.params(), stem); })
      .def_property_readonly("param_count", &Model<float>::param_count)
      .def_property_readonly("arch", [](const Model<float>& self) { return to_py(arch_to_json(self.spec())); })
      .def(
          "forward",
          [](const Model<float>& self, const Array& image) {
            const Tensor<float> x = to_tensor<float>(image);
            Tensor<float> logits;
            {
              py::gil_scoped_release release;
              logits = self.forward(x);
            }
            return to_array(logits);
          },
          py::arg("image"), "Logits for one [H, W, C] image.")
      .def("parameter_names", [](const Model<float>& self) {
        std::vector<std::string> names;
        for (const auto& [k, v] : self.params()) names.push_back(k);
        return names;
      });
  m.def(
      "verify",
      [](std::uint64_t seed, bool include_training) {
        VerifyOptions o;
        o.seed = seed;
        o.include_training = include_training;
        std::vector<SuiteResult> r;
        {
          py::gil_scoped_release release;
          r = run_verify(o);
        }
        return to_py(verify_report(r));
      },
      py::arg("seed") = 0, py::arg("include_training") = false);
  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "msvm");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the msvm command line; returns (exit_code, stdout, stderr).");
}
