#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "gatecrush/efficiency.hpp"
#include "gatecrush/latency.hpp"
#include "gatecrush/pipeline.hpp"
#include "gatecrush/wgates.hpp"

namespace py = pybind11;
using namespace gatecrush;

namespace {

GeometryTable geometry_for(const std::string& preset, int input_size) {
  auto spec = ArchitectureSpec::preset(preset);
  spec.input_size = input_size;
  return spec.geometry();
}

py::list geometry_rows(const std::string& preset, int input_size) {
  auto geom = geometry_for(preset, input_size);
  py::list rows;
  for (const auto& r : geom.rows) {
    py::dict d;
    d["name"] = r.name;
    d["kind"] = r.kind == LayerKind::Conv ? "conv"
                : r.kind == LayerKind::Projection ? "projection" : "linear";
    d["out_max"] = r.out_max;
    d["in_row"] = r.in_row;
    d["map_h"] = r.map_h;
    d["map_w"] = r.map_w;
    d["kernel"] = r.kernel;
    d["stride"] = r.stride;
    d["downsample"] = r.downsample;
    d["gated"] = r.gated;
    d["enc_index"] = r.enc_index;
    rows.append(d);
  }
  return rows;
}

int run_command_json(const std::string& name, const std::string& config_json) {
  auto cfg = RunConfig::from_json(nlohmann::json::parse(config_json));
  return run_command(name, cfg);
}

py::dict read_checkpoint_py(const std::string& path) {
  py::dict out;
  for (const auto& e : load_checkpoint(path)) {
    py::dict entry;
    entry["shape"] = e.shape;
    entry["values"] = e.values;
    out[py::str(e.name)] = entry;
  }
  return out;
}

py::tuple measure_decoded(const std::string& preset, int input_size, std::vector<int> encoding,
                          int batch_size, int warmup_runs, int timed_runs) {
  auto spec = ArchitectureSpec::preset(preset);
  spec.input_size = input_size;
  auto model = decode_network(spec, encoding, 1);
  TimingConfig cfg;
  cfg.batch_size = batch_size;
  cfg.warmup_runs = warmup_runs;
  cfg.timed_runs = timed_runs;
  auto m = measure_latency(model, cfg, 7);
  return py::make_tuple(m.median_ms, m.iqr_ms);
}

class PyLpNet {
 public:
  PyLpNet(const std::string& preset, int input_size)
      : geom_(geometry_for(preset, input_size)), net_(geom_) {}

  double fit(const std::vector<std::vector<int>>& encodings, const std::vector<double>& latencies,
             int epochs, uint64_t seed) {
    check(encodings.size() == latencies.size(), "lpnet.fit: length mismatch");
    std::vector<LatencySample> samples;
    for (size_t i = 0; i < encodings.size(); ++i)
      samples.push_back({encodings[i], latencies[i], 0.0});
    LpNetConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = seed;
    auto res = lpnet_train<float>(geom_, samples, cfg);
    net_ = std::move(res.net);
    return res.test_rel_error;
  }

  double predict(const std::vector<int>& encoding) const { return net_.predict(encoding); }
  void save(const std::string& path) const { net_.save(path); }
  void load(const std::string& path) { net_ = LpNet<float>::load(path, geom_); }

 private:
  GeometryTable geom_;
  LpNet<float> net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "gatecrush core: weight-dependent gates, efficiency models, prune pipeline";

  m.def("surrogate_lambda", [](double x) { return surrogate_lambda(x); },
        "piecewise-polynomial gate surrogate");
  m.def("surrogate_grad", [](double x) { return surrogate_grad(x); },
        "derivative of the gate surrogate");
  m.def("binary_activation",
        [](const std::vector<double>& s) { return binary_activation(s); },
        "hard (sign(x)+1)/2 gates; sign(0) keeps the filter");

  m.def("presets", [] { return ArchitectureSpec::preset_names(); });
  m.def("geometry", &geometry_rows, py::arg("preset"), py::arg("input_size") = 32);
  m.def("encoding_length", [](const std::string& preset, int input_size) {
    return geometry_for(preset, input_size).encoding_length;
  }, py::arg("preset"), py::arg("input_size") = 32);
  m.def("full_width_encoding", [](const std::string& preset, int input_size) {
    return geometry_for(preset, input_size).full_width_encoding();
  }, py::arg("preset"), py::arg("input_size") = 32);

  m.def("flops_network", [](const std::string& preset, int input_size, std::vector<int> counts) {
    return flops_network_exact(geometry_for(preset, input_size), counts);
  }, py::arg("preset"), py::arg("input_size"), py::arg("counts"));
  m.def("flops_breakdown", [](const std::string& preset, int input_size, std::vector<int> counts) {
    return flops_breakdown(geometry_for(preset, input_size), counts);
  });

  m.def("sample_encodings", [](const std::string& preset, int input_size, int n, uint64_t seed) {
    return sample_encodings(geometry_for(preset, input_size), n, seed);
  }, py::arg("preset"), py::arg("input_size"), py::arg("n"), py::arg("seed"));

  m.def("measure_latency", &measure_decoded, py::arg("preset"), py::arg("input_size"),
        py::arg("encoding"), py::arg("batch_size") = 16, py::arg("warmup_runs") = 5,
        py::arg("timed_runs") = 30,
        "decode an encoding and measure median/IQR forward latency in ms");

  py::class_<PyLpNet>(m, "LpNet")
      .def(py::init<const std::string&, int>(), py::arg("preset"), py::arg("input_size") = 32)
      .def("fit", &PyLpNet::fit, py::arg("encodings"), py::arg("latencies"),
           py::arg("epochs") = 300, py::arg("seed") = 0,
           "train on (encoding, latency_ms) pairs; returns held-out relative error")
      .def("predict", &PyLpNet::predict)
      .def("save", &PyLpNet::save)
      .def("load", &PyLpNet::load);

  m.def("run", &run_command_json, py::arg("command"), py::arg("config_json"),
        "run a pipeline command (train-baseline, collect-latency, train-lpnet, prune, "
        "finetune, flops, report) with a json config string; returns the exit code");

  m.def("read_checkpoint", &read_checkpoint_py, py::arg("path"),
        "checkpoint contents as {name: {shape, values}}");

  m.attr("__version__") = "0.1.0";
}
