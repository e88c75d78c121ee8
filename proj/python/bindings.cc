// Copyright (c) 2026 The tinyptq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "tinyptq/cli.h"
#include "tinyptq/error.h"
#include "tinyptq/io.h"
#include "tinyptq/metrics.h"
#include "tinyptq/models.h"
#include "tinyptq/ptq.h"

namespace py = pybind11;
using namespace tinyptq;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::dict stats_dict(const Graph& g, int bw, int ba) {
  const ModelStats s = model_stats(g);
  const CostReport r = cost_report(g, bw, ba);
  py::dict d;
  d["model"] = g.name;
  d["b_w"] = bw;
  d["b_a"] = ba;
  d["macs"] = s.macs;
  d["weight_macs"] = s.weight_macs;
  d["aux_ops"] = s.aux_ops;
  d["params"] = s.params;
  d["batchnorm_params"] = s.batchnorm_params;
  d["peak_activation"] = s.peak_activation;
  d["bop"] = r.bop;
  d["peak_memory_bytes"] = r.peak_memory_bytes;
  return d;
}

Graph load_graph(const std::string& model, const std::optional<std::string>& weights, std::uint64_t seed) {
  if (!weights) return build_model(model, nullptr, seed);
  const ParameterSet p = load_weights(*weights);
  return build_model(model, &p);
}

QuantizerState fitted_quantizer(const Array& x, int bits, bool symmetric, int channel_axis, const std::string& init) {
  const Tensor t = to_tensor(x);
  const Scheme scheme = symmetric ? Scheme::kSymmetric : Scheme::kAsymmetric;
  const int axis = channel_axis < 0 ? -1 : channel_axis;
  const QuantizerState tmpl = quantizer_template(scheme, bits, axis);
  const std::span<const Tensor> s(&t, 1);
  return parse_init(init) == InitMethod::kMse ? init_mse(s, tmpl) : init_minmax(s, tmpl);
}

// A quantized model held by Python.
struct PyQuantized {
  std::string model;
  PipelineConfig config;
  QuantizedGraph graph;
  std::string log_json;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Post-training quantization toolkit core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<StructuralError>(m, "StructuralError", PyExc_RuntimeError);

  m.def("model_names", &model_names);

  m.def(
      "model_stats",
      [](const std::string& model, int bits_w, int bits_a) { return stats_dict(build_model(model), bits_w, bits_a); },
      py::arg("model"), py::arg("bits_w") = 8, py::arg("bits_a") = 8);

  m.def("bop", &bop_count, py::arg("macs"), py::arg("bits_w"), py::arg("bits_a"));
  m.def("peak_memory_bytes", &peak_memory_bytes, py::arg("params"), py::arg("peak_activation"), py::arg("bits_w"),
        py::arg("bits_a"));

  m.def(
      "quantize_tensor",
      [](const Array& x, int bits, bool symmetric, int channel_axis, const std::string& init) {
        const QuantizerState q = fitted_quantizer(x, bits, symmetric, channel_axis, init);
        return py::make_tuple(to_array(quantize(to_tensor(x), q)), q.scale, q.zero_point);
      },
      py::arg("x"), py::arg("bits"), py::arg("symmetric") = false, py::arg("channel_axis") = -1,
      py::arg("init") = "minmax",
      "Fit a quantizer to x and fake-quantize it. Returns (values, scales, zero_points).");

  m.def(
      "predict",
      [](const std::string& model, const Array& inputs, std::optional<std::string> weights, std::uint64_t seed) {
        const Graph g = load_graph(model, weights, seed);
        const Tensor x = to_tensor(inputs);
        Tensor y;
        {
          py::gil_scoped_release release;
          y = predict(g, x);
        }
        return to_array(y);
      },
      py::arg("model"), py::arg("inputs"), py::arg("weights") = py::none(), py::arg("seed") = 0);

  m.def(
      "read_container",
      [](const std::string& path) {
        const TensorContainer c = load_container(path);
        py::dict d;
        for (const ContainerEntry& e : c.entries()) {
          if (e.dtype == DType::kU8) {
            d[py::str(e.name)] = py::bytes(reinterpret_cast<const char*>(e.payload.data()), e.payload.size());
          } else if (e.dtype == DType::kI32) {
            const std::vector<std::int32_t> v = e.to_i32();
            py::array_t<std::int32_t> a(std::vector<py::ssize_t>(e.dims.begin(), e.dims.end()));
            std::copy(v.begin(), v.end(), a.mutable_data());
            d[py::str(e.name)] = a;
          } else {
            d[py::str(e.name)] = to_array(e.to_tensor()).attr("astype")("float32");
          }
        }
        return d;
      },
      py::arg("path"), "Entries of a TQT1 file: float32 / int32 arrays and bytes.");

  m.def(
      "write_container",
      [](const std::string& path, const py::dict& entries) {
        TensorContainer c;
        for (const auto& [key, value] : entries) {
          const std::string name = py::cast<std::string>(key);
          if (py::isinstance<py::bytes>(value)) {
            c.add(ContainerEntry::text(name, py::cast<std::string>(value)));
            continue;
          }
          py::array arr = py::array::ensure(value);
          if (!arr) throw ConfigError("entry '" + name + "' is neither bytes nor an array");
          if (arr.dtype().kind() == 'i' || arr.dtype().kind() == 'u') {
            auto ints = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>::ensure(arr);
            std::vector<std::uint32_t> dims(ints.shape(), ints.shape() + ints.ndim());
            c.add(ContainerEntry::i32(name, dims, std::span(ints.data(), static_cast<std::size_t>(ints.size()))));
          } else {
            c.add(ContainerEntry::f32(name, to_tensor(Array::ensure(arr))));
          }
        }
        save_container(c, path);
      },
      py::arg("path"), py::arg("entries"),
      "Write a TQT1 file; integer arrays become i32, other arrays f32, bytes u8.");

  py::class_<PyQuantized>(m, "QuantizedModel")
      .def_readonly("model", &PyQuantized::model)
      .def_property_readonly("config", [](const PyQuantized& q) { return config_to_json(q.config); })
      .def_property_readonly("log", [](const PyQuantized& q) { return q.log_json; })
      .def(
          "forward",
          [](const PyQuantized& q, const Array& x) {
            const Tensor t = to_tensor(x);
            Tensor y;
            {
              py::gil_scoped_release release;
              y = q.graph.forward(t);
            }
            return to_array(y);
          },
          py::arg("inputs"))
      .def(
          "weight_codes",
          [](const PyQuantized& q, const std::string& layer) {
            for (int l = 0; l < q.graph.graph.size(); ++l) {
              if (q.graph.graph.layers[static_cast<std::size_t>(l)].name == layer) return q.graph.weight_codes(l);
            }
            throw ConfigError("no layer named '" + layer + "'");
          },
          py::arg("layer"))
      .def(
          "accuracy",
          [](const PyQuantized& q, const Array& x, const std::vector<std::int32_t>& labels) {
            return evaluate(q.graph, to_tensor(x), labels);
          },
          py::arg("inputs"), py::arg("labels"))
      .def("save", [](const PyQuantized& q, const std::string& path) { save_quantized(q.graph, q.model, q.config, path); },
           py::arg("path"));

  m.def(
      "quantize",
      [](const std::string& model, const Array& calib, const std::string& config_json,
         std::optional<std::string> weights, std::uint64_t weights_seed) {
        const PipelineConfig cfg = config_from_json(config_json);
        cfg.validate();
        const Graph g = load_graph(model, weights, weights_seed);
        const Tensor x = to_tensor(calib);
        PyQuantized out;
        {
          py::gil_scoped_release release;
          PipelineResult r = run_pipeline(g, x, cfg);
          out.graph = std::move(r.model);
          out.log_json = r.log.to_json();
        }
        out.model = model;
        out.config = cfg;
        return out;
      },
      py::arg("model"), py::arg("calib"), py::arg("config") = "{}", py::arg("weights") = py::none(),
      py::arg("weights_seed") = 0, "Run the pipeline; `config` is a JSON object of pipeline settings.");

  m.def(
      "load_quantized",
      [](const std::string& path) {
        LoadedQuantized l = load_quantized(load_container(path));
        PyQuantized q;
        q.model = l.model;
        q.config = l.config;
        q.graph = std::move(l.graph);
        return q;
      },
      py::arg("path"));

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full = {"tinyptq"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the command line in-process; returns (exit code, stdout, stderr).");
}
