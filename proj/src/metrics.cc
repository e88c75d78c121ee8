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

#include "tinyptq/metrics.h"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "tinyptq/engine.h"
#include "tinyptq/error.h"
#include "tinyptq/ptq.h"

namespace tinyptq {

namespace {

const Shape& input_shape_of(const Graph& g, const std::vector<Shape>& shapes, int edge) {
  return edge == kGraphInput ? g.input_shape : shapes[static_cast<std::size_t>(edge)];
}

}  // namespace

ModelStats model_stats(const Graph& graph) {
  const std::vector<Shape> shapes = graph.infer_shapes();
  const auto consumers = graph.consumers();
  ModelStats s;
  // Buffers, indexed by edge + 1. Elementwise unary layers and flatten reuse
  // the buffer of an input they are the sole consumer of.
  const std::size_t edges = graph.layers.size() + 1;
  std::vector<std::size_t> buffer(edges);
  std::vector<int> buffer_start(edges, -1), buffer_end(edges, -1);
  std::vector<std::int64_t> buffer_size(edges, 0);
  buffer[0] = 0;
  buffer_size[0] = num_elements(graph.input_shape);
  for (int l = 0; l < graph.size(); ++l) {
    const Layer& layer = graph.layers[static_cast<std::size_t>(l)];
    const auto self = static_cast<std::size_t>(l + 1);
    const auto src = static_cast<std::size_t>(layer.inputs.front() + 1);
    const bool in_place = (layer.kind == LayerKind::kRelu || layer.kind == LayerKind::kBatchNorm ||
                           layer.kind == LayerKind::kFlatten) &&
                          consumers[src].size() == 1;
    if (in_place) {
      buffer[self] = buffer[src];
    } else {
      buffer[self] = self;
      buffer_start[self] = l;
      buffer_size[self] = num_elements(shapes[static_cast<std::size_t>(l)]);
    }
    buffer_end[buffer[self]] = std::max(buffer_end[buffer[self]], l);
    for (int e : layer.inputs) {
      const std::size_t b = buffer[static_cast<std::size_t>(e + 1)];
      buffer_end[b] = std::max(buffer_end[b], l);
    }
  }
  for (int l = 0; l < graph.size(); ++l) {
    const Layer& layer = graph.layers[static_cast<std::size_t>(l)];
    LayerStats st;
    st.name = layer.name;
    st.kind = layer.kind;
    const Shape& out = shapes[static_cast<std::size_t>(l)];
    st.output_elements = num_elements(out);
    const Shape& in = input_shape_of(graph, shapes, layer.inputs.front());
    switch (layer.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kConv1d:
        st.macs = st.output_elements * (layer.weight.size() / layer.weight.shape().back());
        st.aux_ops = st.output_elements;
        break;
      case LayerKind::kDepthwiseConv2d:
        st.macs = st.output_elements * std::int64_t{layer.kernel_h} * layer.kernel_w;
        st.aux_ops = st.output_elements;
        break;
      case LayerKind::kFullyConnected:
        st.macs = layer.weight.size();
        break;
      case LayerKind::kAvgPool:
        st.aux_ops = num_elements(in) + st.output_elements;
        break;
      case LayerKind::kBatchNorm: {
        const std::int64_t c = in.back();
        st.batchnorm_params = 4 * c;
        const int src = layer.inputs.front();
        const bool foldable = src >= 0 && graph.layers[static_cast<std::size_t>(src)].has_weights() &&
                              consumers[static_cast<std::size_t>(src + 1)].size() == 1;
        if (!foldable) st.params = 4 * c;
        break;
      }
      default:
        break;
    }
    if (layer.has_weights()) st.params = layer.weight.size() + layer.weight.shape().back();

    // Live buffers while layer l runs, the graph input included.
    std::int64_t live = 0;
    for (std::size_t b = 0; b < edges; ++b) {
      if (buffer[b] == b && buffer_start[b] <= l && buffer_end[b] >= l) live += buffer_size[b];
    }
    st.live_elements = live;

    s.weight_macs += st.macs;
    s.aux_ops += st.aux_ops;
    s.params += st.params;
    s.batchnorm_params += st.batchnorm_params;
    s.peak_activation = std::max(s.peak_activation, live);
    s.layers.push_back(std::move(st));
  }
  s.macs = s.weight_macs + s.aux_ops;
  return s;
}

std::int64_t bop_count(std::int64_t macs, int weight_bits, int act_bits) {
  return macs * weight_bits * act_bits;
}

std::int64_t peak_memory_bits(std::int64_t params, std::int64_t peak_activation, int weight_bits,
                              int act_bits) {
  return params * weight_bits + peak_activation * act_bits;
}

std::int64_t peak_memory_bytes(std::int64_t params, std::int64_t peak_activation, int weight_bits,
                               int act_bits) {
  return (peak_memory_bits(params, peak_activation, weight_bits, act_bits) + 7) / 8;
}

double evaluate(const std::function<Tensor(const Tensor&)>& model, const Tensor& inputs,
                std::span<const std::int32_t> labels, std::int64_t classes) {
  if (inputs.rank() < 1 || inputs.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw StructuralError("dataset has " + std::to_string(inputs.rank() ? inputs.dim(0) : 0) + " inputs but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw StructuralError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                            " is outside [0, " + std::to_string(classes) + ")");
    }
  }
  if (labels.empty()) return 0.0;
  constexpr std::int64_t kChunk = 128;
  std::int64_t correct = 0;
  for (std::int64_t b = 0; b < inputs.dim(0); b += kChunk) {
    const std::int64_t n = std::min(kChunk, inputs.dim(0) - b);
    const Tensor y = model(slice_rows(inputs, b, n));
    if (y.rank() != 2 || y.dim(0) != n || y.dim(1) != classes) {
      throw StructuralError("model output " + shape_string(y.shape()) + " is not a batch of " +
                            std::to_string(classes) + " logits");
    }
    for (std::int64_t i = 0; i < n; ++i) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < classes; ++c) {
        if (y[i * classes + c] > y[i * classes + best]) best = c;
      }
      correct += best == labels[static_cast<std::size_t>(b + i)] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace {

std::int64_t class_count(const Graph& g) {
  const Shape out = g.output_shape();
  if (out.size() != 1) throw StructuralError("model '" + g.name + "' does not produce a logit vector");
  return out[0];
}

}  // namespace

double evaluate(const Graph& graph, const Tensor& inputs, std::span<const std::int32_t> labels) {
  return evaluate([&](const Tensor& x) { return predict(graph, x); }, inputs, labels, class_count(graph));
}

double evaluate(const QuantizedGraph& model, const Tensor& inputs, std::span<const std::int32_t> labels) {
  return evaluate([&](const Tensor& x) { return model.forward(x); }, inputs, labels,
                  class_count(model.graph));
}

CostReport cost_report(const Graph& graph, int weight_bits, int act_bits) {
  const ModelStats s = model_stats(graph);
  CostReport r;
  r.model = graph.name;
  r.b_w = weight_bits;
  r.b_a = act_bits;
  r.macs = s.macs;
  r.params = s.params;
  r.peak_activation = s.peak_activation;
  r.bop = bop_count(s.macs, weight_bits, act_bits);
  r.peak_memory_bytes = peak_memory_bytes(s.params, s.peak_activation, weight_bits, act_bits);
  return r;
}

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

using GroupKey = std::tuple<std::string, int, int, std::string, std::string, bool, bool>;

GroupKey key_of(const CostReport& r) {
  return {r.model, r.b_w, r.b_a, r.strategy, r.init, r.cle, r.bias_tune};
}

struct Summary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;
};

// Mean and sample (n - 1) standard deviation over the non-NaN values; a
// single value has std 0.
Summary summarize(const std::vector<double>& values) {
  Summary s;
  std::vector<double> v;
  for (double x : values) {
    if (!std::isnan(x)) v.push_back(x);
  }
  s.count = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace

Report emit_report(std::span<const CostReport> runs) {
  Report out;
  std::ostringstream csv;
  csv << "model,b_w,b_a,strategy,init,cle,bias_tune,seed,accuracy,macs,params,peak_activation,bop,peak_memory_bytes\n";
  for (const CostReport& r : runs) {
    csv << csv_field(r.model) << ',' << r.b_w << ',' << r.b_a << ',' << csv_field(r.strategy) << ','
        << csv_field(r.init) << ',' << (r.cle ? 1 : 0) << ',' << (r.bias_tune ? 1 : 0) << ',' << r.seed << ','
        << format_double(r.accuracy) << ',' << r.macs << ',' << r.params << ',' << r.peak_activation << ','
        << r.bop << ',' << r.peak_memory_bytes << '\n';
  }
  out.csv = csv.str();

  // Groups in first-appearance order.
  std::vector<GroupKey> order;
  std::map<GroupKey, std::vector<const CostReport*>> groups;
  for (const CostReport& r : runs) {
    auto [it, inserted] = groups.try_emplace(key_of(r));
    if (inserted) order.push_back(it->first);
    it->second.push_back(&r);
  }
  std::map<std::string, double> fp_accuracy;
  for (const GroupKey& k : order) {
    const auto& members = groups.at(k);
    const CostReport& r = *members.front();
    if (r.b_w == 32 && r.b_a == 32 && !fp_accuracy.count(r.model)) {
      std::vector<double> acc;
      for (const CostReport* m : members) acc.push_back(m->accuracy);
      fp_accuracy[r.model] = summarize(acc).mean;
    }
  }

  nlohmann::json j;
  j["groups"] = nlohmann::json::array();
  for (const GroupKey& k : order) {
    const auto& members = groups.at(k);
    const CostReport& r = *members.front();
    std::vector<double> acc;
    nlohmann::json seeds = nlohmann::json::array();
    for (const CostReport* m : members) {
      acc.push_back(m->accuracy);
      seeds.push_back(m->seed);
    }
    const Summary s = summarize(acc);
    const double bop8 = static_cast<double>(bop_count(r.macs, 8, 8));
    const double mem8 = static_cast<double>(peak_memory_bits(r.params, r.peak_activation, 8, 8));
    const double bop_saving = bop8 > 0 ? 1.0 - static_cast<double>(r.bop) / bop8 : 0.0;
    const double mem_saving =
        mem8 > 0 ? 1.0 - static_cast<double>(peak_memory_bits(r.params, r.peak_activation, r.b_w, r.b_a)) / mem8 : 0.0;
    auto fp = fp_accuracy.find(r.model);
    const double drop = fp == fp_accuracy.end() ? std::numeric_limits<double>::quiet_NaN() : fp->second - s.mean;
    j["groups"].push_back({{"model", r.model},
                           {"b_w", r.b_w},
                           {"b_a", r.b_a},
                           {"strategy", r.strategy},
                           {"init", r.init},
                           {"cle", r.cle},
                           {"bias_tune", r.bias_tune},
                           {"seeds", seeds},
                           {"runs", members.size()},
                           {"accuracy_mean", number_or_null(s.mean)},
                           {"accuracy_std", number_or_null(s.std)},
                           {"macs", r.macs},
                           {"params", r.params},
                           {"peak_activation", r.peak_activation},
                           {"bop", r.bop},
                           {"peak_memory_bytes", r.peak_memory_bytes},
                           {"tradeoff",
                            {{"accuracy_drop", number_or_null(drop)},
                             {"bop_saving", bop_saving},
                             {"memory_saving", mem_saving}}}});
  }
  out.json = j.dump(2);
  return out;
}

}  // namespace tinyptq
