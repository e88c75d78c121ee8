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

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "internal.h"
#include "tinyptq/error.h"
#include "tinyptq/layers.h"
#include "tinyptq/ptq.h"

namespace tinyptq {

namespace internal {

std::vector<int> last_uses(const Graph& graph) {
  std::vector<int> last(graph.layers.size() + 1, -1);
  for (int l = 0; l < graph.size(); ++l) {
    for (int e : graph.layers[static_cast<std::size_t>(l)].inputs) {
      last[static_cast<std::size_t>(e + 1)] = std::max(last[static_cast<std::size_t>(e + 1)], l);
    }
  }
  return last;
}

void advance(const Graph& graph, int first, int last, std::map<int, Tensor>& frontier,
             const ExecOptions& options, const std::vector<int>& last_use,
             const std::function<void(int, const Tensor&)>& on_output) {
  auto used_until = [&](int edge) { return last_use[static_cast<std::size_t>(edge + 1)]; };
  for (int l = first; l <= last; ++l) {
    const Layer& layer = graph.layers[static_cast<std::size_t>(l)];
    std::vector<Tensor> hooked;
    hooked.reserve(layer.inputs.size());
    std::vector<const Tensor*> inputs;
    for (int e : layer.inputs) {
      auto it = frontier.find(e);
      if (it == frontier.end()) {
        throw StateError("edge " + std::to_string(e) + " is not available for layer '" + layer.name + "'");
      }
      if (options.hook && options.hook->applies(e)) {
        hooked.push_back(options.hook->forward(e, it->second));
        inputs.push_back(&hooked.back());
      } else {
        inputs.push_back(&it->second);
      }
    }
    const Tensor* weight = &layer.weight;
    if (options.weights && !(*options.weights)[static_cast<std::size_t>(l)].empty()) {
      weight = &(*options.weights)[static_cast<std::size_t>(l)];
    }
    Tensor out = layer_forward(layer, inputs, *weight);
    if (on_output) on_output(l, out);
    for (int e : layer.inputs) {
      if (used_until(e) <= l) frontier.erase(e);
    }
    frontier[l] = std::move(out);
  }
  for (auto it = frontier.begin(); it != frontier.end();) {
    if (it->first != last && used_until(it->first) <= last) {
      it = frontier.erase(it);
    } else {
      ++it;
    }
  }
}

}  // namespace internal

Tensor QuantizedGraph::effective_weight(int layer) const {
  const WeightQuantizer& wq = weights.at(static_cast<std::size_t>(layer));
  return quantize(wq.latent, wq.q);
}

std::vector<Tensor> QuantizedGraph::effective_weights() const {
  std::vector<Tensor> out(graph.layers.size());
  for (int l = 0; l < graph.size(); ++l) {
    if (graph.layers[static_cast<std::size_t>(l)].has_weights()) out[static_cast<std::size_t>(l)] = effective_weight(l);
  }
  return out;
}

std::vector<std::int32_t> QuantizedGraph::weight_codes(int layer) const {
  const WeightQuantizer& wq = weights.at(static_cast<std::size_t>(layer));
  if (!wq.q.enabled()) throw StateError("layer " + std::to_string(layer) + " has no weight quantizer");
  std::vector<std::int32_t> codes(static_cast<std::size_t>(wq.latent.size()));
  for (std::int64_t i = 0; i < wq.latent.size(); ++i) {
    const auto g = static_cast<std::size_t>(group_of(i, wq.latent.shape(), wq.q.channel_axis));
    codes[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(
        quantize_code(wq.latent[i], wq.q.scale[g], wq.q.zero_point[g], wq.q.qmin, wq.q.qmax));
  }
  return codes;
}

Tensor QuantizedGraph::forward(const Tensor& input) const {
  const std::vector<Tensor> subs = effective_weights();
  ActivationHook hook(activations);
  return predict(graph, input, ExecOptions{&subs, &hook});
}

bool ActivationHook::applies(int edge) const {
  auto it = acts_.find(edge);
  return it != acts_.end() && it->second.q.enabled();
}

Tensor ActivationHook::forward(int edge, const Tensor& raw) const {
  return quantize(raw, acts_.at(edge).q);
}

Tensor ActivationHook::backward(int edge, const Tensor& raw, const Tensor& grad) {
  return ste_weight_grad(raw, grad, acts_.at(edge).q);
}

std::vector<int> activation_edges(const Graph& graph) {
  std::vector<int> edges;
  for (const Layer& layer : graph.layers) {
    if (!layer.has_weights() && layer.kind != LayerKind::kAdd) continue;
    for (int e : layer.inputs) {
      if (e != graph.output_edge() && std::find(edges.begin(), edges.end(), e) == edges.end()) {
        edges.push_back(e);
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

std::vector<OptimizationUnit> optimization_units(const Graph& graph, Granularity granularity) {
  std::vector<OptimizationUnit> units;
  auto weighted_in = [&](int first, int last) {
    std::vector<int> w;
    for (int l = first; l <= last; ++l) {
      if (graph.layers[static_cast<std::size_t>(l)].has_weights()) w.push_back(l);
    }
    return w;
  };
  int start = 0;
  if (granularity == Granularity::kLayer) {
    const auto consumers = graph.consumers();
    for (int l = 0; l < graph.size(); ++l) {
      const Layer& layer = graph.layers[static_cast<std::size_t>(l)];
      if (!layer.has_weights()) continue;
      int end = l;
      if (l + 1 < graph.size()) {
        const Layer& next = graph.layers[static_cast<std::size_t>(l + 1)];
        if (next.kind == LayerKind::kRelu && consumers[static_cast<std::size_t>(l + 1)] == std::vector<int>{l + 1}) {
          end = l + 1;
        }
      }
      units.push_back({layer.name, start, end, weighted_in(start, end)});
      start = end + 1;
      l = end;
    }
  } else {
    if (graph.blocks.empty()) throw ConfigError("graph '" + graph.name + "' has no block partition");
    std::vector<Block> blocks = graph.blocks;
    std::sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) { return a.first < b.first; });
    for (const Block& b : blocks) {
      if (b.last < start || weighted_in(b.first, b.last).empty()) continue;
      units.push_back({b.name, start, b.last, weighted_in(start, b.last)});
      start = b.last + 1;
    }
  }
  if (units.empty()) throw StructuralError("graph '" + graph.name + "' has no weighted layers");
  if (start < graph.size()) {
    units.back().last = graph.size() - 1;
    units.back().weighted = weighted_in(units.back().first, units.back().last);
  }
  return units;
}

namespace {

QuantizerState init_with(InitMethod method, std::span<const Tensor> samples,
                         const QuantizerState& tmpl, int grid_steps) {
  return method == InitMethod::kMse ? init_mse(samples, tmpl, grid_steps) : init_minmax(samples, tmpl);
}

}  // namespace

QuantizedGraph attach_and_init(const Graph& graph, const Tensor& calib,
                               const PipelineConfig& config) {
  config.validate();
  for (const Layer& l : graph.layers) {
    if (l.kind == LayerKind::kBatchNorm) {
      throw StructuralError("attach_and_init requires a folded graph; found batchnorm '" + l.name + "'");
    }
  }
  if (calib.rank() < 1 || calib.dim(0) < 1) throw ConfigError("calibration set is empty");
  if (calib.shape() != batched(calib.dim(0), graph.input_shape)) {
    throw StructuralError("calibration samples " + shape_string(calib.shape()) +
                          " do not match the input shape " + shape_string(graph.input_shape) +
                          " of '" + graph.name + "'");
  }

  QuantizedGraph qg;
  qg.graph = graph;
  qg.weights.resize(graph.layers.size());
  for (int l = 0; l < graph.size(); ++l) {
    const Layer& layer = graph.layers[static_cast<std::size_t>(l)];
    if (!layer.has_weights()) continue;
    WeightQuantizer& wq = qg.weights[static_cast<std::size_t>(l)];
    wq.latent = layer.weight;
    const QuantizerState tmpl =
        quantizer_template(Scheme::kSymmetric, config.weight_bits, layer.weight.rank() - 1);
    wq.q = tmpl.enabled()
               ? init_with(config.weight_init, std::span(&wq.latent, 1), tmpl, config.mse_grid_steps)
               : tmpl;
  }

  const std::vector<int> edges = activation_edges(graph);
  const QuantizerState tmpl = quantizer_template(Scheme::kAsymmetric, config.act_bits);
  for (int e : edges) qg.activations[e].q = tmpl;
  if (!tmpl.enabled()) return qg;

  auto init_edge = [&](int e, const Tensor& value) {
    auto it = qg.activations.find(e);
    if (it == qg.activations.end()) return;
    it->second.q = init_with(config.act_init, std::span(&value, 1), tmpl, config.mse_grid_steps);
  };
  init_edge(kGraphInput, calib);
  std::map<int, Tensor> frontier{{kGraphInput, calib}};
  internal::advance(graph, 0, graph.size() - 1, frontier, {}, internal::last_uses(graph), init_edge);
  return qg;
}

std::string RunLog::to_json() const {
  nlohmann::json j;
  j["entries"] = nlohmann::json::array();
  for (const RunLogEntry& e : entries) {
    j["entries"].push_back({{"step", e.step}, {"unit", e.unit}, {"iteration", e.iteration}, {"loss", e.loss}});
  }
  j["units"] = nlohmann::json::array();
  for (const UnitSummary& u : units) {
    j["units"].push_back({{"step", u.step},
                          {"unit", u.unit},
                          {"initial_loss", u.initial_loss},
                          {"final_loss", u.final_loss}});
  }
  return j.dump(2);
}

double output_mse(const QuantizedGraph& q, const Graph& fp, const Tensor& inputs) {
  constexpr std::int64_t kChunk = 128;
  double sse = 0.0;
  std::int64_t count = 0;
  for (std::int64_t b = 0; b < inputs.dim(0); b += kChunk) {
    const Tensor x = slice_rows(inputs, b, std::min(kChunk, inputs.dim(0) - b));
    const Tensor y = q.forward(x);
    sse += sum_squared_error(y, predict(fp, x));
    count += y.size();
  }
  return count ? sse / static_cast<double>(count) : 0.0;
}

}  // namespace tinyptq
