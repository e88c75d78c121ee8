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

#include "tinyptq/engine.h"

#include <algorithm>

#include "tinyptq/error.h"
#include "tinyptq/layers.h"

namespace tinyptq {

const Tensor& RangeTrace::raw(int edge) const {
  if (edge < first) {
    auto it = external.find(edge);
    if (it == external.end()) {
      throw StructuralError("edge " + std::to_string(edge) + " missing from range inputs");
    }
    return it->second;
  }
  if (edge > last) throw StructuralError("edge " + std::to_string(edge) + " lies after the range");
  return outputs[static_cast<std::size_t>(edge - first)];
}

const Tensor& RangeTrace::consumed(int edge) const {
  auto it = hooked.find(edge);
  return it != hooked.end() ? it->second : raw(edge);
}

std::vector<int> external_edges(const Graph& graph, int first, int last) {
  std::vector<int> edges;
  for (int l = first; l <= last; ++l) {
    for (int e : graph.layers[static_cast<std::size_t>(l)].inputs) {
      if (e < first && std::find(edges.begin(), edges.end(), e) == edges.end()) edges.push_back(e);
    }
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

namespace {

const Tensor& weight_for(const Graph& graph, int layer, const ExecOptions& options) {
  if (options.weights) {
    const Tensor& w = (*options.weights)[static_cast<std::size_t>(layer)];
    if (!w.empty()) return w;
  }
  return graph.layers[static_cast<std::size_t>(layer)].weight;
}

void check_range(const Graph& graph, int first, int last) {
  if (first < 0 || last >= graph.size() || first > last) {
    throw StructuralError("invalid layer range [" + std::to_string(first) + ", " +
                          std::to_string(last) + "] for graph '" + graph.name + "'");
  }
}

}  // namespace

RangeTrace forward_range(const Graph& graph, int first, int last, std::map<int, Tensor> external,
                         const ExecOptions& options) {
  check_range(graph, first, last);
  RangeTrace trace;
  trace.first = first;
  trace.last = last;
  trace.external = std::move(external);
  trace.outputs.reserve(static_cast<std::size_t>(last - first + 1));

  for (int l = first; l <= last; ++l) {
    const Layer& layer = graph.layers[static_cast<std::size_t>(l)];
    std::vector<const Tensor*> inputs;
    inputs.reserve(layer.inputs.size());
    for (int e : layer.inputs) {
      if (options.hook && options.hook->applies(e)) {
        auto it = trace.hooked.find(e);
        if (it == trace.hooked.end()) {
          it = trace.hooked.emplace(e, options.hook->forward(e, trace.raw(e))).first;
        }
        inputs.push_back(&it->second);
      } else {
        inputs.push_back(&trace.raw(e));
      }
    }
    trace.outputs.push_back(layer_forward(layer, inputs, weight_for(graph, l, options)));
  }
  return trace;
}

GraphGradients backward_range(const Graph& graph, const RangeTrace& trace, const Tensor& upstream,
                              unsigned wrt, const ExecOptions& options) {
  const int first = trace.first;
  const int last = trace.last;
  if (trace.outputs.size() != static_cast<std::size_t>(last - first + 1)) {
    throw StateError("backward requires a recorded forward pass");
  }
  if (upstream.shape() != trace.output().shape()) {
    throw StructuralError("upstream gradient shape " + shape_string(upstream.shape()) +
                          " does not match output " + shape_string(trace.output().shape()));
  }

  GraphGradients grads;
  grads.weights.resize(graph.layers.size());
  grads.biases.resize(graph.layers.size());

  // Gradient with respect to the consumed (possibly hooked) value of an edge.
  std::map<int, Tensor> consumed_grad;
  auto accumulate = [&](int edge, Tensor g) {
    auto it = consumed_grad.find(edge);
    if (it == consumed_grad.end()) {
      consumed_grad.emplace(edge, std::move(g));
    } else {
      for (std::int64_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  };
  auto to_raw = [&](int edge, Tensor g) {
    if (options.hook && options.hook->applies(edge)) {
      return options.hook->backward(edge, trace.raw(edge), g);
    }
    return g;
  };

  for (int l = last; l >= first; --l) {
    const Layer& layer = graph.layers[static_cast<std::size_t>(l)];
    const Tensor& out = trace.outputs[static_cast<std::size_t>(l - first)];
    Tensor g_out;
    if (auto it = consumed_grad.find(l); it != consumed_grad.end()) {
      g_out = to_raw(l, std::move(it->second));
      consumed_grad.erase(it);
    }
    if (l == last) {
      if (g_out.empty()) {
        g_out = upstream;
      } else {
        for (std::int64_t i = 0; i < g_out.size(); ++i) g_out[i] += upstream[i];
      }
    }
    const bool weighted = layer.has_weights();
    if (g_out.empty()) {
      // Output does not reach the loss.
      if (weighted && (wrt & kGradWeights)) grads.weights[static_cast<std::size_t>(l)] = Tensor(weight_for(graph, l, options).shape());
      if (weighted && (wrt & kGradBiases)) grads.biases[static_cast<std::size_t>(l)] = Tensor({layer.out_channels});
      continue;
    }

    bool need_inputs = (wrt & kGradInputs) != 0;
    for (int e : layer.inputs) {
      if (e >= first || (options.hook && options.hook->applies(e))) need_inputs = true;
    }
    std::vector<const Tensor*> inputs;
    for (int e : layer.inputs) inputs.push_back(&trace.consumed(e));
    GradRequest request;
    request.inputs = need_inputs;
    request.weight = weighted && (wrt & kGradWeights);
    request.bias = weighted && (wrt & kGradBiases);
    LayerGradients lg =
        layer_backward(layer, inputs, weight_for(graph, l, options), out, g_out, request);
    if (request.weight) grads.weights[static_cast<std::size_t>(l)] = std::move(lg.weight);
    if (request.bias) grads.biases[static_cast<std::size_t>(l)] = std::move(lg.bias);
    if (need_inputs) {
      for (std::size_t i = 0; i < layer.inputs.size(); ++i) {
        accumulate(layer.inputs[i], std::move(lg.inputs[i]));
      }
    }
  }

  for (auto& [edge, g] : consumed_grad) {
    Tensor raw_grad = to_raw(edge, std::move(g));
    if (wrt & kGradInputs) grads.inputs.emplace(edge, std::move(raw_grad));
  }
  return grads;
}

std::vector<Tensor> forward(const Graph& graph, const Tensor& input, bool record) {
  if (input.rank() < 1 || input.shape() != batched(input.dim(0), graph.input_shape)) {
    throw StructuralError("graph '" + graph.name + "' input: expected N x " +
                          shape_string(graph.input_shape) + ", got " + shape_string(input.shape()));
  }
  RangeTrace trace = forward_range(graph, 0, graph.size() - 1, {{kGraphInput, input}});
  if (record) return std::move(trace.outputs);
  return {std::move(trace.outputs.back())};
}

Tensor predict(const Graph& graph, const Tensor& input, const ExecOptions& options) {
  if (input.rank() < 1 || input.shape() != batched(input.dim(0), graph.input_shape)) {
    throw StructuralError("graph '" + graph.name + "' input: expected N x " +
                          shape_string(graph.input_shape) + ", got " + shape_string(input.shape()));
  }
  RangeTrace trace = forward_range(graph, 0, graph.size() - 1, {{kGraphInput, input}}, options);
  return std::move(trace.outputs.back());
}

Executor::Executor(const Graph& graph, ExecOptions options) : graph_(graph), options_(options) {}

std::vector<Tensor> Executor::forward(const Tensor& input, bool record) {
  if (input.rank() < 1 || input.shape() != batched(input.dim(0), graph_.input_shape)) {
    throw StructuralError("graph '" + graph_.name + "' input: expected N x " +
                          shape_string(graph_.input_shape) + ", got " +
                          shape_string(input.shape()));
  }
  RangeTrace trace =
      forward_range(graph_, 0, graph_.size() - 1, {{kGraphInput, input}}, options_);
  if (!record) {
    trace_.reset();
    return {std::move(trace.outputs.back())};
  }
  trace_ = std::move(trace);
  return trace_->outputs;
}

GraphGradients Executor::backward(const Tensor& upstream, unsigned wrt) {
  if (!trace_) throw StateError("backward called before a recorded forward pass");
  return backward_range(graph_, *trace_, upstream, wrt, options_);
}

}  // namespace tinyptq
