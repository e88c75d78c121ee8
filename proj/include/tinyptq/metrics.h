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

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tinyptq/graph.h"

namespace tinyptq {

class QuantizedGraph;

struct LayerStats {
  std::string name;
  LayerKind kind = LayerKind::kRelu;
  /// Weight multiply-accumulates.
  std::int64_t macs = 0;
  /// Bias accumulations of conv/dwconv/conv1d outputs; average-pooling
  /// input and output elements.
  std::int64_t aux_ops = 0;
  /// Weights plus one bias per output channel; foldable batchnorm adds 0.
  std::int64_t params = 0;
  /// gamma, beta, mean, variance of a batchnorm layer.
  std::int64_t batchnorm_params = 0;
  std::int64_t output_elements = 0;
  /// Activation elements live while this layer runs.
  std::int64_t live_elements = 0;

  std::int64_t total_ops() const noexcept { return macs + aux_ops; }
};

// Per-sample statistics. Liveness: a buffer (the graph input included) lives
// from its producer to its last consumer. ReLU, batchnorm and flatten run in
// place when they are the sole consumer of their input; nothing else aliases.
struct ModelStats {
  std::vector<LayerStats> layers;
  std::int64_t weight_macs = 0;
  std::int64_t aux_ops = 0;
  /// weight_macs + aux_ops.
  std::int64_t macs = 0;
  std::int64_t params = 0;
  std::int64_t batchnorm_params = 0;
  std::int64_t peak_activation = 0;
};

ModelStats model_stats(const Graph& graph);

/// macs * b_w * b_a.
std::int64_t bop_count(std::int64_t macs, int weight_bits, int act_bits);

/// params * b_w + peak_activation * b_a.
std::int64_t peak_memory_bits(std::int64_t params, std::int64_t peak_activation, int weight_bits,
                              int act_bits);
/// Rounded up to whole bytes.
std::int64_t peak_memory_bytes(std::int64_t params, std::int64_t peak_activation, int weight_bits,
                               int act_bits);

/// Top-1 accuracy of `model` (a batch -> logits function), evaluated in
/// chunks in dataset order. Ties resolve to the lowest class index.
double evaluate(const std::function<Tensor(const Tensor&)>& model, const Tensor& inputs,
                std::span<const std::int32_t> labels, std::int64_t classes);
double evaluate(const Graph& graph, const Tensor& inputs, std::span<const std::int32_t> labels);
double evaluate(const QuantizedGraph& model, const Tensor& inputs,
                std::span<const std::int32_t> labels);

struct CostReport {
  std::string model;
  int b_w = 32;
  int b_a = 32;
  std::string strategy = "fp";
  std::string init = "minmax";
  bool cle = false;
  bool bias_tune = false;
  std::uint64_t seed = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::int64_t macs = 0;
  std::int64_t params = 0;
  std::int64_t peak_activation = 0;
  std::int64_t bop = 0;
  std::int64_t peak_memory_bytes = 0;
};

/// Cost fields of `graph` at the given bitwidths; config fields left default.
CostReport cost_report(const Graph& graph, int weight_bits, int act_bits);

struct Report {
  std::string csv;
  std::string json;
};

// CSV: one row per run. JSON: runs grouped by everything but the seed, with
// accuracy mean and sample standard deviation, and per group the tradeoff
// triple (accuracy drop against the model's 32/32 group, BOP and memory
// savings against 8W8A).
Report emit_report(std::span<const CostReport> runs);

}  // namespace tinyptq
