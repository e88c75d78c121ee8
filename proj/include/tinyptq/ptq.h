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
#include <map>
#include <string>
#include <vector>

#include "tinyptq/config.h"
#include "tinyptq/engine.h"
#include "tinyptq/graph.h"
#include "tinyptq/quantizer.h"

namespace tinyptq {

// Weight quantizer of one layer. `latent` is the continuous weight the
// quantizer is applied to; strategies that settle on integer codes store
// latent = s * code so that quantize(latent) == latent.
struct WeightQuantizer {
  QuantizerState q;
  Tensor latent;
  bool frozen = false;
};

struct ActivationQuantizer {
  QuantizerState q;
  bool frozen = false;
};

// A folded full-precision graph with simulated quantizers attached: one
// symmetric per-channel quantizer per weighted layer and one asymmetric
// per-tensor quantizer per quantized activation edge.
class QuantizedGraph {
 public:
  Graph graph;
  std::vector<WeightQuantizer> weights;  // indexed by layer
  std::map<int, ActivationQuantizer> activations;  // keyed by edge

  Tensor effective_weight(int layer) const;
  /// Per-layer substitutes for ExecOptions::weights (empty for unweighted).
  std::vector<Tensor> effective_weights() const;
  /// Integer codes clamp(round(w / s), n, p) of a weighted layer.
  std::vector<std::int32_t> weight_codes(int layer) const;

  Tensor forward(const Tensor& input) const;
};

// Applies fixed activation quantizers with straight-through backward.
class ActivationHook : public EdgeHook {
 public:
  explicit ActivationHook(const std::map<int, ActivationQuantizer>& acts) : acts_(acts) {}
  bool applies(int edge) const override;
  Tensor forward(int edge, const Tensor& raw) const override;
  Tensor backward(int edge, const Tensor& raw, const Tensor& grad) override;

 private:
  const std::map<int, ActivationQuantizer>& acts_;
};

/// Edges read by a weighted or add layer, including the graph input. The
/// final output is never quantized.
std::vector<int> activation_edges(const Graph& graph);

// Contiguous layer range optimized jointly.
struct OptimizationUnit {
  std::string name;
  int first = 0;
  int last = 0;
  std::vector<int> weighted;
};

/// Layerwise: every weighted layer (with a directly following ReLU that is
/// its sole consumer) closes a unit. Blockwise: the graph's block partition.
/// Layers without weights join the next unit; trailing ones the last.
std::vector<OptimizationUnit> optimization_units(const Graph& graph, Granularity granularity);

struct ClePair {
  int first = 0;
  int second = 0;
};

struct CleReport {
  std::vector<ClePair> pairs;
  int passes = 0;
};

/// Per-channel weight range max|W| over everything but the given channel
/// axis of `layer` (output channels when `input_side` is false).
std::vector<double> channel_ranges(const Layer& layer, bool input_side);

/// Cross-layer equalization of conv2d/dwconv2d pairs joined by a ReLU with
/// no branch. Requires a batchnorm-free graph. Passes repeat until every
/// pair is balanced.
Graph cle_equalize(const Graph& graph, CleReport* report = nullptr);

/// Attaches quantizers to a batchnorm-free graph and initializes them:
/// weights from the weight tensors, activations from full-precision
/// activations over `calib` (N x input shape).
QuantizedGraph attach_and_init(const Graph& graph, const Tensor& calib,
                               const PipelineConfig& config);

struct RunLogEntry {
  std::string step;
  std::string unit;
  int iteration = 0;
  double loss = 0.0;
};

struct UnitSummary {
  std::string step;
  std::string unit;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct RunLog {
  std::vector<RunLogEntry> entries;
  std::vector<UnitSummary> units;

  std::string to_json() const;
};

/// Unit-by-unit reconstruction. `fp` is the graph the quantizers were
/// attached to (its weights are the reconstruction reference).
QuantizedGraph optimize(QuantizedGraph qgraph, const Graph& fp, const Tensor& calib,
                        const PipelineConfig& config, RunLog* log = nullptr);

/// End-to-end tuning of all biases against the full-precision output.
QuantizedGraph bias_tune(QuantizedGraph qgraph, const Graph& fp, const Tensor& calib,
                         const PipelineConfig& config, RunLog* log = nullptr);

struct PipelineResult {
  QuantizedGraph model;
  /// Folded (and equalized, with CLE) full-precision reference.
  Graph reference;
  RunLog log;
};

/// fold_batchnorm -> [cle_equalize] -> attach_and_init -> optimize ->
/// [bias_tune]. Uses at most config.calib_size samples of `calib`, chosen
/// by a seeded permutation.
PipelineResult run_pipeline(const Graph& fp_graph, const Tensor& calib,
                            const PipelineConfig& config);

/// Mean squared error over a dataset, evaluated in chunks.
double output_mse(const QuantizedGraph& q, const Graph& fp, const Tensor& inputs);

}  // namespace tinyptq
