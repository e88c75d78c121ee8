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

#include <map>
#include <optional>
#include <vector>

#include "tinyptq/graph.h"
#include "tinyptq/tensor.h"

namespace tinyptq {

// Transformation applied to an edge value before any layer consumes it.
// Used for simulated activation quantization. `backward` maps the gradient
// with respect to the transformed value to the gradient with respect to the
// raw value, and may accumulate gradients of the hook's own parameters.
class EdgeHook {
 public:
  virtual ~EdgeHook() = default;
  virtual bool applies(int edge) const = 0;
  virtual Tensor forward(int edge, const Tensor& raw) const = 0;
  virtual Tensor backward(int edge, const Tensor& raw, const Tensor& grad) = 0;
};

struct ExecOptions {
  /// Per-layer weight substitutes; an empty tensor (or a null pointer for the
  /// whole table) means "use layer.weight".
  const std::vector<Tensor>* weights = nullptr;
  EdgeHook* hook = nullptr;
};

// Activations of one execution of the layer range [first, last].
struct RangeTrace {
  int first = 0;
  int last = -1;
  /// Raw values of edges produced outside the range and read inside it.
  std::map<int, Tensor> external;
  /// Raw output of every layer in the range, indexed by layer - first.
  std::vector<Tensor> outputs;
  /// Hooked (as-consumed) values of edges the hook applies to.
  std::map<int, Tensor> hooked;

  const Tensor& output() const { return outputs.back(); }
  const Tensor& raw(int edge) const;
  /// Value seen by consumers of `edge`: hooked when the hook applied.
  const Tensor& consumed(int edge) const;
};

/// Edges produced before `first` and read by layers in [first, last].
std::vector<int> external_edges(const Graph& graph, int first, int last);

/// Runs layers [first, last]. `external` must provide the raw value of every
/// edge returned by external_edges(); values carry a leading batch axis.
RangeTrace forward_range(const Graph& graph, int first, int last,
                         std::map<int, Tensor> external, const ExecOptions& options = {});

enum GradTarget : unsigned {
  kGradInputs = 1u << 0,
  kGradBiases = 1u << 1,
  kGradWeights = 1u << 2,
};

struct GraphGradients {
  /// Gradient w.r.t. the raw value of each external edge.
  std::map<int, Tensor> inputs;
  /// Per-layer (indexed by absolute layer id); empty where not applicable.
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

/// Reverse-mode gradients of a scalar loss whose gradient with respect to the
/// range output is `upstream`. Weight gradients are with respect to the
/// weights that were actually used (the substitutes, when given).
GraphGradients backward_range(const Graph& graph, const RangeTrace& trace, const Tensor& upstream,
                              unsigned wrt, const ExecOptions& options = {});

/// Whole-graph forward. Returns every layer output when `record` is set,
/// otherwise only the final output. Throws StructuralError on input shape
/// mismatch.
std::vector<Tensor> forward(const Graph& graph, const Tensor& input, bool record);

/// Convenience: final output only.
Tensor predict(const Graph& graph, const Tensor& input, const ExecOptions& options = {});

// Stateful wrapper pairing a recorded forward pass with backward.
class Executor {
 public:
  explicit Executor(const Graph& graph, ExecOptions options = {});

  std::vector<Tensor> forward(const Tensor& input, bool record);

  /// Throws StateError unless a recorded forward pass precedes it.
  GraphGradients backward(const Tensor& upstream, unsigned wrt);

 private:
  const Graph& graph_;
  ExecOptions options_;
  std::optional<RangeTrace> trace_;
};

}  // namespace tinyptq
