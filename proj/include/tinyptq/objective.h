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
#include <span>
#include <vector>

#include "tinyptq/ptq.h"

namespace tinyptq {

enum class ObjectiveKind { kQparam, kWeights, kRound, kBias };

struct UnitBatch {
  /// Raw values of the unit's external edges.
  std::map<int, Tensor> inputs;
  Tensor target;
};

// Differentiable reconstruction objective of one unit (or of the whole model
// for bias tuning) over a flat parameter vector:
//   kWeights  continuous weights of the unit's weighted layers
//   kQparam   per-channel weight scales relative to their initial value, then
//             (relative scale, continuous zero-point) per trainable
//             activation quantizer
//   kRound    rounding variables V of the unit's weighted layers
//   kBias     biases of every weighted layer
// loss() evaluates the straight-through surrogate linearised at `anchor`
// (defaults to the evaluation point, where it equals the quantized forward
// pass) and its exact gradient.
class UnitObjective {
 public:
  UnitObjective(const QuantizedGraph& qgraph, const OptimizationUnit& unit, ObjectiveKind kind,
                std::vector<int> trainable_activations, const RoundingConstants& rounding);

  std::size_t size() const noexcept { return initial_.size(); }
  const std::vector<double>& initial() const noexcept { return initial_; }

  /// Gradient preconditioner (LSQ gradient scaling for scales, 1 otherwise)
  /// for a batch of `batch` samples.
  std::vector<double> preconditioner(std::int64_t batch) const;

  /// Keeps scales positive and zero-points inside the grid.
  void project(std::span<double> params) const;

  /// Mean squared reconstruction error; for kRound the reconstruction term is
  /// the per-sample sum of squared errors plus lambda * regularizer(beta).
  double loss(std::span<const double> params, const UnitBatch& batch, double beta,
              std::vector<double>* grad, std::span<const double> anchor = {}) const;

  /// Sum of squared errors of the quantized unit (rounding variables
  /// hardened) and the number of compared elements.
  std::pair<double, std::int64_t> hard_sse(std::span<const double> params,
                                           const UnitBatch& batch) const;

  /// Writes the parameters back (hardening rounding variables).
  void commit(std::span<const double> params, QuantizedGraph& qgraph) const;

  /// Hardened weight of a layer for rounding variables `v`: up where
  /// h(v) > 0.5, down where h(v) < 0.5, nearest rounding on ties.
  Tensor hardened_weight(int layer, std::span<const double> v) const;

 private:
  struct Slot {
    int layer = -1;
    int edge = -1;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::vector<double> base_scale;
  };

  std::vector<Tensor> weights_for(std::span<const double> params, std::span<const double> anchor,
                                  bool hard) const;
  Graph graph_with_biases(std::span<const double> params) const;

  const QuantizedGraph& qgraph_;
  OptimizationUnit unit_;
  ObjectiveKind kind_;
  std::vector<int> trainable_;
  RoundingConstants rounding_;
  std::vector<Slot> weight_slots_;
  std::vector<Slot> act_slots_;
  std::vector<double> initial_;
};

}  // namespace tinyptq
