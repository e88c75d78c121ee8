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

#include <span>
#include <vector>

#include "tinyptq/graph.h"
#include "tinyptq/tensor.h"

namespace tinyptq {

// Batched single-layer kernels. `inputs` carry a leading batch axis. The
// weight is passed separately from the layer so callers can substitute
// fake-quantized weights; the bias always comes from the layer.

Tensor layer_forward(const Layer& layer, std::span<const Tensor* const> inputs,
                     const Tensor& weight);

struct LayerGradients {
  std::vector<Tensor> inputs;  // one per layer input, empty when not requested
  Tensor weight;
  Tensor bias;
};

struct GradRequest {
  bool inputs = true;
  bool weight = false;
  bool bias = false;
};

LayerGradients layer_backward(const Layer& layer, std::span<const Tensor* const> inputs,
                              const Tensor& weight, const Tensor& output,
                              const Tensor& grad_output, GradRequest request);

/// Leading padding of a "same" convolution along one axis (TF convention:
/// the extra row goes after).
int same_pad_before(std::int64_t in, int kernel, int stride);

}  // namespace tinyptq
