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

#include <string>
#include <string_view>
#include <vector>

#include "tinyptq/tensor.h"

namespace tinyptq {

enum class LayerKind {
  kConv2d,
  kDepthwiseConv2d,
  kConv1d,
  kFullyConnected,
  kAvgPool,
  kMaxPool,
  kRelu,
  kBatchNorm,
  kAdd,
  kFlatten,
};

enum class Padding { kSame, kValid };

std::string_view to_string(LayerKind kind);

/// Edge id of the graph input. Every other edge is identified by the index of
/// the layer producing it.
inline constexpr int kGraphInput = -1;

// One node of the network. Weight layouts:
//   conv2d            Kh,Kw,Cin,Cout
//   depthwise conv2d  Kh,Kw,C
//   conv1d            K,Cin,Cout
//   fully-connected   Cin,Cout
// Pooling uses kernel/stride with valid padding; 1-d tensors pool along L
// with kernel_h == 1.
struct Layer {
  std::string name;
  LayerKind kind = LayerKind::kRelu;
  std::vector<int> inputs;

  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  Padding padding = Padding::kValid;
  std::int64_t out_channels = 0;

  Tensor weight;
  Tensor bias;

  Tensor gamma;
  Tensor beta;
  Tensor mean;
  Tensor variance;
  double epsilon = 1e-3;

  bool has_weights() const noexcept;
};

/// Named contiguous layer range [first, last] used as a blockwise
/// optimization unit.
struct Block {
  std::string name;
  int first = 0;
  int last = 0;
};

// Topologically ordered network: every layer's inputs precede it.
class Graph {
 public:
  std::string name;
  /// Per-sample input shape (no batch axis).
  Shape input_shape;
  std::vector<Layer> layers;
  std::vector<Block> blocks;

  int size() const noexcept { return static_cast<int>(layers.size()); }
  int output_edge() const noexcept { return size() - 1; }

  /// Per-sample output shape of every layer. Throws StructuralError naming
  /// the first offending layer.
  std::vector<Shape> infer_shapes() const;
  Shape output_shape() const;

  /// Checks ordering, parameter shapes and the block partition.
  void validate() const;

  /// consumers()[edge + 1] lists the layers reading `edge`.
  std::vector<std::vector<int>> consumers() const;

  /// Layer index by name, or -1.
  int find(std::string_view layer_name) const;

  /// Removes layer `index` (which must have exactly one input) and rewires
  /// its consumers to read that input instead. Block ranges are adjusted.
  void bypass(int index);
};

}  // namespace tinyptq
