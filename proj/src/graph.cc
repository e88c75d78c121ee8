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

#include "tinyptq/graph.h"

#include <algorithm>

#include "tinyptq/error.h"

namespace tinyptq {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kDepthwiseConv2d: return "dwconv2d";
    case LayerKind::kConv1d: return "conv1d";
    case LayerKind::kFullyConnected: return "fc";
    case LayerKind::kAvgPool: return "avgpool";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kAdd: return "add";
    case LayerKind::kFlatten: return "flatten";
  }
  return "?";
}

bool Layer::has_weights() const noexcept {
  return kind == LayerKind::kConv2d || kind == LayerKind::kDepthwiseConv2d ||
         kind == LayerKind::kConv1d || kind == LayerKind::kFullyConnected;
}

namespace {

std::int64_t spatial_out(std::int64_t in, int kernel, int stride, Padding padding) {
  if (padding == Padding::kSame) return (in + stride - 1) / stride;
  if (in < kernel) return 0;
  return (in - kernel) / stride + 1;
}

[[noreturn]] void fail(const Layer& layer, const std::string& what) {
  throw StructuralError("layer '" + layer.name + "' (" + std::string(to_string(layer.kind)) +
                        "): " + what);
}

void expect_shape(const Layer& layer, const Tensor& t, const Shape& want, const char* what) {
  if (t.shape() != want) {
    fail(layer, std::string(what) + " shape " + shape_string(t.shape()) + ", expected " +
                    shape_string(want));
  }
}

void expect_bias(const Layer& layer, std::int64_t channels) {
  if (!layer.bias.empty()) expect_shape(layer, layer.bias, {channels}, "bias");
}

Shape infer_one(const Layer& layer, const std::vector<Shape>& in) {
  if (layer.kernel_h < 1 || layer.kernel_w < 1) fail(layer, "kernel extents must be >= 1");
  if (layer.stride_h < 1 || layer.stride_w < 1) fail(layer, "stride must be >= 1");
  const std::size_t arity = layer.kind == LayerKind::kAdd ? 2 : 1;
  if (in.size() != arity) fail(layer, "expected " + std::to_string(arity) + " input(s)");
  const Shape& x = in.front();

  switch (layer.kind) {
    case LayerKind::kConv2d: {
      if (x.size() != 3) fail(layer, "input must be HxWxC, got " + shape_string(x));
      expect_shape(layer, layer.weight, {layer.kernel_h, layer.kernel_w, x[2], layer.out_channels},
                   "weight");
      expect_bias(layer, layer.out_channels);
      Shape out{spatial_out(x[0], layer.kernel_h, layer.stride_h, layer.padding),
                spatial_out(x[1], layer.kernel_w, layer.stride_w, layer.padding),
                layer.out_channels};
      if (out[0] < 1 || out[1] < 1) fail(layer, "empty output for input " + shape_string(x));
      return out;
    }
    case LayerKind::kDepthwiseConv2d: {
      if (x.size() != 3) fail(layer, "input must be HxWxC, got " + shape_string(x));
      if (layer.out_channels != x[2]) fail(layer, "depthwise output channels must equal input");
      expect_shape(layer, layer.weight, {layer.kernel_h, layer.kernel_w, x[2]}, "weight");
      expect_bias(layer, x[2]);
      Shape out{spatial_out(x[0], layer.kernel_h, layer.stride_h, layer.padding),
                spatial_out(x[1], layer.kernel_w, layer.stride_w, layer.padding), x[2]};
      if (out[0] < 1 || out[1] < 1) fail(layer, "empty output for input " + shape_string(x));
      return out;
    }
    case LayerKind::kConv1d: {
      if (x.size() != 2) fail(layer, "input must be LxC, got " + shape_string(x));
      if (layer.kernel_h != 1 || layer.stride_h != 1) fail(layer, "1-d kernel must have height 1");
      expect_shape(layer, layer.weight, {layer.kernel_w, x[1], layer.out_channels}, "weight");
      expect_bias(layer, layer.out_channels);
      Shape out{spatial_out(x[0], layer.kernel_w, layer.stride_w, layer.padding),
                layer.out_channels};
      if (out[0] < 1) fail(layer, "empty output for input " + shape_string(x));
      return out;
    }
    case LayerKind::kFullyConnected: {
      if (x.size() != 1) fail(layer, "input must be flat, got " + shape_string(x));
      expect_shape(layer, layer.weight, {x[0], layer.out_channels}, "weight");
      expect_bias(layer, layer.out_channels);
      return {layer.out_channels};
    }
    case LayerKind::kAvgPool:
    case LayerKind::kMaxPool: {
      if (x.size() == 3) {
        Shape out{spatial_out(x[0], layer.kernel_h, layer.stride_h, Padding::kValid),
                  spatial_out(x[1], layer.kernel_w, layer.stride_w, Padding::kValid), x[2]};
        if (out[0] < 1 || out[1] < 1) fail(layer, "pool window larger than input");
        return out;
      }
      if (x.size() == 2) {
        if (layer.kernel_h != 1) fail(layer, "1-d pooling must have kernel height 1");
        Shape out{spatial_out(x[0], layer.kernel_w, layer.stride_w, Padding::kValid), x[1]};
        if (out[0] < 1) fail(layer, "pool window larger than input");
        return out;
      }
      fail(layer, "pooling expects HxWxC or LxC input, got " + shape_string(x));
    }
    case LayerKind::kRelu:
      return x;
    case LayerKind::kBatchNorm: {
      if (x.empty()) fail(layer, "batchnorm needs a channel axis");
      const Shape c{x.back()};
      expect_shape(layer, layer.gamma, c, "gamma");
      expect_shape(layer, layer.beta, c, "beta");
      expect_shape(layer, layer.mean, c, "mean");
      expect_shape(layer, layer.variance, c, "variance");
      return x;
    }
    case LayerKind::kAdd:
      if (in[0] != in[1]) {
        fail(layer, "operand shapes differ: " + shape_string(in[0]) + " vs " + shape_string(in[1]));
      }
      return x;
    case LayerKind::kFlatten:
      return {num_elements(x)};
  }
  fail(layer, "unknown layer kind");
}

}  // namespace

std::vector<Shape> Graph::infer_shapes() const {
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  for (int i = 0; i < size(); ++i) {
    const Layer& layer = layers[static_cast<std::size_t>(i)];
    std::vector<Shape> in;
    for (int e : layer.inputs) {
      if (e < kGraphInput || e >= i) fail(layer, "input edge " + std::to_string(e) + " does not precede layer");
      in.push_back(e == kGraphInput ? input_shape : shapes[static_cast<std::size_t>(e)]);
    }
    shapes.push_back(infer_one(layer, in));
  }
  return shapes;
}

Shape Graph::output_shape() const {
  if (layers.empty()) return input_shape;
  return infer_shapes().back();
}

void Graph::validate() const {
  if (layers.empty()) throw StructuralError("graph '" + name + "' has no layers");
  infer_shapes();
  std::vector<int> owner(layers.size(), -1);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Block& block = blocks[b];
    if (block.first < 0 || block.last >= size() || block.first > block.last) {
      throw StructuralError("block '" + block.name + "' has an invalid layer range");
    }
    for (int i = block.first; i <= block.last; ++i) {
      if (owner[static_cast<std::size_t>(i)] != -1) {
        throw StructuralError("block '" + block.name + "' overlaps another block");
      }
      owner[static_cast<std::size_t>(i)] = static_cast<int>(b);
    }
  }
  if (!blocks.empty()) {
    for (int i = 0; i < size(); ++i) {
      if (layers[static_cast<std::size_t>(i)].has_weights() && owner[static_cast<std::size_t>(i)] == -1) {
        throw StructuralError("layer '" + layers[static_cast<std::size_t>(i)].name +
                              "' is not covered by any block");
      }
    }
  }
}

std::vector<std::vector<int>> Graph::consumers() const {
  std::vector<std::vector<int>> out(layers.size() + 1);
  for (int i = 0; i < size(); ++i) {
    for (int e : layers[static_cast<std::size_t>(i)].inputs) {
      out[static_cast<std::size_t>(e + 1)].push_back(i);
    }
  }
  return out;
}

int Graph::find(std::string_view layer_name) const {
  for (int i = 0; i < size(); ++i) {
    if (layers[static_cast<std::size_t>(i)].name == layer_name) return i;
  }
  return -1;
}

void Graph::bypass(int index) {
  if (index < 0 || index >= size()) throw StructuralError("bypass index out of range");
  const Layer& removed = layers[static_cast<std::size_t>(index)];
  if (removed.inputs.size() != 1) {
    throw StructuralError("layer '" + removed.name + "' cannot be bypassed");
  }
  const int source = removed.inputs.front();
  layers.erase(layers.begin() + index);
  for (auto& layer : layers) {
    for (int& e : layer.inputs) {
      if (e == index) {
        e = source;
      } else if (e > index) {
        --e;
      }
    }
  }
  std::vector<Block> kept;
  for (Block b : blocks) {
    if (b.first > index) --b.first;
    if (b.last >= index) --b.last;
    if (b.first <= b.last) kept.push_back(b);
  }
  blocks = std::move(kept);
}

}  // namespace tinyptq
