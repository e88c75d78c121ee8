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

#include "tinyptq/models.h"

#include <cmath>

#include "tinyptq/error.h"

namespace tinyptq {

GraphBuilder::GraphBuilder(std::string name, Shape input_shape, std::uint64_t seed) : rng_(seed) {
  graph_.name = std::move(name);
  graph_.input_shape = std::move(input_shape);
}

const Shape& GraphBuilder::shape_of(int edge) const {
  if (edge == kGraphInput) return graph_.input_shape;
  return shapes_.at(static_cast<std::size_t>(edge));
}

Tensor GraphBuilder::he_normal(Shape shape, std::int64_t fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng_);
  return t;
}

Tensor GraphBuilder::uniform(Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng_);
  return t;
}

int GraphBuilder::push(Layer layer) {
  graph_.layers.push_back(std::move(layer));
  // Shape inference of the whole prefix also validates the new layer.
  shapes_ = graph_.infer_shapes();
  return graph_.size() - 1;
}

int GraphBuilder::conv2d(const std::string& name, int input, int kernel_h, int kernel_w,
                         std::int64_t out, int stride_h, int stride_w, Padding padding) {
  const std::int64_t cin = shape_of(input).back();
  Layer l;
  l.name = name;
  l.kind = LayerKind::kConv2d;
  l.inputs = {input};
  l.kernel_h = kernel_h;
  l.kernel_w = kernel_w;
  l.stride_h = stride_h;
  l.stride_w = stride_w;
  l.padding = padding;
  l.out_channels = out;
  l.weight = he_normal({kernel_h, kernel_w, cin, out}, kernel_h * kernel_w * cin);
  l.bias = uniform({out}, -0.05, 0.05);
  return push(std::move(l));
}

int GraphBuilder::dwconv2d(const std::string& name, int input, int kernel, int stride,
                           Padding padding) {
  const std::int64_t c = shape_of(input).back();
  Layer l;
  l.name = name;
  l.kind = LayerKind::kDepthwiseConv2d;
  l.inputs = {input};
  l.kernel_h = l.kernel_w = kernel;
  l.stride_h = l.stride_w = stride;
  l.padding = padding;
  l.out_channels = c;
  l.weight = he_normal({kernel, kernel, c}, kernel * kernel);
  l.bias = uniform({c}, -0.05, 0.05);
  return push(std::move(l));
}

int GraphBuilder::conv1d(const std::string& name, int input, int kernel, std::int64_t out,
                         int stride, Padding padding) {
  const std::int64_t cin = shape_of(input).back();
  Layer l;
  l.name = name;
  l.kind = LayerKind::kConv1d;
  l.inputs = {input};
  l.kernel_w = kernel;
  l.stride_w = stride;
  l.padding = padding;
  l.out_channels = out;
  l.weight = he_normal({kernel, cin, out}, kernel * cin);
  l.bias = uniform({out}, -0.05, 0.05);
  return push(std::move(l));
}

int GraphBuilder::fc(const std::string& name, int input, std::int64_t out) {
  const std::int64_t cin = shape_of(input).back();
  Layer l;
  l.name = name;
  l.kind = LayerKind::kFullyConnected;
  l.inputs = {input};
  l.out_channels = out;
  l.weight = he_normal({cin, out}, cin);
  l.bias = uniform({out}, -0.05, 0.05);
  return push(std::move(l));
}

int GraphBuilder::batchnorm(const std::string& name, int input) {
  const std::int64_t c = shape_of(input).back();
  Layer l;
  l.name = name;
  l.kind = LayerKind::kBatchNorm;
  l.inputs = {input};
  l.gamma = uniform({c}, 0.5, 1.5);
  l.beta = uniform({c}, -0.2, 0.2);
  l.mean = uniform({c}, -0.2, 0.2);
  l.variance = uniform({c}, 0.5, 2.0);
  return push(std::move(l));
}

int GraphBuilder::relu(const std::string& name, int input) {
  Layer l;
  l.name = name;
  l.kind = LayerKind::kRelu;
  l.inputs = {input};
  return push(std::move(l));
}

int GraphBuilder::add(const std::string& name, int lhs, int rhs) {
  Layer l;
  l.name = name;
  l.kind = LayerKind::kAdd;
  l.inputs = {lhs, rhs};
  return push(std::move(l));
}

int GraphBuilder::avgpool(const std::string& name, int input, int kernel_h, int kernel_w,
                          int stride) {
  Layer l;
  l.name = name;
  l.kind = LayerKind::kAvgPool;
  l.inputs = {input};
  l.kernel_h = kernel_h;
  l.kernel_w = kernel_w;
  l.stride_h = shape_of(input).size() == 2 ? 1 : stride;
  l.stride_w = stride;
  return push(std::move(l));
}

int GraphBuilder::maxpool(const std::string& name, int input, int kernel_h, int kernel_w,
                          int stride) {
  Layer l;
  l.name = name;
  l.kind = LayerKind::kMaxPool;
  l.inputs = {input};
  l.kernel_h = kernel_h;
  l.kernel_w = kernel_w;
  l.stride_h = shape_of(input).size() == 2 ? 1 : stride;
  l.stride_w = stride;
  return push(std::move(l));
}

int GraphBuilder::flatten(const std::string& name, int input) {
  Layer l;
  l.name = name;
  l.kind = LayerKind::kFlatten;
  l.inputs = {input};
  return push(std::move(l));
}

void GraphBuilder::begin_block(const std::string& name) {
  if (block_start_ >= 0) throw StructuralError("nested block '" + name + "'");
  block_start_ = graph_.size();
  block_name_ = name;
}

void GraphBuilder::end_block() {
  if (block_start_ < 0) throw StructuralError("end_block without begin_block");
  graph_.blocks.push_back({block_name_, block_start_, graph_.size() - 1});
  block_start_ = -1;
}

Graph GraphBuilder::finish() {
  if (block_start_ >= 0) end_block();
  graph_.validate();
  return std::move(graph_);
}

namespace {

int conv_bn_relu(GraphBuilder& b, const std::string& name, int x, int kh, int kw, std::int64_t out,
                 int stride) {
  x = b.conv2d(name, x, kh, kw, out, stride, stride, Padding::kSame);
  x = b.batchnorm(name + ".bn", x);
  return b.relu(name + ".relu", x);
}

// conv3x3-BN-ReLU -> conv3x3-BN -> add -> ReLU; a 1x1 strided conv (no BN)
// carries the skip path when the stride or width changes.
int res_block(GraphBuilder& b, const std::string& name, int x, std::int64_t out, int stride) {
  b.begin_block(name);
  int y = b.conv2d(name + ".conv_a", x, 3, 3, out, stride, stride, Padding::kSame);
  y = b.batchnorm(name + ".bn_a", y);
  y = b.relu(name + ".relu_a", y);
  y = b.conv2d(name + ".conv_b", y, 3, 3, out, 1, 1, Padding::kSame);
  y = b.batchnorm(name + ".bn_b", y);
  int skip = x;
  if (stride != 1 || b.shape_of(x).back() != out) {
    skip = b.conv2d(name + ".skip", x, 1, 1, out, stride, stride, Padding::kSame);
  }
  y = b.add(name + ".add", skip, y);
  y = b.relu(name + ".relu", y);
  b.end_block();
  return y;
}

// depthwise3x3-BN-ReLU -> pointwise1x1-BN-ReLU
int ds_block(GraphBuilder& b, const std::string& name, int x, std::int64_t out, int stride) {
  b.begin_block(name);
  x = b.dwconv2d(name + ".dw", x, 3, stride, Padding::kSame);
  x = b.batchnorm(name + ".dw_bn", x);
  x = b.relu(name + ".dw_relu", x);
  x = b.conv2d(name + ".pw", x, 1, 1, out, 1, 1, Padding::kSame);
  x = b.batchnorm(name + ".pw_bn", x);
  x = b.relu(name + ".pw_relu", x);
  b.end_block();
  return x;
}

Graph build_res8(std::uint64_t seed) {
  GraphBuilder b("res8", {32, 32, 3}, seed);
  b.begin_block("conv1");
  int x = conv_bn_relu(b, "conv1", kGraphInput, 3, 3, 16, 1);
  b.end_block();
  x = res_block(b, "block1", x, 16, 1);
  x = res_block(b, "block2", x, 32, 2);
  x = res_block(b, "block3", x, 64, 2);
  b.begin_block("head");
  x = b.avgpool("pool", x, 8, 8, 1);
  x = b.flatten("flatten", x);
  b.fc("fc", x, 10);
  b.end_block();
  return b.finish();
}

Graph build_dscnn(std::uint64_t seed) {
  GraphBuilder b("dscnn", {10, 49, 1}, seed);
  b.begin_block("conv1");
  int x = conv_bn_relu(b, "conv1", kGraphInput, 4, 10, 64, 2);
  b.end_block();
  for (int i = 1; i <= 4; ++i) x = ds_block(b, "ds" + std::to_string(i), x, 64, 1);
  b.begin_block("head");
  x = b.avgpool("pool", x, 5, 25, 1);
  x = b.flatten("flatten", x);
  b.fc("fc", x, 12);
  b.end_block();
  return b.finish();
}

Graph build_mobilenetv1(std::uint64_t seed) {
  GraphBuilder b("mobilenetv1", {96, 96, 3}, seed);
  b.begin_block("conv1");
  int x = conv_bn_relu(b, "conv1", kGraphInput, 3, 3, 8, 2);
  b.end_block();
  // Five 128-wide stride-1 blocks at 6x6, as in the MLPerf Tiny reference.
  const std::pair<std::int64_t, int> plan[] = {
      {16, 1},  {32, 2},  {32, 1},  {64, 2},  {64, 1},  {128, 2}, {128, 1},
      {128, 1}, {128, 1}, {128, 1}, {128, 1}, {256, 2}, {256, 1},
  };
  int i = 1;
  for (auto [out, stride] : plan) x = ds_block(b, "ds" + std::to_string(i++), x, out, stride);
  b.begin_block("head");
  x = b.avgpool("pool", x, 3, 3, 1);
  x = b.flatten("flatten", x);
  b.fc("fc", x, 2);
  b.end_block();
  return b.finish();
}

Graph build_har_cnn(std::uint64_t seed) {
  GraphBuilder b("har_cnn", {128, 9}, seed);
  b.begin_block("conv1");
  int x = b.conv1d("conv1", kGraphInput, 3, 64, 1, Padding::kValid);
  x = b.relu("conv1.relu", x);
  b.end_block();
  b.begin_block("conv2");
  x = b.conv1d("conv2", x, 3, 64, 1, Padding::kValid);
  x = b.relu("conv2.relu", x);
  b.end_block();
  b.begin_block("fc1");
  x = b.maxpool("pool", x, 1, 2, 2);
  x = b.flatten("flatten", x);
  x = b.fc("fc1", x, 128);
  x = b.relu("fc1.relu", x);
  b.end_block();
  b.begin_block("fc2");
  b.fc("fc2", x, 6);
  b.end_block();
  return b.finish();
}

}  // namespace

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{"res8", "dscnn", "mobilenetv1", "har_cnn"};
  return names;
}

Graph build_model(std::string_view name, const ParameterSet* weights, std::uint64_t seed) {
  Graph g;
  if (name == "res8") {
    g = build_res8(seed);
  } else if (name == "dscnn") {
    g = build_dscnn(seed);
  } else if (name == "mobilenetv1") {
    g = build_mobilenetv1(seed);
  } else if (name == "har_cnn") {
    g = build_har_cnn(seed);
  } else {
    throw ConfigError("unknown model '" + std::string(name) +
                      "' (expected res8, dscnn, mobilenetv1 or har_cnn)");
  }
  if (weights) {
    for (auto& layer : g.layers) {
      if (layer.has_weights() && !weights->contains(layer.name + ".bias")) layer.bias.fill(0.0);
    }
    assign_parameters(g, *weights, true);
  }
  return g;
}

namespace {

template <typename Fn>
void for_each_param(Layer& layer, Fn&& fn) {
  if (layer.has_weights()) {
    fn("weight", layer.weight, true);
    fn("bias", layer.bias, false);
  } else if (layer.kind == LayerKind::kBatchNorm) {
    fn("gamma", layer.gamma, true);
    fn("beta", layer.beta, true);
    fn("mean", layer.mean, true);
    fn("variance", layer.variance, true);
  }
}

}  // namespace

ParameterSet extract_parameters(const Graph& graph) {
  ParameterSet out;
  for (Layer layer : graph.layers) {
    for_each_param(layer, [&](const char* param, Tensor& t, bool) {
      if (!t.empty()) out.emplace(layer.name + "." + param, t);
    });
  }
  return out;
}

void assign_parameters(Graph& graph, const ParameterSet& params, bool require_all) {
  for (auto& layer : graph.layers) {
    for_each_param(layer, [&](const char* param, Tensor& t, bool required) {
      const std::string key = layer.name + "." + param;
      auto it = params.find(key);
      if (it == params.end()) {
        if (require_all && required) throw StructuralError("missing parameter '" + key + "'");
        return;
      }
      if (!t.empty() && it->second.shape() != t.shape()) {
        throw StructuralError("parameter '" + key + "' has shape " +
                              shape_string(it->second.shape()) + ", expected " +
                              shape_string(t.shape()));
      }
      t = it->second;
    });
  }
  graph.validate();
}

Graph fold_batchnorm(const Graph& graph) {
  Graph out = graph;
  for (int i = 0; i < out.size();) {
    Layer& bn = out.layers[static_cast<std::size_t>(i)];
    if (bn.kind != LayerKind::kBatchNorm) {
      ++i;
      continue;
    }
    const int src = bn.inputs.front();
    const auto consumers = out.consumers();
    if (src == kGraphInput || !out.layers[static_cast<std::size_t>(src)].has_weights() ||
        consumers[static_cast<std::size_t>(src + 1)].size() != 1) {
      throw StructuralError("batchnorm '" + bn.name +
                            "' does not directly follow a conv/dwconv/fc layer");
    }
    Layer& prev = out.layers[static_cast<std::size_t>(src)];
    const std::int64_t c = bn.gamma.size();
    if (prev.bias.empty()) prev.bias = Tensor({c});
    // Output channels are the last weight axis for every weighted layout.
    for (std::int64_t k = 0; k < prev.weight.size(); ++k) {
      const std::int64_t ch = k % c;
      prev.weight[k] *= bn.gamma[ch] / std::sqrt(bn.variance[ch] + bn.epsilon);
    }
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double scale = bn.gamma[ch] / std::sqrt(bn.variance[ch] + bn.epsilon);
      prev.bias[ch] = (prev.bias[ch] - bn.mean[ch]) * scale + bn.beta[ch];
    }
    out.bypass(i);
  }
  out.validate();
  return out;
}

}  // namespace tinyptq
