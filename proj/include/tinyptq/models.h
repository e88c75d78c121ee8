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
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tinyptq/graph.h"

namespace tinyptq {

/// Named parameter tensors, keyed "<layer>.<param>" with param one of
/// weight, bias, gamma, beta, mean, variance.
using ParameterSet = std::map<std::string, Tensor>;

/// The four supported architectures.
const std::vector<std::string>& model_names();

/// Builds one of res8, dscnn, mobilenetv1, har_cnn. Without `weights` the
/// parameters are seeded-random (He-normal weights, small random biases and
/// batchnorm statistics). With `weights`, every weight/batchnorm tensor must
/// be present with the exact architectural shape; missing biases default to
/// zero. Throws ConfigError for unknown names, StructuralError on mismatch.
Graph build_model(std::string_view name, const ParameterSet* weights = nullptr,
                  std::uint64_t seed = 0);

ParameterSet extract_parameters(const Graph& graph);

/// Replaces parameters by name after shape validation.
void assign_parameters(Graph& graph, const ParameterSet& params, bool require_all);

/// Folds every batchnorm into the weighted layer feeding it. Throws
/// StructuralError if a batchnorm has no foldable predecessor.
Graph fold_batchnorm(const Graph& graph);

// Incremental construction of graphs with seeded-random parameters. Each
// add_* returns the edge id of the new layer.
class GraphBuilder {
 public:
  GraphBuilder(std::string name, Shape input_shape, std::uint64_t seed);

  int conv2d(const std::string& name, int input, int kernel_h, int kernel_w, std::int64_t out,
             int stride_h, int stride_w, Padding padding);
  int dwconv2d(const std::string& name, int input, int kernel, int stride, Padding padding);
  int conv1d(const std::string& name, int input, int kernel, std::int64_t out, int stride,
             Padding padding);
  int fc(const std::string& name, int input, std::int64_t out);
  int batchnorm(const std::string& name, int input);
  int relu(const std::string& name, int input);
  int add(const std::string& name, int lhs, int rhs);
  int avgpool(const std::string& name, int input, int kernel_h, int kernel_w, int stride);
  int maxpool(const std::string& name, int input, int kernel_h, int kernel_w, int stride);
  int flatten(const std::string& name, int input);

  /// Opens a block starting at the next layer; closed by end_block().
  void begin_block(const std::string& name);
  void end_block();

  const Shape& shape_of(int edge) const;
  Graph finish();

 private:
  int push(Layer layer);
  Tensor he_normal(Shape shape, std::int64_t fan_in);
  Tensor uniform(Shape shape, double lo, double hi);

  Graph graph_;
  std::vector<Shape> shapes_;
  std::mt19937_64 rng_;
  int block_start_ = -1;
  std::string block_name_;
};

}  // namespace tinyptq
