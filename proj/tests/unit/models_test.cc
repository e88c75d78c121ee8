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

#include <gtest/gtest.h>

#include <random>

#include "common/test_util.h"
#include "tinyptq/engine.h"
#include "tinyptq/error.h"
#include "tinyptq/models.h"

namespace tinyptq {
namespace {

using testing::random_tensor;

Shape shape_at(const Graph& g, const std::string& layer) {
  const int i = g.find(layer);
  EXPECT_GE(i, 0) << layer;
  return g.infer_shapes()[static_cast<std::size_t>(i)];
}

TEST(Models, UnknownNameIsConfigError) {
  EXPECT_THROW(build_model("resnet50"), ConfigError);
}

TEST(Models, DscnnFirstLayer) {
  Graph g = build_model("dscnn");
  EXPECT_EQ(g.input_shape, (Shape{10, 49, 1}));
  const Layer& l = g.layers[0];
  EXPECT_EQ(l.kind, LayerKind::kConv2d);
  EXPECT_EQ(l.kernel_h, 4);
  EXPECT_EQ(l.kernel_w, 10);
  EXPECT_EQ(l.out_channels, 64);
  EXPECT_EQ(l.stride_h, 2);
  EXPECT_EQ(l.stride_w, 2);
  EXPECT_EQ(shape_at(g, "conv1"), (Shape{5, 25, 64}));
  for (int i = 1; i <= 4; ++i) EXPECT_EQ(shape_at(g, "ds" + std::to_string(i) + ".pw_relu"), (Shape{5, 25, 64}));
  EXPECT_EQ(shape_at(g, "pool"), (Shape{1, 1, 64}));
  EXPECT_EQ(g.output_shape(), (Shape{12}));
}

TEST(Models, Res8Blocks) {
  Graph g = build_model("res8");
  const std::int64_t widths[] = {16, 32, 64};
  const int strides[] = {1, 2, 2};
  const std::int64_t spatial[] = {32, 16, 8};
  for (int i = 0; i < 3; ++i) {
    const std::string name = "block" + std::to_string(i + 1);
    const Layer& conv = g.layers[static_cast<std::size_t>(g.find(name + ".conv_a"))];
    EXPECT_EQ(conv.out_channels, widths[i]);
    EXPECT_EQ(conv.stride_h, strides[i]);
    EXPECT_EQ(shape_at(g, name + ".relu"), (Shape{spatial[i], spatial[i], widths[i]}));
    EXPECT_EQ(g.find(name + ".skip") >= 0, i > 0);
  }
  EXPECT_EQ(shape_at(g, "conv1.relu"), (Shape{32, 32, 16}));
  EXPECT_EQ(g.output_shape(), (Shape{10}));
  std::vector<std::string> names;
  for (const Block& b : g.blocks) names.push_back(b.name);
  EXPECT_EQ(names, (std::vector<std::string>{"conv1", "block1", "block2", "block3", "head"}));
}

TEST(Models, HarShapes) {
  Graph g = build_model("har_cnn");
  EXPECT_EQ(g.input_shape, (Shape{128, 9}));
  EXPECT_EQ(shape_at(g, "conv1"), (Shape{126, 64}));
  EXPECT_EQ(shape_at(g, "conv2"), (Shape{124, 64}));
  EXPECT_EQ(shape_at(g, "pool"), (Shape{62, 64}));
  EXPECT_EQ(shape_at(g, "flatten"), (Shape{3968}));
  EXPECT_EQ(g.output_shape(), (Shape{6}));
}

TEST(Models, MobileNetShapes) {
  Graph g = build_model("mobilenetv1");
  EXPECT_EQ(shape_at(g, "conv1"), (Shape{48, 48, 8}));
  EXPECT_EQ(shape_at(g, "ds1.pw"), (Shape{48, 48, 16}));
  EXPECT_EQ(shape_at(g, "ds2.pw"), (Shape{24, 24, 32}));
  EXPECT_EQ(shape_at(g, "ds4.pw"), (Shape{12, 12, 64}));
  EXPECT_EQ(shape_at(g, "ds6.pw"), (Shape{6, 6, 128}));
  EXPECT_EQ(shape_at(g, "ds12.pw"), (Shape{3, 3, 256}));
  EXPECT_EQ(shape_at(g, "ds13.pw"), (Shape{3, 3, 256}));
  EXPECT_EQ(g.output_shape(), (Shape{2}));
}

TEST(Models, SeededParametersAreDeterministic) {
  EXPECT_EQ(extract_parameters(build_model("res8", nullptr, 4)),
            extract_parameters(build_model("res8", nullptr, 4)));
  EXPECT_NE(extract_parameters(build_model("res8", nullptr, 4)),
            extract_parameters(build_model("res8", nullptr, 5)));
}

TEST(Models, WeightsRoundTripThroughBuild) {
  ParameterSet p = extract_parameters(build_model("dscnn", nullptr, 3));
  Graph g = build_model("dscnn", &p);
  EXPECT_EQ(extract_parameters(g), p);
  p["ds2.pw.weight"] = Tensor({1, 1, 64, 63});
  EXPECT_THROW(build_model("dscnn", &p), StructuralError);
}

TEST(Models, MissingBiasDefaultsToZero) {
  ParameterSet p = extract_parameters(build_model("har_cnn", nullptr, 3));
  p.erase("fc2.bias");
  Graph g = build_model("har_cnn", &p);
  for (double v : g.layers[static_cast<std::size_t>(g.find("fc2"))].bias.values()) EXPECT_EQ(v, 0.0);
  p.erase("fc2.weight");
  EXPECT_THROW(build_model("har_cnn", &p), StructuralError);
}

Graph conv_bn(double gamma, double beta, double mean, double var, double eps) {
  GraphBuilder b("cb", {4, 4, 2}, 9);
  int x = b.conv2d("conv", kGraphInput, 3, 3, 3, 1, 1, Padding::kSame);
  b.batchnorm("bn", x);
  Graph g = b.finish();
  Layer& bn = g.layers[1];
  bn.gamma.fill(gamma);
  bn.beta.fill(beta);
  bn.mean.fill(mean);
  bn.variance.fill(var);
  bn.epsilon = eps;
  return g;
}

TEST(FoldBatchnorm, IdentityBnKeepsParameters) {
  Graph g = conv_bn(1.0, 0.0, 0.0, 1.0, 0.0);
  Graph f = fold_batchnorm(g);
  ASSERT_EQ(f.size(), 1);
  EXPECT_EQ(f.layers[0].weight, g.layers[0].weight);
  EXPECT_EQ(f.layers[0].bias, g.layers[0].bias);
}

TEST(FoldBatchnorm, GammaTwoDoublesWeightAndBias) {
  Graph g = conv_bn(2.0, 0.0, 0.0, 1.0, 0.0);
  Graph f = fold_batchnorm(g);
  for (std::int64_t i = 0; i < g.layers[0].weight.size(); ++i) {
    EXPECT_DOUBLE_EQ(f.layers[0].weight[i], 2.0 * g.layers[0].weight[i]);
  }
  for (std::int64_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(f.layers[0].bias[i], 2.0 * g.layers[0].bias[i]);
}

TEST(FoldBatchnorm, RejectsUnfoldable) {
  GraphBuilder b("bad", {4, 4, 2}, 9);
  int x = b.relu("r", kGraphInput);
  b.batchnorm("bn", x);
  EXPECT_THROW(fold_batchnorm(b.finish()), StructuralError);
}

TEST(FoldBatchnorm, PreservesAllModels) {
  for (const std::string& name : model_names()) {
    Graph g = build_model(name, nullptr, 21);
    Graph f = fold_batchnorm(g);
    for (const Layer& l : f.layers) EXPECT_NE(l.kind, LayerKind::kBatchNorm);
    f.validate();
    std::mt19937_64 rng(2);
    Tensor x = random_tensor(batched(4, g.input_shape), rng);
    EXPECT_LT(testing::relative_error(predict(f, x), predict(g, x)), 1e-5) << name;
  }
}

}  // namespace
}  // namespace tinyptq
