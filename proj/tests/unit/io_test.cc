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

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "common/nets.h"
#include "common/test_util.h"
#include "tinyptq/error.h"
#include "tinyptq/io.h"
#include "tinyptq/metrics.h"

namespace tinyptq {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tinyptq_io_test";
  fs::create_directories(dir);
  return dir / name;
}

TensorContainer sample_container() {
  TensorContainer c;
  c.add(ContainerEntry::f32("w", Tensor({2, 3}, {1, -2, 0.5, 3, 4.25, -0.125})));
  const std::vector<std::int32_t> codes = {-8, 7, 0};
  c.add(ContainerEntry::i32("codes", {3}, codes));
  c.add(ContainerEntry::text("meta", "{\"a\":1}"));
  return c;
}

std::size_t entry_offset(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  const std::string needle = name;
  auto it = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
  return static_cast<std::size_t>(it - bytes.begin());
}

std::size_t offset_of_failure(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_container(bytes);
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "expected FormatError";
  return SIZE_MAX;
}

TEST(Container, LayoutIsLittleEndian) {
  TensorContainer c;
  const std::vector<std::int32_t> v = {0x01020304};
  c.add(ContainerEntry::i32("ab", {1}, v));
  const std::vector<std::uint8_t> expect = {'T', 'Q', 'T', '1', 1, 0, 1, 0, 0, 0, 2, 0, 'a', 'b',
                                            1,   1,   1,   0,   0, 0, 4, 3, 2, 1};
  EXPECT_EQ(serialize(c), expect);
}

TEST(Container, RoundTrip) {
  const TensorContainer c = sample_container();
  const std::vector<std::uint8_t> bytes = serialize(c);
  const TensorContainer back = parse_container(bytes);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(testing::values_of(back.at("w").to_tensor()), testing::values_of(c.at("w").to_tensor()));
  EXPECT_EQ(back.at("w").to_tensor().shape(), (Shape{2, 3}));
  EXPECT_EQ(back.at("codes").to_i32(), (std::vector<std::int32_t>{-8, 7, 0}));
  EXPECT_EQ(back.at("meta").to_text(), "{\"a\":1}");
}

TEST(Container, FileRoundTripIsBitExact) {
  const fs::path p = temp_file("rt.tqt");
  save_container(sample_container(), p.string());
  EXPECT_EQ(serialize(load_container(p.string())), serialize(sample_container()));
}

TEST(Container, BadMagicAtOffsetZero) {
  std::vector<std::uint8_t> bytes = serialize(sample_container());
  bytes[0] = 'X';
  EXPECT_EQ(offset_of_failure(bytes), 0u);
}

TEST(Container, BadVersion) {
  std::vector<std::uint8_t> bytes = serialize(sample_container());
  bytes[4] = 2;
  EXPECT_EQ(offset_of_failure(bytes), 4u);
}

TEST(Container, UnknownDtype) {
  std::vector<std::uint8_t> bytes = serialize(sample_container());
  const std::size_t at = entry_offset(bytes, "codes") + 5;
  bytes[at] = 9;
  EXPECT_EQ(offset_of_failure(bytes), at);
}

TEST(Container, Truncation) {
  const std::vector<std::uint8_t> full = serialize(sample_container());
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{9}, full.size() - 1}) {
    std::vector<std::uint8_t> cut(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_LE(offset_of_failure(cut), n) << n;
  }
}

TEST(Container, TrailingBytes) {
  std::vector<std::uint8_t> bytes = serialize(sample_container());
  const std::size_t end = bytes.size();
  bytes.push_back(0);
  EXPECT_EQ(offset_of_failure(bytes), end);
}

TEST(Container, DuplicateNames) {
  TensorContainer c;
  c.add(ContainerEntry::text("x", "a"));
  EXPECT_THROW(c.add(ContainerEntry::text("x", "b")), FormatError);
  // Build a file with a duplicate by hand.
  std::vector<std::uint8_t> one = serialize(c);
  std::vector<std::uint8_t> two = one;
  two[6] = 2;
  two.insert(two.end(), one.begin() + 10, one.end());
  EXPECT_EQ(offset_of_failure(two), one.size());
}

TEST(Container, ErrorMessageNamesOffset) {
  std::vector<std::uint8_t> bytes = {'N', 'O', 'P', 'E', 1, 0, 0, 0, 0, 0};
  try {
    parse_container(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
  }
}

TEST(Weights, RoundTripThroughModel) {
  const Graph g = build_model("dscnn", nullptr, 4);
  const ParameterSet p = extract_parameters(g);
  const fs::path path = temp_file("dscnn.tqt");
  save_weights(p, path.string());
  const ParameterSet back = load_weights(path.string());
  ASSERT_EQ(back.size(), p.size());
  for (const auto& [name, t] : p) {
    const Tensor& u = back.at(name);
    ASSERT_EQ(u.shape(), t.shape()) << name;
    for (std::int64_t i = 0; i < t.size(); ++i) {
      ASSERT_EQ(u[i], static_cast<double>(static_cast<float>(t[i]))) << name;
    }
  }
  // Saving the loaded set again reproduces the file byte for byte.
  const fs::path again = temp_file("dscnn2.tqt");
  save_weights(back, again.string());
  EXPECT_EQ(serialize(load_container(path.string())), serialize(load_container(again.string())));
  const Graph rebuilt = build_model("dscnn", &back);
  EXPECT_EQ(model_stats(rebuilt).params, model_stats(g).params);
}

TEST(DatasetFile, RoundTripAndLimit) {
  Dataset d;
  d.inputs = Tensor({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  d.labels = {0, 1, 2, 1};
  const fs::path p = temp_file("ds.tqt");
  save_dataset(d, p.string());
  const Dataset all = load_dataset(p.string());
  EXPECT_EQ(testing::values_of(all.inputs), testing::values_of(d.inputs));
  EXPECT_EQ(all.labels, d.labels);
  const Dataset two = load_dataset(p.string(), 2);
  EXPECT_EQ(two.inputs.shape(), (Shape{2, 2}));
  EXPECT_EQ(two.labels, (std::vector<std::int32_t>{0, 1}));
  EXPECT_EQ(load_dataset(p.string(), 0).inputs.dim(0), 0);
  EXPECT_EQ(load_dataset(p.string(), 100).inputs.dim(0), 4);
}

TEST(DatasetFile, UnlabeledAndMismatch) {
  const fs::path p = temp_file("bad.tqt");
  TensorContainer c;
  c.add(ContainerEntry::f32("inputs", Tensor({3, 1})));
  save_container(c, p.string());
  EXPECT_TRUE(load_dataset(p.string()).labels.empty());
  const std::vector<std::int32_t> labels = {0, 1};
  c.add(ContainerEntry::i32("labels", {2}, labels));
  save_container(c, p.string());
  EXPECT_THROW(load_dataset(p.string()), FormatError);
  TensorContainer none;
  save_container(none, p.string());
  EXPECT_THROW(load_dataset(p.string()), FormatError);
}

TEST(QuantizedFile, ReloadReproducesForward) {
  const Graph g = fold_batchnorm(build_model("res8", nullptr, 2));
  std::mt19937_64 rng(1);
  const Tensor x = testing::random_tensor({8, 32, 32, 3}, rng);
  PipelineConfig cfg;
  cfg.weight_bits = 4;
  cfg.act_bits = 6;
  cfg.weight_init = InitMethod::kMse;
  const QuantizedGraph q = attach_and_init(g, x, cfg);
  const fs::path p = temp_file("q.tqt");
  save_quantized(q, "res8", cfg, p.string());
  const TensorContainer c = load_container(p.string());
  ASSERT_TRUE(is_quantized(c));
  const LoadedQuantized l = load_quantized(c);
  EXPECT_EQ(l.model, "res8");
  EXPECT_EQ(config_to_json(l.config), config_to_json(cfg));
  EXPECT_EQ(testing::values_of(l.graph.forward(x)), testing::values_of(q.forward(x)));
  for (int i = 0; i < q.graph.size(); ++i) {
    if (!q.graph.layers[static_cast<std::size_t>(i)].has_weights()) continue;
    EXPECT_EQ(l.graph.weight_codes(i), q.weight_codes(i));
  }
  // Saving the reloaded model reproduces the file.
  EXPECT_EQ(serialize(quantized_container(l.graph, "res8", cfg)), serialize(c));
}

TEST(QuantizedFile, PlainWeightsAreNotQuantized) {
  TensorContainer c;
  c.add(ContainerEntry::f32("fc.weight", Tensor({2, 2})));
  EXPECT_FALSE(is_quantized(c));
}

}  // namespace
}  // namespace tinyptq
