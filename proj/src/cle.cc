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

#include <algorithm>
#include <cmath>

#include "tinyptq/error.h"
#include "tinyptq/ptq.h"

namespace tinyptq {

namespace {

constexpr int kMaxPasses = 10000;
constexpr double kConverged = 1e-12;

bool equalizable(const Layer& l) {
  return l.kind == LayerKind::kConv2d || l.kind == LayerKind::kDepthwiseConv2d;
}

// Calls fn(flat_index, channel) over the weight, where channel is the
// output channel (or input channel when input_side is set).
template <typename Fn>
void for_each_channel(const Layer& layer, bool input_side, Fn&& fn) {
  const Shape& s = layer.weight.shape();
  const std::int64_t n = layer.weight.size();
  if (layer.kind == LayerKind::kDepthwiseConv2d) {
    for (std::int64_t i = 0; i < n; ++i) fn(i, i % s[2]);
  } else if (layer.kind == LayerKind::kConv2d) {
    const std::int64_t cin = s[2], cout = s[3];
    for (std::int64_t i = 0; i < n; ++i) fn(i, input_side ? (i / cout) % cin : i % cout);
  } else {
    throw StructuralError("channel ranges are defined for conv2d and dwconv2d only");
  }
}

}  // namespace

std::vector<double> channel_ranges(const Layer& layer, bool input_side) {
  const Shape& s = layer.weight.shape();
  const std::int64_t channels = layer.kind == LayerKind::kDepthwiseConv2d ? s[2] : (input_side ? s[2] : s[3]);
  std::vector<double> r(static_cast<std::size_t>(channels), 0.0);
  for_each_channel(layer, input_side, [&](std::int64_t i, std::int64_t c) {
    auto& v = r[static_cast<std::size_t>(c)];
    v = std::max(v, std::abs(layer.weight[i]));
  });
  return r;
}

Graph cle_equalize(const Graph& graph, CleReport* report) {
  Graph g = graph;
  for (const Layer& l : g.layers) {
    if (l.kind == LayerKind::kBatchNorm) {
      throw StructuralError("cross-layer equalization requires a folded graph; found '" + l.name + "'");
    }
  }
  const auto consumers = g.consumers();
  auto sole_consumer = [&](int edge) {
    const auto& c = consumers[static_cast<std::size_t>(edge + 1)];
    return c.size() == 1 ? c.front() : -1;
  };
  std::vector<ClePair> pairs;
  for (int a = 0; a < g.size(); ++a) {
    if (!equalizable(g.layers[static_cast<std::size_t>(a)])) continue;
    const int relu = sole_consumer(a);
    if (relu < 0 || g.layers[static_cast<std::size_t>(relu)].kind != LayerKind::kRelu) continue;
    const int b = sole_consumer(relu);
    if (b < 0 || !equalizable(g.layers[static_cast<std::size_t>(b)])) continue;
    pairs.push_back({a, b});
  }

  int passes = 0;
  for (; passes < kMaxPasses && !pairs.empty(); ++passes) {
    double worst = 0.0;
    for (const ClePair& p : pairs) {
      Layer& first = g.layers[static_cast<std::size_t>(p.first)];
      Layer& second = g.layers[static_cast<std::size_t>(p.second)];
      const std::vector<double> r1 = channel_ranges(first, false);
      const std::vector<double> r2 = channel_ranges(second, true);
      std::vector<double> s(r1.size(), 1.0);
      for (std::size_t i = 0; i < r1.size(); ++i) {
        if (r1[i] > 0.0 && r2[i] > 0.0) s[i] = std::sqrt(r1[i] / r2[i]);
        worst = std::max(worst, std::abs(s[i] - 1.0));
      }
      for_each_channel(first, false, [&](std::int64_t i, std::int64_t c) { first.weight[i] /= s[static_cast<std::size_t>(c)]; });
      for (std::int64_t c = 0; c < first.bias.size(); ++c) first.bias[c] /= s[static_cast<std::size_t>(c)];
      for_each_channel(second, true, [&](std::int64_t i, std::int64_t c) { second.weight[i] *= s[static_cast<std::size_t>(c)]; });
    }
    if (worst < kConverged) {
      ++passes;
      break;
    }
  }
  if (report) {
    report->pairs = pairs;
    report->passes = passes;
  }
  return g;
}

}  // namespace tinyptq
