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

#include <cmath>
#include <random>

#include "common/test_util.h"
#include "tinyptq/error.h"
#include "tinyptq/quantizer.h"

namespace tinyptq {
namespace {

using testing::random_tensor;

TEST(Quantize, ScalarExamples) {
  EXPECT_EQ(quantize_value(0.0, 0.05, 0, -128, 127), 0.0);
  EXPECT_NEAR(quantize_value(0.26, 0.1, 0, -8, 7), 0.3, 1e-15);
  EXPECT_NEAR(quantize_value(5.0, 0.1, 0, -8, 7), 0.7, 1e-15);
  EXPECT_EQ(quantize_value(-0.05, 0.1, 3, 0, 15), 0.0);
  EXPECT_EQ(round_half_even(2.5), 2.0);
  EXPECT_EQ(round_half_even(-0.5), 0.0);
  EXPECT_EQ(round_half_even(3.5), 4.0);
}

TEST(Quantize, RangeExamples) {
  RangeParams a = qparams_from_range(-1.0, 1.0, 8, Scheme::kAsymmetric);
  EXPECT_DOUBLE_EQ(a.scale, 2.0 / 255.0);
  EXPECT_EQ(a.zero_point, 128);
  EXPECT_EQ(a.qmin, 0);
  EXPECT_EQ(a.qmax, 255);
  RangeParams b = qparams_from_range(0.0, 25.5, 8, Scheme::kAsymmetric);
  EXPECT_DOUBLE_EQ(b.scale, 0.1);
  EXPECT_EQ(b.zero_point, 0);
  RangeParams c = qparams_from_range(-1.0, 1.0, 8, Scheme::kSymmetric);
  EXPECT_DOUBLE_EQ(c.scale, 1.0 / 127.0);
  EXPECT_EQ(c.zero_point, 0);
  EXPECT_EQ(c.qmin, -128);
  EXPECT_EQ(c.qmax, 127);
}

TEST(Quantize, AsymmetricRangeIsWidenedToZero) {
  RangeParams r = qparams_from_range(2.0, 4.0, 4, Scheme::kAsymmetric);
  EXPECT_DOUBLE_EQ(r.scale, 4.0 / 15.0);
  EXPECT_EQ(r.zero_point, 0);
}

TEST(Quantize, DegenerateRange) {
  RangeParams r = qparams_from_range(0.0, 0.0, 8, Scheme::kSymmetric);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.scale, kDegenerateScale);
  EXPECT_EQ(r.zero_point, 0);
  Tensor t({3}, 0.0);
  QuantizerState q = init_minmax(std::span(&t, 1), quantizer_template(Scheme::kAsymmetric, 8));
  EXPECT_TRUE(q.degenerate[0]);
  EXPECT_EQ(q.zero_point[0], q.qmin);
}

TEST(Quantize, ConstantNonzeroRangeIsNotDegenerate) {
  RangeParams r = qparams_from_range(0.5, 0.5, 8, Scheme::kSymmetric);
  EXPECT_FALSE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.scale, 0.5 / 127.0);
  Tensor t({3}, 0.7);
  QuantizerState q = init_minmax(std::span(&t, 1), quantizer_template(Scheme::kAsymmetric, 8));
  EXPECT_FALSE(q.degenerate[0]);
  EXPECT_NEAR(quantize(t, q)[0], 0.7, 1e-15);
}

TEST(Quantize, FullPrecisionIsIdentity) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({5, 3}, rng);
  QuantizerState q = init_minmax(std::span(&x, 1), quantizer_template(Scheme::kSymmetric, 32, 1));
  EXPECT_FALSE(q.enabled());
  EXPECT_EQ(quantize(x, q), x);
}

TEST(Quantize, BitwidthOutOfRange) {
  EXPECT_THROW(grid_bounds(1, Scheme::kSymmetric), ConfigError);
  EXPECT_THROW(grid_bounds(17, Scheme::kAsymmetric), ConfigError);
}

TEST(Quantize, PerChannelGroupsFollowLastAxis) {
  Shape s{2, 3, 4};
  EXPECT_EQ(group_of(0, s, 2), 0);
  EXPECT_EQ(group_of(5, s, 2), 1);
  EXPECT_EQ(group_of(5, s, 1), 1);
  EXPECT_EQ(group_of(13, s, 0), 1);
  EXPECT_EQ(group_of(13, s, -1), 0);
}

TEST(InitMinMax, Examples) {
  Tensor x({4}, {-1.0, 0.2, 0.9, 1.0});
  auto r = group_ranges(std::span(&x, 1), -1);
  EXPECT_EQ(r[0], std::make_pair(-1.0, 1.0));

  Tensor w({3, 2}, {-1.0, 4.0, 0.5, -4.0, 1.0, 2.0});
  QuantizerState q = init_minmax(std::span(&w, 1), quantizer_template(Scheme::kSymmetric, 8, 1));
  ASSERT_EQ(q.groups(), 2);
  EXPECT_DOUBLE_EQ(q.scale[1] / q.scale[0], 4.0);

  std::vector<Tensor> none;
  EXPECT_THROW(init_minmax(none, quantizer_template(Scheme::kSymmetric, 8)), ConfigError);
  EXPECT_THROW(init_mse(none, quantizer_template(Scheme::kSymmetric, 8)), ConfigError);
}

TEST(InitMse, OnGridDataKeepsMinMax) {
  // Every code of the symmetric 8-bit grid with scale 1/128 except -128.
  Tensor x({255});
  for (int i = 0; i < 255; ++i) x[i] = (i - 127) / 128.0;
  auto tmpl = quantizer_template(Scheme::kSymmetric, 8);
  QuantizerState mm = init_minmax(std::span(&x, 1), tmpl);
  QuantizerState ms = init_mse(std::span(&x, 1), tmpl);
  EXPECT_EQ(ms.scale, mm.scale);
  EXPECT_EQ(reconstruction_sse(std::span(&x, 1), ms), 0.0);
}

// Independent scan over the proportional candidate set for a symmetric
// per-tensor quantizer.
double exhaustive_symmetric_sse(const Tensor& x, int bits, int steps) {
  double m = 0.0;
  for (double v : x.values()) m = std::max(m, std::abs(v));
  const double p = std::ldexp(1.0, bits - 1) - 1.0;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= steps; ++k) {
    const double s = m * k / steps / p;
    double sse = 0.0;
    for (double v : x.values()) {
      const double c = std::clamp(std::nearbyint(v / s), -p - 1.0, p);
      sse += (v - s * c) * (v - s * c);
    }
    best = std::min(best, sse);
  }
  return best;
}

TEST(InitMse, SmallOutlierSetMatchesExhaustiveSearch) {
  // At 2 bits the clipping error of the outlier dominates every shrunken
  // candidate, so the full range is optimal here.
  Tensor x({6}, {-1.0, -0.5, 0.0, 0.5, 1.0, 100.0});
  auto tmpl = quantizer_template(Scheme::kSymmetric, 2);
  QuantizerState ms = init_mse(std::span(&x, 1), tmpl, 100);
  EXPECT_DOUBLE_EQ(reconstruction_sse(std::span(&x, 1), ms), exhaustive_symmetric_sse(x, 2, 100));
  EXPECT_DOUBLE_EQ(reconstruction_sse(std::span(&x, 1), ms), 2.5);
}

TEST(InitMse, OutlierIsClipped) {
  std::mt19937_64 rng(0);
  std::normal_distribution<double> normal;
  Tensor x({1001});
  for (int i = 0; i < 1000; ++i) x[i] = normal(rng);
  x[1000] = 8.0;
  auto tmpl = quantizer_template(Scheme::kSymmetric, 4);
  QuantizerState mm = init_minmax(std::span(&x, 1), tmpl);
  QuantizerState ms = init_mse(std::span(&x, 1), tmpl, 100);
  const double sse = reconstruction_sse(std::span(&x, 1), ms);
  EXPECT_DOUBLE_EQ(sse, exhaustive_symmetric_sse(x, 4, 100));
  EXPECT_LT(sse, reconstruction_sse(std::span(&x, 1), mm));
  EXPECT_LT(ms.scale[0] * 7.0, 8.0);
}

TEST(InitMse, NeverWorseThanMinMax) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> samples{random_tensor({8, 3}, rng, -2.0, 3.0),
                                random_tensor({8, 3}, rng, -1.0, 1.0)};
    for (Scheme scheme : {Scheme::kAsymmetric, Scheme::kSymmetric}) {
      for (int axis : {-1, 1}) {
        auto tmpl = quantizer_template(scheme, 2 + trial % 7, axis);
        EXPECT_LE(reconstruction_sse(samples, init_mse(samples, tmpl, 20)),
                  reconstruction_sse(samples, init_minmax(samples, tmpl)));
      }
    }
  }
}

TEST(InitMse, PerChannelNeverWorseThanPerTensor) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 200; ++trial) {
    // Channels of similar magnitude, where per-channel MinMax can lose.
    Tensor x({9, 3});
    for (double& v : x.values()) v = normal(rng);
    const std::span<const Tensor> s(&x, 1);
    for (Scheme scheme : {Scheme::kAsymmetric, Scheme::kSymmetric}) {
      const int bits = 2 + trial % 7;
      const double pt = reconstruction_sse(s, init_mse(s, quantizer_template(scheme, bits)));
      const double pc = reconstruction_sse(s, init_mse(s, quantizer_template(scheme, bits, 1)));
      EXPECT_LE(pc, pt * (1.0 + 1e-12)) << trial;
    }
  }
}

TEST(Surrogates, SteInsideGridPassesThrough) {
  Tensor x({3}, {0.1, -0.2, 5.0});
  Tensor up({3}, {1.0, 2.0, 3.0});
  auto q = quantizer_template(Scheme::kSymmetric, 4);
  q.scale = {0.1};
  q.zero_point = {0};
  q.degenerate = {false};
  Tensor g = ste_weight_grad(x, up, q);
  EXPECT_EQ(g, Tensor({3}, {1.0, 2.0, 0.0}));
}

TEST(Surrogates, LsqScaleGradientMatchesDefinition) {
  auto q = quantizer_template(Scheme::kSymmetric, 4);
  q.scale = {0.1};
  q.zero_point = {0};
  q.degenerate = {false};
  Tensor x({2}, {0.26, 5.0});
  Tensor up({2}, {1.0, 1.0});
  LsqGradients g = lsq_grads(x, up, q);
  const double k = 1.0 / std::sqrt(2.0 * 7.0);
  EXPECT_NEAR(g.scale[0], k * ((3.0 - 2.6) + 7.0), 1e-12);
  EXPECT_EQ(g.input, Tensor({2}, {1.0, 0.0}));
  EXPECT_EQ(g.zero_point[0], 0.0);
}

TEST(Surrogates, SoftroundLimitsAndRegularizer) {
  RoundingConstants c;
  EXPECT_EQ(softround(50.0, c), 1.0);
  EXPECT_EQ(softround(-50.0, c), 0.0);
  std::vector<double> binary{50.0, -50.0, 30.0};
  EXPECT_EQ(adaround_reg(binary, 2.0, c), 0.0);
  for (double h : {0.1, 0.37, 0.5, 0.93}) EXPECT_NEAR(softround(softround_inverse(h, c), c), h, 1e-12);
  EXPECT_DOUBLE_EQ(annealed_beta(0, 100, c), 20.0);
  EXPECT_DOUBLE_EQ(annealed_beta(99, 100, c), 2.0);
}

TEST(Surrogates, RegularizerGradient) {
  RoundingConstants c;
  std::vector<double> v{-1.3, -0.2, 0.05, 0.7, 2.1};
  for (double beta : {2.0, 7.5, 20.0}) {
    std::vector<double> g = adaround_reg_grad(v, beta, c);
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::vector<double> up = v, dn = v;
      up[i] += 1e-6;
      dn[i] -= 1e-6;
      const double fd = (adaround_reg(up, beta, c) - adaround_reg(dn, beta, c)) / 2e-6;
      EXPECT_NEAR(g[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

}  // namespace
}  // namespace tinyptq
