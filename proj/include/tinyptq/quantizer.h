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
#include <span>
#include <vector>

#include "tinyptq/tensor.h"

namespace tinyptq {

enum class Scheme { kAsymmetric, kSymmetric };

/// Bitwidth that disables quantization (identity pass-through).
inline constexpr int kFullPrecisionBits = 32;

// Simulated-quantization parameters:
//   x_hat = s * (clamp(round(x / s) + z, n, p) - z)
// with one (s, z) pair per group. channel_axis < 0 means per-tensor.
struct QuantizerState {
  Scheme scheme = Scheme::kSymmetric;
  int channel_axis = -1;
  int bits = 8;
  std::vector<double> scale;
  std::vector<std::int64_t> zero_point;
  std::int64_t qmin = 0;
  std::int64_t qmax = 0;
  /// Groups whose clipping range was degenerate (fallback scale applied).
  std::vector<bool> degenerate;

  bool enabled() const noexcept { return bits < kFullPrecisionBits; }
  bool per_channel() const noexcept { return channel_axis >= 0; }
  std::int64_t groups() const noexcept { return static_cast<std::int64_t>(scale.size()); }

  /// Throws StructuralError when the invariants do not hold for `shape`.
  void validate(const Shape& shape) const;
};

/// Grid bounds for a scheme/bitwidth: asymmetric [0, 2^b - 1], symmetric
/// [-2^(b-1), 2^(b-1) - 1].
std::pair<std::int64_t, std::int64_t> grid_bounds(int bits, Scheme scheme);

/// Unfitted quantizer describing scheme, granularity and bitwidth.
QuantizerState quantizer_template(Scheme scheme, int bits, int channel_axis = -1);

/// Round half to even.
double round_half_even(double v);

double quantize_value(double x, double scale, std::int64_t zero_point, std::int64_t qmin,
                      std::int64_t qmax);

/// Integer code clamp(round(x / s) + z, n, p).
std::int64_t quantize_code(double x, double scale, std::int64_t zero_point, std::int64_t qmin,
                           std::int64_t qmax);

/// Group index of every element of a tensor of `shape`.
std::int64_t group_of(std::int64_t flat_index, const Shape& shape, int channel_axis);

Tensor quantize(const Tensor& x, const QuantizerState& q);

struct RangeParams {
  double scale = 1.0;
  std::int64_t zero_point = 0;
  std::int64_t qmin = 0;
  std::int64_t qmax = 0;
  bool degenerate = false;
};

/// Scale and zero-point from a clipping range [alpha, beta]. Asymmetric
/// ranges are widened to contain zero. A range narrower than 1e-12 yields
/// scale 1e-8, zero-point 0 and the degenerate flag.
RangeParams qparams_from_range(double alpha, double beta, int bits, Scheme scheme);

inline constexpr double kDegenerateRange = 1e-12;
inline constexpr double kDegenerateScale = 1e-8;

/// Per-group (min, max) over all samples.
std::vector<std::pair<double, double>> group_ranges(std::span<const Tensor> samples,
                                                    int channel_axis);

/// Clipping range = global min/max per group. Throws ConfigError on an empty
/// sample list.
QuantizerState init_minmax(std::span<const Tensor> samples, const QuantizerState& tmpl);

/// Searches ranges k/grid_steps * (min, max), k = 1..grid_steps, per group and
/// keeps the one with the smallest squared reconstruction error. k = grid_steps
/// is the MinMax range, which wins ties.
QuantizerState init_mse(std::span<const Tensor> samples, const QuantizerState& tmpl,
                        int grid_steps = 100);

/// Sum of squared reconstruction error over all samples.
double reconstruction_sse(std::span<const Tensor> samples, const QuantizerState& q);

// ---- gradient surrogates ----

/// Straight-through estimate: upstream gradient where the unclamped code lies
/// in [n, p], zero elsewhere.
Tensor ste_weight_grad(const Tensor& x, const Tensor& upstream, const QuantizerState& q);

struct LsqGradients {
  /// Gradient w.r.t. the input (straight-through inside the grid).
  Tensor input;
  /// Per-group gradient w.r.t. the scale, multiplied by 1/sqrt(count * p).
  std::vector<double> scale;
  /// Per-group gradient w.r.t. a continuous zero-point (zero for symmetric).
  std::vector<double> zero_point;
};

/// Learned-step-size gradients for x_hat = quantize(x, q).
LsqGradients lsq_grads(const Tensor& x, const Tensor& upstream, const QuantizerState& q);

/// 1 / sqrt(count * p), the LSQ gradient scale for a group of `count`
/// elements.
double lsq_gradient_scale(std::int64_t count, std::int64_t qmax);

// Straight-through surrogate of quantize_value() linearised at an anchor
// point. The rounding residual and the clipping decision come from the anchor
// (anchor_x, anchor_scale, anchor_zero); `zero` is a continuous zero-point
// whose forward value is round(anchor_zero) + (zero - anchor_zero). At the
// anchor the result equals quantize_value() exactly, and the partial
// derivatives are the STE / learned-step-size gradients.
struct SteGrad {
  double x = 0.0;
  double scale = 0.0;
  double zero = 0.0;
};
double ste_surrogate(double x, double scale, double zero, double anchor_x, double anchor_scale,
                     double anchor_zero, std::int64_t qmin, std::int64_t qmax, SteGrad* grad);

struct RoundingConstants {
  double zeta = 1.1;
  double gamma = -0.1;
  double lambda = 0.01;
  double beta_start = 20.0;
  double beta_end = 2.0;
};

/// Rectified sigmoid h(v) = clamp(sigmoid(v) * (zeta - gamma) + gamma, 0, 1).
double softround(double v, const RoundingConstants& c);
/// dh/dv (zero where the clamp is active).
double softround_grad(double v, const RoundingConstants& c);
/// Inverse of the unclamped rectified sigmoid, for h in (0, 1).
double softround_inverse(double h, const RoundingConstants& c);

/// sum(1 - |2 h(v) - 1|^beta)
double adaround_reg(std::span<const double> v, double beta, const RoundingConstants& c);
/// d reg / d v, elementwise.
std::vector<double> adaround_reg_grad(std::span<const double> v, double beta,
                                      const RoundingConstants& c);

/// Annealed beta at iteration `iter` of `total` (linear start -> end).
double annealed_beta(int iter, int total, const RoundingConstants& c);

}  // namespace tinyptq
