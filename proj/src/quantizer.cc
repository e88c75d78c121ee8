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

#include "tinyptq/quantizer.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tinyptq/error.h"

namespace tinyptq {

std::pair<std::int64_t, std::int64_t> grid_bounds(int bits, Scheme scheme) {
  if (bits < 2 || bits > 16) throw ConfigError("bitwidth must be in [2, 16], got " + std::to_string(bits));
  if (scheme == Scheme::kAsymmetric) return {0, (std::int64_t{1} << bits) - 1};
  return {-(std::int64_t{1} << (bits - 1)), (std::int64_t{1} << (bits - 1)) - 1};
}

QuantizerState quantizer_template(Scheme scheme, int bits, int channel_axis) {
  QuantizerState q;
  q.scheme = scheme;
  q.bits = bits;
  q.channel_axis = channel_axis;
  if (q.enabled()) std::tie(q.qmin, q.qmax) = grid_bounds(bits, scheme);
  return q;
}

void QuantizerState::validate(const Shape& shape) const {
  if (!enabled()) return;
  if (qmin >= qmax) throw StructuralError("quantizer grid bounds must satisfy n < p");
  const std::int64_t want =
      per_channel() ? (channel_axis < static_cast<int>(shape.size())
                           ? shape[static_cast<std::size_t>(channel_axis)]
                           : -1)
                    : 1;
  if (want < 0) throw StructuralError("quantizer channel axis out of range for " + shape_string(shape));
  if (groups() != want || static_cast<std::int64_t>(zero_point.size()) != want) {
    throw StructuralError("quantizer has " + std::to_string(groups()) + " groups, tensor " +
                          shape_string(shape) + " needs " + std::to_string(want));
  }
  for (std::int64_t g = 0; g < want; ++g) {
    if (!(scale[static_cast<std::size_t>(g)] > 0.0)) throw StructuralError("quantizer scale must be positive");
    const auto z = zero_point[static_cast<std::size_t>(g)];
    if (scheme == Scheme::kSymmetric && z != 0) throw StructuralError("symmetric zero-point must be 0");
    if (z < qmin || z > qmax) throw StructuralError("zero-point outside the grid");
  }
}

double round_half_even(double v) { return std::nearbyint(v); }

std::int64_t quantize_code(double x, double scale, std::int64_t zero_point, std::int64_t qmin,
                           std::int64_t qmax) {
  const double c = round_half_even(x / scale) + static_cast<double>(zero_point);
  return static_cast<std::int64_t>(std::clamp(c, static_cast<double>(qmin), static_cast<double>(qmax)));
}

double quantize_value(double x, double scale, std::int64_t zero_point, std::int64_t qmin,
                      std::int64_t qmax) {
  return scale * static_cast<double>(quantize_code(x, scale, zero_point, qmin, qmax) - zero_point);
}

std::int64_t group_of(std::int64_t flat_index, const Shape& shape, int channel_axis) {
  if (channel_axis < 0) return 0;
  std::int64_t inner = 1;
  for (std::size_t i = static_cast<std::size_t>(channel_axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  return (flat_index / inner) % shape[static_cast<std::size_t>(channel_axis)];
}

namespace {

// Calls fn(index, group) for every element; specialised for the common
// per-tensor and last-axis layouts.
template <typename Fn>
void for_each_grouped(const Shape& shape, int channel_axis, Fn&& fn) {
  const std::int64_t n = num_elements(shape);
  if (channel_axis < 0) {
    for (std::int64_t i = 0; i < n; ++i) fn(i, std::int64_t{0});
    return;
  }
  if (static_cast<std::size_t>(channel_axis) + 1 == shape.size()) {
    const std::int64_t c = shape.back();
    for (std::int64_t i = 0; i < n; ++i) fn(i, i % c);
    return;
  }
  for (std::int64_t i = 0; i < n; ++i) fn(i, group_of(i, shape, channel_axis));
}

std::int64_t group_count(std::span<const Tensor> samples, int channel_axis) {
  if (channel_axis < 0) return 1;
  const Shape& s = samples.front().shape();
  if (channel_axis >= static_cast<int>(s.size())) throw StructuralError("channel axis out of range");
  return s[static_cast<std::size_t>(channel_axis)];
}

}  // namespace

Tensor quantize(const Tensor& x, const QuantizerState& q) {
  if (!q.enabled()) return x;
  q.validate(x.shape());
  Tensor out(x.shape());
  for_each_grouped(x.shape(), q.channel_axis, [&](std::int64_t i, std::int64_t g) {
    const auto gi = static_cast<std::size_t>(g);
    out[i] = quantize_value(x[i], q.scale[gi], q.zero_point[gi], q.qmin, q.qmax);
  });
  return out;
}

RangeParams qparams_from_range(double alpha, double beta, int bits, Scheme scheme) {
  RangeParams r;
  std::tie(r.qmin, r.qmax) = grid_bounds(bits, scheme);
  // Degeneracy is judged on the range the grid covers: widened to include 0
  // (asymmetric) or mirrored around 0 (symmetric).
  const double lo = std::min(alpha, 0.0), hi = std::max(beta, 0.0);
  const double width = scheme == Scheme::kAsymmetric ? hi - lo : 2.0 * std::max(-lo, hi);
  if (!(width >= kDegenerateRange)) {
    r.scale = kDegenerateScale;
    r.zero_point = 0;
    if (scheme == Scheme::kAsymmetric) r.zero_point = r.qmin;
    r.degenerate = true;
    return r;
  }
  if (scheme == Scheme::kAsymmetric) {
    alpha = std::min(alpha, 0.0);
    beta = std::max(beta, 0.0);
    r.scale = (beta - alpha) / static_cast<double>(r.qmax - r.qmin);
    const double z = round_half_even(-alpha / r.scale) + static_cast<double>(r.qmin);
    r.zero_point = static_cast<std::int64_t>(std::clamp(z, static_cast<double>(r.qmin),
                                                        static_cast<double>(r.qmax)));
  } else {
    const double m = std::max(std::abs(alpha), std::abs(beta));
    r.scale = m / static_cast<double>(r.qmax);
    r.zero_point = 0;
  }
  return r;
}

std::vector<std::pair<double, double>> group_ranges(std::span<const Tensor> samples,
                                                    int channel_axis) {
  if (samples.empty()) throw ConfigError("quantizer initialization needs at least one sample");
  const std::int64_t groups = group_count(samples, channel_axis);
  std::vector<std::pair<double, double>> ranges(
      static_cast<std::size_t>(groups),
      {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
  for (const Tensor& t : samples) {
    for_each_grouped(t.shape(), channel_axis, [&](std::int64_t i, std::int64_t g) {
      auto& r = ranges[static_cast<std::size_t>(g)];
      r.first = std::min(r.first, t[i]);
      r.second = std::max(r.second, t[i]);
    });
  }
  for (auto& r : ranges) {
    if (r.first > r.second) r = {0.0, 0.0};  // empty group
  }
  return ranges;
}

namespace {

void set_group(QuantizerState& q, std::size_t g, const RangeParams& r) {
  q.scale[g] = r.scale;
  q.zero_point[g] = r.zero_point;
  q.degenerate[g] = r.degenerate;
}

QuantizerState sized_like(const QuantizerState& tmpl, std::size_t groups) {
  QuantizerState q = tmpl;
  std::tie(q.qmin, q.qmax) = grid_bounds(q.bits, q.scheme);
  q.scale.assign(groups, 1.0);
  q.zero_point.assign(groups, 0);
  q.degenerate.assign(groups, false);
  return q;
}

}  // namespace

QuantizerState init_minmax(std::span<const Tensor> samples, const QuantizerState& tmpl) {
  if (samples.empty()) throw ConfigError("quantizer initialization needs at least one sample");
  if (!tmpl.enabled()) return tmpl;
  const auto ranges = group_ranges(samples, tmpl.channel_axis);
  QuantizerState q = sized_like(tmpl, ranges.size());
  for (std::size_t g = 0; g < ranges.size(); ++g) {
    set_group(q, g, qparams_from_range(ranges[g].first, ranges[g].second, q.bits, q.scheme));
  }
  return q;
}

QuantizerState init_mse(std::span<const Tensor> samples, const QuantizerState& tmpl,
                        int grid_steps) {
  if (samples.empty()) throw ConfigError("quantizer initialization needs at least one sample");
  if (grid_steps < 2) throw ConfigError("MSE grid needs at least 2 steps");
  if (!tmpl.enabled()) return tmpl;
  const auto ranges = group_ranges(samples, tmpl.channel_axis);
  const std::size_t groups = ranges.size();
  QuantizerState best = init_minmax(samples, tmpl);
  std::vector<double> best_err(groups, std::numeric_limits<double>::infinity());

  QuantizerState cand = best;
  std::vector<double> err(groups);
  // Per-channel searches also try the tensor-wide ranges.
  std::pair<double, double> whole = ranges.front();
  for (const auto& r : ranges) whole = {std::min(whole.first, r.first), std::max(whole.second, r.second)};
  const int passes = tmpl.per_channel() && groups > 1 ? 2 : 1;
  for (int pass = 0; pass < passes; ++pass) {
    // k = grid_steps first so that the MinMax range wins ties.
    for (int k = grid_steps; k >= 1; --k) {
      const double f = static_cast<double>(k) / static_cast<double>(grid_steps);
      for (std::size_t g = 0; g < groups; ++g) {
        if (best.degenerate[g]) continue;
        const auto& range = pass == 0 ? ranges[g] : whole;
        set_group(cand, g, qparams_from_range(range.first * f, range.second * f, cand.bits, cand.scheme));
      }
      std::fill(err.begin(), err.end(), 0.0);
      for (const Tensor& t : samples) {
        for_each_grouped(t.shape(), cand.channel_axis, [&](std::int64_t i, std::int64_t g) {
          const auto gi = static_cast<std::size_t>(g);
          const double d =
              t[i] - quantize_value(t[i], cand.scale[gi], cand.zero_point[gi], cand.qmin, cand.qmax);
          err[gi] += d * d;
        });
      }
      for (std::size_t g = 0; g < groups; ++g) {
        if (best.degenerate[g] || cand.degenerate[g]) continue;
        if (err[g] < best_err[g]) {
          best_err[g] = err[g];
          best.scale[g] = cand.scale[g];
          best.zero_point[g] = cand.zero_point[g];
        }
      }
    }
  }
  return best;
}

double reconstruction_sse(std::span<const Tensor> samples, const QuantizerState& q) {
  double acc = 0.0;
  for (const Tensor& t : samples) acc += sum_squared_error(t, quantize(t, q));
  return acc;
}

Tensor ste_weight_grad(const Tensor& x, const Tensor& upstream, const QuantizerState& q) {
  if (x.shape() != upstream.shape()) throw StructuralError("ste_weight_grad: shape mismatch");
  if (!q.enabled()) return upstream;
  Tensor g = upstream;
  for_each_grouped(x.shape(), q.channel_axis, [&](std::int64_t i, std::int64_t grp) {
    const auto gi = static_cast<std::size_t>(grp);
    const double c = round_half_even(x[i] / q.scale[gi]) + static_cast<double>(q.zero_point[gi]);
    if (c < static_cast<double>(q.qmin) || c > static_cast<double>(q.qmax)) g[i] = 0.0;
  });
  return g;
}

double lsq_gradient_scale(std::int64_t count, std::int64_t qmax) {
  return 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(count, 1)) *
                         static_cast<double>(std::max<std::int64_t>(qmax, 1)));
}

LsqGradients lsq_grads(const Tensor& x, const Tensor& upstream, const QuantizerState& q) {
  if (x.shape() != upstream.shape()) throw StructuralError("lsq_grads: shape mismatch");
  LsqGradients out;
  out.input = upstream;
  if (!q.enabled()) return out;
  const auto groups = static_cast<std::size_t>(q.groups());
  out.scale.assign(groups, 0.0);
  out.zero_point.assign(groups, 0.0);
  std::vector<std::int64_t> counts(groups, 0);
  const double n = static_cast<double>(q.qmin);
  const double p = static_cast<double>(q.qmax);
  for_each_grouped(x.shape(), q.channel_axis, [&](std::int64_t i, std::int64_t grp) {
    const auto gi = static_cast<std::size_t>(grp);
    const double s = q.scale[gi];
    const double z = static_cast<double>(q.zero_point[gi]);
    const double u = x[i] / s;
    const double r = round_half_even(u);
    const double c = r + z;
    const double g = upstream[i];
    ++counts[gi];
    if (c < n) {
      out.input[i] = 0.0;
      out.scale[gi] += g * (n - z);
      out.zero_point[gi] += -g * s;
    } else if (c > p) {
      out.input[i] = 0.0;
      out.scale[gi] += g * (p - z);
      out.zero_point[gi] += -g * s;
    } else {
      out.scale[gi] += g * (r - u);
    }
  });
  for (std::size_t g = 0; g < groups; ++g) {
    const double k = lsq_gradient_scale(counts[g], q.qmax);
    out.scale[g] *= k;
    out.zero_point[g] = q.scheme == Scheme::kSymmetric ? 0.0 : out.zero_point[g] * k;
  }
  return out;
}

double ste_surrogate(double x, double scale, double zero, double anchor_x, double anchor_scale,
                     double anchor_zero, std::int64_t qmin, std::int64_t qmax, SteGrad* grad) {
  const double zr = round_half_even(anchor_zero);
  const double z = zr + (zero - anchor_zero);
  const double u = anchor_x / anchor_scale;
  const double r = round_half_even(u);
  const double c = r + zr;
  const double n = static_cast<double>(qmin);
  const double p = static_cast<double>(qmax);
  const bool at_anchor = x == anchor_x && scale == anchor_scale && zero == anchor_zero;
  if (c < n || c > p) {
    const double edge = c < n ? n : p;
    if (grad) *grad = {0.0, edge - z, -scale};
    return scale * (edge - z);
  }
  if (grad) *grad = {1.0, r - u, 0.0};
  return at_anchor ? scale * r : x + scale * (r - u);
}

double softround(double v, const RoundingConstants& c) {
  const double sig = 1.0 / (1.0 + std::exp(-v));
  return std::clamp(sig * (c.zeta - c.gamma) + c.gamma, 0.0, 1.0);
}

double softround_grad(double v, const RoundingConstants& c) {
  const double sig = 1.0 / (1.0 + std::exp(-v));
  const double h = sig * (c.zeta - c.gamma) + c.gamma;
  if (h <= 0.0 || h >= 1.0) return 0.0;
  return sig * (1.0 - sig) * (c.zeta - c.gamma);
}

double softround_inverse(double h, const RoundingConstants& c) {
  const double sig = (h - c.gamma) / (c.zeta - c.gamma);
  return std::log(sig / (1.0 - sig));
}

double adaround_reg(std::span<const double> v, double beta, const RoundingConstants& c) {
  double acc = 0.0;
  for (double x : v) acc += 1.0 - std::pow(std::abs(2.0 * softround(x, c) - 1.0), beta);
  return acc;
}

std::vector<double> adaround_reg_grad(std::span<const double> v, double beta,
                                      const RoundingConstants& c) {
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = 2.0 * softround(v[i], c) - 1.0;
    const double dh = softround_grad(v[i], c);
    if (dh == 0.0 || d == 0.0) continue;
    g[i] = -beta * std::pow(std::abs(d), beta - 1.0) * (d > 0 ? 1.0 : -1.0) * 2.0 * dh;
  }
  return g;
}

double annealed_beta(int iter, int total, const RoundingConstants& c) {
  const double t = total > 1 ? std::clamp(static_cast<double>(iter) / (total - 1), 0.0, 1.0) : 1.0;
  return c.beta_start + (c.beta_end - c.beta_start) * t;
}

}  // namespace tinyptq
