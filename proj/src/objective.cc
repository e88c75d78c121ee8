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

#include "tinyptq/objective.h"

#include <algorithm>
#include <cmath>

#include "tinyptq/error.h"

namespace tinyptq {

namespace {

constexpr double kMinRelativeScale = 1e-3;

struct ActParams {
  double scale = 1.0;
  double zero = 0.0;
  double anchor_scale = 1.0;
  double anchor_zero = 0.0;
  double base_scale = 1.0;
  std::int64_t param = -1;  // relative scale at param, zero-point at param + 1
};

// Activation quantizers evaluated through ste_surrogate().
class SurrogateHook : public EdgeHook {
 public:
  SurrogateHook(const std::map<int, ActivationQuantizer>& acts) : acts_(acts) {}

  std::map<int, ActParams> overrides;
  const std::map<int, Tensor>* anchors = nullptr;
  std::vector<double>* grad = nullptr;

  bool applies(int edge) const override {
    auto it = acts_.find(edge);
    return it != acts_.end() && it->second.q.enabled();
  }

  ActParams params(int edge) const {
    auto it = overrides.find(edge);
    if (it != overrides.end()) return it->second;
    const QuantizerState& q = acts_.at(edge).q;
    ActParams p;
    p.scale = p.anchor_scale = q.scale[0];
    p.zero = p.anchor_zero = static_cast<double>(q.zero_point[0]);
    return p;
  }

  const Tensor& anchor(int edge, const Tensor& raw) const {
    if (!anchors) return raw;
    auto it = anchors->find(edge);
    if (it == anchors->end() || it->second.shape() != raw.shape()) {
      throw StateError("missing anchor activation for edge " + std::to_string(edge));
    }
    return it->second;
  }

  Tensor forward(int edge, const Tensor& raw) const override {
    const QuantizerState& q = acts_.at(edge).q;
    const ActParams p = params(edge);
    const Tensor& a = anchor(edge, raw);
    Tensor out(raw.shape());
    for (std::int64_t i = 0; i < raw.size(); ++i) {
      out[i] = ste_surrogate(raw[i], p.scale, p.zero, a[i], p.anchor_scale, p.anchor_zero, q.qmin,
                             q.qmax, nullptr);
    }
    return out;
  }

  Tensor backward(int edge, const Tensor& raw, const Tensor& g) override {
    const QuantizerState& q = acts_.at(edge).q;
    const ActParams p = params(edge);
    const Tensor& a = anchor(edge, raw);
    Tensor out(raw.shape());
    double gs = 0.0, gz = 0.0;
    SteGrad d;
    for (std::int64_t i = 0; i < raw.size(); ++i) {
      ste_surrogate(raw[i], p.scale, p.zero, a[i], p.anchor_scale, p.anchor_zero, q.qmin, q.qmax, &d);
      out[i] = g[i] * d.x;
      gs += g[i] * d.scale;
      gz += g[i] * d.zero;
    }
    if (grad && p.param >= 0) {
      (*grad)[static_cast<std::size_t>(p.param)] += gs * p.base_scale;
      (*grad)[static_cast<std::size_t>(p.param) + 1] += gz;
    }
    return out;
  }

 private:
  const std::map<int, ActivationQuantizer>& acts_;
};

double at(std::span<const double> v, std::size_t i) { return v[i]; }

}  // namespace

UnitObjective::UnitObjective(const QuantizedGraph& qgraph, const OptimizationUnit& unit,
                             ObjectiveKind kind, std::vector<int> trainable_activations,
                             const RoundingConstants& rounding)
    : qgraph_(qgraph),
      unit_(unit),
      kind_(kind),
      trainable_(std::move(trainable_activations)),
      rounding_(rounding) {
  if (kind_ == ObjectiveKind::kBias) {
    unit_.first = 0;
    unit_.last = qgraph_.graph.size() - 1;
    unit_.weighted.clear();
    for (int l = 0; l < qgraph_.graph.size(); ++l) {
      if (qgraph_.graph.layers[static_cast<std::size_t>(l)].has_weights()) unit_.weighted.push_back(l);
    }
  }
  auto add_slot = [&](std::vector<Slot>& slots, Slot s) {
    s.offset = initial_.size();
    slots.push_back(std::move(s));
    initial_.resize(initial_.size() + slots.back().size);
    return slots.back().offset;
  };
  for (int l : unit_.weighted) {
    const WeightQuantizer& wq = qgraph_.weights[static_cast<std::size_t>(l)];
    const Layer& layer = qgraph_.graph.layers[static_cast<std::size_t>(l)];
    switch (kind_) {
      case ObjectiveKind::kWeights: {
        const std::size_t off = add_slot(weight_slots_, {l, -1, 0, static_cast<std::size_t>(wq.latent.size()), {}});
        std::copy(wq.latent.values().begin(), wq.latent.values().end(), initial_.begin() + static_cast<std::ptrdiff_t>(off));
        break;
      }
      case ObjectiveKind::kQparam: {
        if (!wq.q.enabled()) break;
        const std::size_t off = add_slot(weight_slots_, {l, -1, 0, wq.q.scale.size(), wq.q.scale});
        std::fill_n(initial_.begin() + static_cast<std::ptrdiff_t>(off), wq.q.scale.size(), 1.0);
        break;
      }
      case ObjectiveKind::kRound: {
        if (!wq.q.enabled()) break;
        const std::size_t off = add_slot(weight_slots_, {l, -1, 0, static_cast<std::size_t>(wq.latent.size()), {}});
        const Shape& shape = wq.latent.shape();
        for (std::int64_t i = 0; i < wq.latent.size(); ++i) {
          const double s = wq.q.scale[static_cast<std::size_t>(group_of(i, shape, wq.q.channel_axis))];
          const double u = wq.latent[i] / s;
          initial_[off + static_cast<std::size_t>(i)] = softround_inverse(u - std::floor(u), rounding_);
        }
        break;
      }
      case ObjectiveKind::kBias: {
        const std::size_t off = add_slot(weight_slots_, {l, -1, 0, static_cast<std::size_t>(layer.bias.size()), {}});
        std::copy(layer.bias.values().begin(), layer.bias.values().end(), initial_.begin() + static_cast<std::ptrdiff_t>(off));
        break;
      }
    }
  }
  if (kind_ == ObjectiveKind::kQparam) {
    for (int e : trainable_) {
      auto it = qgraph_.activations.find(e);
      if (it == qgraph_.activations.end() || !it->second.q.enabled()) continue;
      const std::size_t off = add_slot(act_slots_, {-1, e, 0, 2, {it->second.q.scale[0]}});
      initial_[off] = 1.0;
      initial_[off + 1] = static_cast<double>(it->second.q.zero_point[0]);
    }
  }
}

std::vector<double> UnitObjective::preconditioner(std::int64_t batch) const {
  std::vector<double> pre(initial_.size(), 1.0);
  if (kind_ != ObjectiveKind::kQparam) return pre;
  for (const Slot& s : weight_slots_) {
    const WeightQuantizer& wq = qgraph_.weights[static_cast<std::size_t>(s.layer)];
    const double k = lsq_gradient_scale(wq.latent.size() / wq.q.groups(), wq.q.qmax);
    std::fill_n(pre.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size, k);
  }
  const std::vector<Shape> shapes = qgraph_.graph.infer_shapes();
  for (const Slot& s : act_slots_) {
    const Shape& shape = s.edge == kGraphInput ? qgraph_.graph.input_shape
                                               : shapes[static_cast<std::size_t>(s.edge)];
    const double k = lsq_gradient_scale(batch * num_elements(shape),
                                        qgraph_.activations.at(s.edge).q.qmax);
    pre[s.offset] = k;
    pre[s.offset + 1] = k;
  }
  return pre;
}

void UnitObjective::project(std::span<double> params) const {
  if (kind_ != ObjectiveKind::kQparam) return;
  for (const Slot& s : weight_slots_) {
    for (std::size_t i = 0; i < s.size; ++i) {
      params[s.offset + i] = std::max(params[s.offset + i], kMinRelativeScale);
    }
  }
  for (const Slot& s : act_slots_) {
    const QuantizerState& q = qgraph_.activations.at(s.edge).q;
    params[s.offset] = std::max(params[s.offset], kMinRelativeScale);
    params[s.offset + 1] = std::clamp(params[s.offset + 1], static_cast<double>(q.qmin),
                                      static_cast<double>(q.qmax));
  }
}

Tensor UnitObjective::hardened_weight(int layer, std::span<const double> v) const {
  const WeightQuantizer& wq = qgraph_.weights[static_cast<std::size_t>(layer)];
  const double threshold = softround_inverse(0.5, rounding_);
  Tensor out(wq.latent.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const double s = wq.q.scale[static_cast<std::size_t>(group_of(i, out.shape(), wq.q.channel_axis))];
    const double u = wq.latent[i] / s;
    const double f = std::floor(u);
    const double vi = v[static_cast<std::size_t>(i)];
    double up;
    if (vi > threshold) up = 1.0;
    else if (vi < threshold) up = 0.0;
    else up = round_half_even(u) > f ? 1.0 : 0.0;
    const double c = std::clamp(f + up, static_cast<double>(wq.q.qmin), static_cast<double>(wq.q.qmax));
    out[i] = s * c;
  }
  return out;
}

std::vector<Tensor> UnitObjective::weights_for(std::span<const double> params,
                                               std::span<const double> anchor, bool hard) const {
  std::vector<Tensor> subs(qgraph_.graph.layers.size());
  for (int l : unit_.weighted) subs[static_cast<std::size_t>(l)] = qgraph_.effective_weight(l);
  for (const Slot& slot : weight_slots_) {
    const WeightQuantizer& wq = qgraph_.weights[static_cast<std::size_t>(slot.layer)];
    const QuantizerState& q = wq.q;
    Tensor& w = subs[static_cast<std::size_t>(slot.layer)];
    const Shape& shape = wq.latent.shape();
    switch (kind_) {
      case ObjectiveKind::kWeights:
        for (std::int64_t i = 0; i < w.size(); ++i) {
          const double x = at(params, slot.offset + static_cast<std::size_t>(i));
          if (!q.enabled()) {
            w[i] = x;
            continue;
          }
          const double s = q.scale[static_cast<std::size_t>(group_of(i, shape, q.channel_axis))];
          w[i] = ste_surrogate(x, s, 0.0, at(anchor, slot.offset + static_cast<std::size_t>(i)), s, 0.0,
                               q.qmin, q.qmax, nullptr);
        }
        break;
      case ObjectiveKind::kQparam:
        for (std::int64_t i = 0; i < w.size(); ++i) {
          const auto g = static_cast<std::size_t>(group_of(i, shape, q.channel_axis));
          const double s = at(params, slot.offset + g) * slot.base_scale[g];
          const double sa = at(anchor, slot.offset + g) * slot.base_scale[g];
          w[i] = ste_surrogate(wq.latent[i], s, 0.0, wq.latent[i], sa, 0.0, q.qmin, q.qmax, nullptr);
        }
        break;
      case ObjectiveKind::kRound:
        if (hard) {
          w = hardened_weight(slot.layer, params.subspan(slot.offset, slot.size));
          break;
        }
        for (std::int64_t i = 0; i < w.size(); ++i) {
          const double s = q.scale[static_cast<std::size_t>(group_of(i, shape, q.channel_axis))];
          const double t = std::floor(wq.latent[i] / s) +
                           softround(at(params, slot.offset + static_cast<std::size_t>(i)), rounding_);
          w[i] = s * std::clamp(t, static_cast<double>(q.qmin), static_cast<double>(q.qmax));
        }
        break;
      case ObjectiveKind::kBias:
        break;
    }
  }
  return subs;
}

Graph UnitObjective::graph_with_biases(std::span<const double> params) const {
  Graph g = qgraph_.graph;
  for (const Slot& slot : weight_slots_) {
    Tensor& b = g.layers[static_cast<std::size_t>(slot.layer)].bias;
    for (std::size_t i = 0; i < slot.size; ++i) b[static_cast<std::int64_t>(i)] = params[slot.offset + i];
  }
  return g;
}

double UnitObjective::loss(std::span<const double> params, const UnitBatch& batch, double beta,
                           std::vector<double>* grad, std::span<const double> anchor) const {
  if (params.size() != initial_.size()) throw StructuralError("objective parameter size mismatch");
  const bool anchored = !anchor.empty() && !std::equal(anchor.begin(), anchor.end(), params.begin(), params.end());
  if (anchor.empty()) anchor = params;

  const bool bias = kind_ == ObjectiveKind::kBias;
  Graph biased;
  if (bias) biased = graph_with_biases(params);
  const Graph& graph = bias ? biased : qgraph_.graph;

  auto make_hook = [&](std::span<const double> p, std::span<const double> a) {
    SurrogateHook hook(qgraph_.activations);
    for (const Slot& s : act_slots_) {
      ActParams ap;
      ap.base_scale = s.base_scale[0];
      ap.scale = p[s.offset] * ap.base_scale;
      ap.zero = p[s.offset + 1];
      ap.anchor_scale = a[s.offset] * ap.base_scale;
      ap.anchor_zero = a[s.offset + 1];
      ap.param = static_cast<std::int64_t>(s.offset);
      hook.overrides[s.edge] = ap;
    }
    return hook;
  };

  std::map<int, Tensor> anchor_values;
  if (anchored) {
    Graph anchor_biased;
    if (bias) anchor_biased = graph_with_biases(anchor);
    const std::vector<Tensor> subs = weights_for(anchor, anchor, false);
    SurrogateHook hook = make_hook(anchor, anchor);
    ExecOptions opt{&subs, &hook};
    RangeTrace t = forward_range(bias ? anchor_biased : qgraph_.graph, unit_.first, unit_.last,
                                 batch.inputs, opt);
    for (const auto& [edge, value] : t.hooked) anchor_values.emplace(edge, t.raw(edge));
  }

  const std::vector<Tensor> subs = weights_for(params, anchor, false);
  SurrogateHook hook = make_hook(params, anchor);
  if (anchored) hook.anchors = &anchor_values;
  ExecOptions opt{&subs, &hook};
  RangeTrace trace = forward_range(graph, unit_.first, unit_.last, batch.inputs, opt);
  const Tensor& out = trace.output();
  if (out.shape() != batch.target.shape()) {
    throw StructuralError("unit '" + unit_.name + "' output " + shape_string(out.shape()) +
                          " does not match target " + shape_string(batch.target.shape()));
  }
  const std::int64_t n = out.dim(0);
  const double denom = kind_ == ObjectiveKind::kRound ? static_cast<double>(n)
                                                      : static_cast<double>(out.size());
  Tensor upstream(out.shape());
  double sse = 0.0;
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const double d = out[i] - batch.target[i];
    sse += d * d;
    upstream[i] = 2.0 * d / denom;
  }
  double value = sse / denom;

  if (grad) {
    grad->assign(initial_.size(), 0.0);
    hook.grad = grad;
    const unsigned wrt = bias ? kGradBiases : (act_slots_.empty() && weight_slots_.empty() ? 0u : kGradWeights);
    GraphGradients g = backward_range(graph, trace, upstream, wrt, opt);
    for (const Slot& slot : weight_slots_) {
      const auto li = static_cast<std::size_t>(slot.layer);
      if (bias) {
        for (std::size_t i = 0; i < slot.size; ++i) (*grad)[slot.offset + i] = g.biases[li][static_cast<std::int64_t>(i)];
        continue;
      }
      const WeightQuantizer& wq = qgraph_.weights[li];
      const QuantizerState& q = wq.q;
      const Tensor& gw = g.weights[li];
      const Shape& shape = wq.latent.shape();
      SteGrad d;
      for (std::int64_t i = 0; i < gw.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        switch (kind_) {
          case ObjectiveKind::kWeights: {
            if (!q.enabled()) {
              (*grad)[slot.offset + k] = gw[i];
              break;
            }
            const double s = q.scale[static_cast<std::size_t>(group_of(i, shape, q.channel_axis))];
            ste_surrogate(params[slot.offset + k], s, 0.0, anchor[slot.offset + k], s, 0.0, q.qmin, q.qmax, &d);
            (*grad)[slot.offset + k] = gw[i] * d.x;
            break;
          }
          case ObjectiveKind::kQparam: {
            const auto c = static_cast<std::size_t>(group_of(i, shape, q.channel_axis));
            const double base = slot.base_scale[c];
            ste_surrogate(wq.latent[i], params[slot.offset + c] * base, 0.0, wq.latent[i],
                          anchor[slot.offset + c] * base, 0.0, q.qmin, q.qmax, &d);
            (*grad)[slot.offset + c] += gw[i] * d.scale * base;
            break;
          }
          case ObjectiveKind::kRound: {
            const double s = q.scale[static_cast<std::size_t>(group_of(i, shape, q.channel_axis))];
            const double v = params[slot.offset + k];
            const double t = std::floor(wq.latent[i] / s) + softround(v, rounding_);
            if (t >= static_cast<double>(q.qmin) && t <= static_cast<double>(q.qmax)) {
              (*grad)[slot.offset + k] = gw[i] * s * softround_grad(v, rounding_);
            }
            break;
          }
          case ObjectiveKind::kBias:
            break;
        }
      }
    }
  }

  if (kind_ == ObjectiveKind::kRound && rounding_.lambda > 0.0) {
    for (const Slot& slot : weight_slots_) {
      std::span<const double> v = params.subspan(slot.offset, slot.size);
      value += rounding_.lambda * adaround_reg(v, beta, rounding_);
      if (grad) {
        const std::vector<double> rg = adaround_reg_grad(v, beta, rounding_);
        for (std::size_t i = 0; i < slot.size; ++i) (*grad)[slot.offset + i] += rounding_.lambda * rg[i];
      }
    }
  }
  return value;
}

std::pair<double, std::int64_t> UnitObjective::hard_sse(std::span<const double> params,
                                                        const UnitBatch& batch) const {
  const bool bias = kind_ == ObjectiveKind::kBias;
  Graph biased;
  if (bias) biased = graph_with_biases(params);
  const std::vector<Tensor> subs = weights_for(params, params, true);
  SurrogateHook hook(qgraph_.activations);
  for (const Slot& s : act_slots_) {
    ActParams ap;
    ap.scale = ap.anchor_scale = params[s.offset] * s.base_scale[0];
    ap.zero = ap.anchor_zero = params[s.offset + 1];
    hook.overrides[s.edge] = ap;
  }
  ExecOptions opt{&subs, &hook};
  RangeTrace trace = forward_range(bias ? biased : qgraph_.graph, unit_.first, unit_.last, batch.inputs, opt);
  const Tensor& out = trace.output();
  if (out.shape() != batch.target.shape()) {
    throw StructuralError("unit '" + unit_.name + "' output does not match its target");
  }
  return {sum_squared_error(out, batch.target), out.size()};
}

void UnitObjective::commit(std::span<const double> params, QuantizedGraph& qgraph) const {
  for (const Slot& slot : weight_slots_) {
    const auto li = static_cast<std::size_t>(slot.layer);
    WeightQuantizer& wq = qgraph.weights[li];
    switch (kind_) {
      case ObjectiveKind::kWeights:
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(slot.offset), slot.size, wq.latent.values().begin());
        break;
      case ObjectiveKind::kQparam:
        for (std::size_t c = 0; c < slot.size; ++c) wq.q.scale[c] = params[slot.offset + c] * slot.base_scale[c];
        break;
      case ObjectiveKind::kRound:
        wq.latent = hardened_weight(slot.layer, params.subspan(slot.offset, slot.size));
        break;
      case ObjectiveKind::kBias: {
        Tensor& b = qgraph.graph.layers[li].bias;
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(slot.offset), slot.size, b.values().begin());
        break;
      }
    }
  }
  for (const Slot& slot : act_slots_) {
    QuantizerState& q = qgraph.activations.at(slot.edge).q;
    q.scale[0] = params[slot.offset] * slot.base_scale[0];
    q.zero_point[0] = static_cast<std::int64_t>(std::clamp(round_half_even(params[slot.offset + 1]),
                                                           static_cast<double>(q.qmin),
                                                           static_cast<double>(q.qmax)));
  }
}

}  // namespace tinyptq
