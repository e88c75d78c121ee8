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
#include <numeric>
#include <random>

#include "internal.h"
#include "tinyptq/error.h"
#include "tinyptq/layers.h"
#include "tinyptq/models.h"
#include "tinyptq/objective.h"
#include "tinyptq/ptq.h"

namespace tinyptq {

namespace {

constexpr std::int64_t kEvalChunk = 128;

std::string strategy_step(Strategy s) { return std::string(to_string(s)); }

std::vector<std::int64_t> permutation(std::int64_t n, std::uint64_t seed) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Walks a seeded permutation of the samples, wrapping around.
class BatchSampler {
 public:
  BatchSampler(std::int64_t n, std::int64_t batch, std::uint64_t seed)
      : order_(permutation(n, seed)), batch_(std::min(batch, n)) {}

  std::vector<std::int64_t> next() {
    std::vector<std::int64_t> rows(static_cast<std::size_t>(batch_));
    for (auto& r : rows) {
      r = order_[pos_];
      pos_ = (pos_ + 1) % order_.size();
    }
    return rows;
  }

 private:
  std::vector<std::int64_t> order_;
  std::int64_t batch_;
  std::size_t pos_ = 0;
};

UnitBatch gather(const UnitBatch& all, std::span<const std::int64_t> rows) {
  UnitBatch b;
  for (const auto& [edge, value] : all.inputs) b.inputs.emplace(edge, gather_rows(value, rows));
  b.target = gather_rows(all.target, rows);
  return b;
}

UnitBatch slice(const UnitBatch& all, std::int64_t begin, std::int64_t count) {
  UnitBatch b;
  for (const auto& [edge, value] : all.inputs) b.inputs.emplace(edge, slice_rows(value, begin, count));
  b.target = slice_rows(all.target, begin, count);
  return b;
}

double hard_mse(const UnitObjective& obj, std::span<const double> params, const UnitBatch& all) {
  const std::int64_t n = all.target.dim(0);
  double sse = 0.0;
  std::int64_t count = 0;
  for (std::int64_t b = 0; b < n; b += kEvalChunk) {
    const auto [s, c] = obj.hard_sse(params, slice(all, b, std::min(kEvalChunk, n - b)));
    sse += s;
    count += c;
  }
  return count ? sse / static_cast<double>(count) : 0.0;
}

class Adam {
 public:
  Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

struct GradientRun {
  int iters = 0;
  int batch_size = 32;
  int eval_every = 100;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::string step;
  std::string unit;
};

// Adam on a unit objective with full-calibration evaluation of the quantized
// loss; the best evaluated iterate is committed.
void run_gradient(const UnitObjective& obj, const UnitBatch& data, const GradientRun& run,
                  const RoundingConstants& rounding, QuantizedGraph& qgraph, RunLog* log) {
  std::vector<double> params = obj.initial();
  const double initial = hard_mse(obj, params, data);
  if (log) log->entries.push_back({run.step, run.unit, 0, initial});
  std::vector<double> best = params;
  double best_loss = initial;

  if (obj.size() > 0 && run.iters > 0) {
    const std::int64_t n = data.target.dim(0);
    BatchSampler sampler(n, run.batch_size, run.seed);
    const std::vector<double> pre = obj.preconditioner(std::min<std::int64_t>(run.batch_size, n));
    Adam adam(params.size(), run.learning_rate);
    std::vector<double> grad;
    for (int it = 1; it <= run.iters; ++it) {
      const UnitBatch batch = gather(data, sampler.next());
      const double beta = annealed_beta(it - 1, run.iters, rounding);
      obj.loss(params, batch, beta, &grad);
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= pre[i];
      adam.step(params, grad);
      obj.project(params);
      if (it % run.eval_every == 0 || it == run.iters) {
        const double l = hard_mse(obj, params, data);
        if (log) log->entries.push_back({run.step, run.unit, it, l});
        if (l < best_loss) {
          best_loss = l;
          best = params;
        }
      }
    }
  }
  obj.commit(best, qgraph);
  if (log) log->units.push_back({run.step, run.unit, initial, best_loss});
}

// ---- opt_bits ----

struct BitsProblem {
  int layer = -1;
  bool relu = false;
  std::int64_t channels = 0;
  std::int64_t rows = 0;  // output positions per channel
  std::int64_t taps = 0;  // weights per channel
  bool shared = true;     // one column matrix for all channels
  // Column matrices stored transposed (taps x rows), one per channel unless
  // shared. Entry [k][m] is the input multiplying weight k at position m.
  std::vector<std::vector<double>> cols;
  std::vector<double> bias;
  // Targets per channel, rows long.
  std::vector<std::vector<double>> target;
};

// Flat weight index of tap k in channel c; every layout keeps the output
// channel innermost.
std::int64_t weight_index(std::int64_t c, std::int64_t k, std::int64_t channels) { return k * channels + c; }

BitsProblem build_bits_problem(const Layer& layer, int index, bool relu, const Tensor& x,
                               const Tensor& target) {
  BitsProblem p;
  p.layer = index;
  p.relu = relu;
  const Shape& ws = layer.weight.shape();
  p.channels = ws.back();
  p.bias.assign(static_cast<std::size_t>(p.channels), 0.0);
  for (std::int64_t c = 0; c < layer.bias.size(); ++c) p.bias[static_cast<std::size_t>(c)] = layer.bias[c];

  if (layer.kind == LayerKind::kFullyConnected) {
    const std::int64_t n = x.dim(0), cin = x.dim(1);
    p.rows = n;
    p.taps = cin;
    p.cols.assign(1, std::vector<double>(static_cast<std::size_t>(cin * n)));
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t k = 0; k < cin; ++k) p.cols[0][static_cast<std::size_t>(k * n + i)] = x[i * cin + k];
    }
  } else {
    const bool spatial = x.rank() == 4;
    const std::int64_t n = x.dim(0);
    const std::int64_t h = spatial ? x.dim(1) : 1;
    const std::int64_t w = spatial ? x.dim(2) : x.dim(1);
    const std::int64_t c = x.dim(x.rank() - 1);
    const int kh = layer.kernel_h, kw = layer.kernel_w, sh = layer.stride_h, sw = layer.stride_w;
    std::int64_t oh, ow;
    int pt = 0, pl = 0;
    if (layer.padding == Padding::kSame) {
      oh = (h + sh - 1) / sh;
      ow = (w + sw - 1) / sw;
      pt = same_pad_before(h, kh, sh);
      pl = same_pad_before(w, kw, sw);
    } else {
      oh = (h - kh) / sh + 1;
      ow = (w - kw) / sw + 1;
    }
    p.rows = n * oh * ow;
    const bool dw = layer.kind == LayerKind::kDepthwiseConv2d;
    p.shared = !dw;
    p.taps = dw ? std::int64_t{kh} * kw : std::int64_t{kh} * kw * c;
    const std::int64_t mats = dw ? c : 1;
    p.cols.assign(static_cast<std::size_t>(mats),
                  std::vector<double>(static_cast<std::size_t>(p.taps * p.rows), 0.0));
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t z = 0; z < ow; ++z) {
          const std::int64_t m = (b * oh + y) * ow + z;
          for (int i = 0; i < kh; ++i) {
            const std::int64_t ih = y * sh - pt + i;
            if (ih < 0 || ih >= h) continue;
            for (int j = 0; j < kw; ++j) {
              const std::int64_t iw = z * sw - pl + j;
              if (iw < 0 || iw >= w) continue;
              const double* in = x.data() + ((b * h + ih) * w + iw) * c;
              const std::int64_t tap = std::int64_t{i} * kw + j;
              if (dw) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                  p.cols[static_cast<std::size_t>(ch)][static_cast<std::size_t>(tap * p.rows + m)] = in[ch];
                }
              } else {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                  p.cols[0][static_cast<std::size_t>((tap * c + ch) * p.rows + m)] = in[ch];
                }
              }
            }
          }
        }
      }
    }
  }
  if (target.size() != p.rows * p.channels) {
    throw StructuralError("opt_bits target does not match layer '" + layer.name + "'");
  }
  p.target.assign(static_cast<std::size_t>(p.channels), std::vector<double>(static_cast<std::size_t>(p.rows)));
  for (std::int64_t m = 0; m < p.rows; ++m) {
    for (std::int64_t c = 0; c < p.channels; ++c) {
      p.target[static_cast<std::size_t>(c)][static_cast<std::size_t>(m)] = target[m * p.channels + c];
    }
  }
  return p;
}

// Coordinate descent for one output channel. `acc` holds A*c (unscaled).
class ChannelSolver {
 public:
  ChannelSolver(const BitsProblem& p, std::int64_t channel, std::span<std::int64_t> codes, double scale,
                std::int64_t qmin, std::int64_t qmax)
      : p_(p),
        cols_(p.cols[p.shared ? 0 : static_cast<std::size_t>(channel)]),
        target_(p.target[static_cast<std::size_t>(channel)]),
        bias_(p.bias[static_cast<std::size_t>(channel)]),
        codes_(codes),
        scale_(scale),
        qmin_(qmin),
        qmax_(qmax),
        acc_(static_cast<std::size_t>(p.rows), 0.0) {
    for (std::int64_t k = 0; k < p.taps; ++k) {
      const double ck = static_cast<double>(codes_[static_cast<std::size_t>(k)]);
      if (ck == 0.0) continue;
      const double* col = column(k);
      for (std::int64_t m = 0; m < p.rows; ++m) acc_[static_cast<std::size_t>(m)] += ck * col[m];
    }
  }

  double scale() const { return scale_; }

  double loss() const { return loss_with(scale_); }

  // One pass over planes (most significant first) and taps. Returns the loss.
  double sweep(int bits) {
    double current = loss();
    for (int plane = bits - 1; plane >= 0; --plane) {
      const std::int64_t step = std::int64_t{1} << plane;
      for (std::int64_t k = 0; k < p_.taps; ++k) {
        const std::int64_t c = codes_[static_cast<std::size_t>(k)];
        std::int64_t best_code = c;
        double best = current;
        for (const std::int64_t cand : {c - step, c + step}) {
          if (cand < qmin_ || cand > qmax_) continue;
          const double l = loss_after(k, static_cast<double>(cand - c));
          if (l < best) {
            best = l;
            best_code = cand;
          }
        }
        if (best_code != c) {
          const double d = static_cast<double>(best_code - c);
          const double* col = column(k);
          for (std::int64_t m = 0; m < p_.rows; ++m) acc_[static_cast<std::size_t>(m)] += d * col[m];
          codes_[static_cast<std::size_t>(k)] = best_code;
          current = best;
        }
      }
    }
    return current;
  }

  // Least-squares scale for the current codes; kept only if it helps.
  void refit_scale() {
    double s = scale_;
    for (int round = 0; round < 20; ++round) {
      double num = 0.0, den = 0.0;
      for (std::int64_t m = 0; m < p_.rows; ++m) {
        const double a = acc_[static_cast<std::size_t>(m)];
        if (p_.relu && bias_ + s * a <= 0.0) continue;
        num += a * (target_[static_cast<std::size_t>(m)] - bias_);
        den += a * a;
      }
      if (den <= 0.0) return;
      const double next = num / den;
      if (!(next > 0.0) || next == s) break;
      s = next;
      if (!p_.relu) break;
    }
    if (s > 0.0 && std::isfinite(s) && loss_with(s) < loss()) scale_ = s;
  }

 private:
  const double* column(std::int64_t k) const { return cols_.data() + k * p_.rows; }

  double out(double z) const { return p_.relu ? std::max(z, 0.0) : z; }

  double loss_with(double s) const {
    double l = 0.0;
    for (std::int64_t m = 0; m < p_.rows; ++m) {
      const double d = out(bias_ + s * acc_[static_cast<std::size_t>(m)]) - target_[static_cast<std::size_t>(m)];
      l += d * d;
    }
    return l;
  }

  double loss_after(std::int64_t k, double delta) const {
    const double* col = column(k);
    double l = 0.0;
    for (std::int64_t m = 0; m < p_.rows; ++m) {
      const double z = bias_ + scale_ * (acc_[static_cast<std::size_t>(m)] + delta * col[m]);
      const double d = out(z) - target_[static_cast<std::size_t>(m)];
      l += d * d;
    }
    return l;
  }

  const BitsProblem& p_;
  const std::vector<double>& cols_;
  const std::vector<double>& target_;
  double bias_;
  std::span<std::int64_t> codes_;
  double scale_;
  std::int64_t qmin_, qmax_;
  std::vector<double> acc_;
};

void run_bits(QuantizedGraph& qgraph, const OptimizationUnit& unit, const UnitBatch& data,
              const PipelineConfig& config, std::uint64_t seed, RunLog* log) {
  const std::string step = strategy_step(Strategy::kBits);
  if (unit.weighted.size() != 1) {
    throw StructuralError("opt_bits needs exactly one weighted layer per unit; '" + unit.name + "' has " +
                          std::to_string(unit.weighted.size()));
  }
  const int li = unit.weighted.front();
  const Graph& graph = qgraph.graph;
  const Layer& layer = graph.layers[static_cast<std::size_t>(li)];
  bool relu = false;
  if (unit.last == li + 1 && graph.layers[static_cast<std::size_t>(li + 1)].kind == LayerKind::kRelu) {
    relu = true;
  } else if (unit.last != li) {
    throw StructuralError("opt_bits supports a weighted layer followed by at most a ReLU; unit '" +
                          unit.name + "' ends with '" + graph.layers[static_cast<std::size_t>(unit.last)].name + "'");
  }

  UnitObjective full(qgraph, unit, ObjectiveKind::kWeights, {}, config.rounding);
  const double initial = hard_mse(full, full.initial(), data);
  if (log) log->entries.push_back({step, unit.name, 0, initial});

  WeightQuantizer& wq = qgraph.weights[static_cast<std::size_t>(li)];
  if (!wq.q.enabled()) {
    if (log) log->units.push_back({step, unit.name, initial, initial});
    return;
  }

  // Input to the weighted layer, as the quantized unit sees it.
  const std::int64_t n = data.target.dim(0);
  const std::int64_t subset = std::min<std::int64_t>(config.bits_samples, n);
  std::vector<std::int64_t> rows = permutation(n, seed);
  rows.resize(static_cast<std::size_t>(subset));
  std::sort(rows.begin(), rows.end());
  const UnitBatch sub = gather(data, rows);
  const std::vector<Tensor> subs = qgraph.effective_weights();
  ActivationHook hook(qgraph.activations);
  const RangeTrace trace = forward_range(graph, unit.first, li, sub.inputs, ExecOptions{&subs, &hook});
  const BitsProblem problem = build_bits_problem(layer, li, relu, trace.consumed(layer.inputs.front()), sub.target);

  const std::int64_t channels = problem.channels;
  std::vector<std::int64_t> codes(static_cast<std::size_t>(channels * problem.taps));
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t k = 0; k < problem.taps; ++k) {
      const std::int64_t i = weight_index(c, k, channels);
      codes[static_cast<std::size_t>(c * problem.taps + k)] = quantize_code(
          wq.latent[i], wq.q.scale[static_cast<std::size_t>(c)], 0, wq.q.qmin, wq.q.qmax);
    }
  }
  std::vector<ChannelSolver> solvers;
  solvers.reserve(static_cast<std::size_t>(channels));
  for (std::int64_t c = 0; c < channels; ++c) {
    solvers.emplace_back(problem, c,
                         std::span(codes).subspan(static_cast<std::size_t>(c * problem.taps),
                                                  static_cast<std::size_t>(problem.taps)),
                         wq.q.scale[static_cast<std::size_t>(c)], wq.q.qmin, wq.q.qmax);
  }

  auto candidate = [&]() {
    WeightQuantizer w = wq;
    for (std::int64_t c = 0; c < channels; ++c) {
      const double s = solvers[static_cast<std::size_t>(c)].scale();
      w.q.scale[static_cast<std::size_t>(c)] = s;
      for (std::int64_t k = 0; k < problem.taps; ++k) {
        w.latent[weight_index(c, k, channels)] =
            s * static_cast<double>(codes[static_cast<std::size_t>(c * problem.taps + k)]);
      }
    }
    return w;
  };

  WeightQuantizer best = wq;
  double best_loss = initial;
  const int bits = wq.q.bits;
  for (int sweep = 1; sweep <= config.bits_sweeps; ++sweep) {
    for (ChannelSolver& s : solvers) {
      double before = s.loss();
      for (;;) {
        const double after = s.sweep(bits);
        if (!(after < before)) break;
        before = after;
      }
      if (config.bits_refit_scale) s.refit_scale();
    }
    QuantizedGraph trial = qgraph;
    trial.weights[static_cast<std::size_t>(li)] = candidate();
    UnitObjective obj(trial, unit, ObjectiveKind::kWeights, {}, config.rounding);
    const double l = hard_mse(obj, obj.initial(), data);
    if (log) log->entries.push_back({step, unit.name, sweep, l});
    if (l < best_loss) {
      best_loss = l;
      best = trial.weights[static_cast<std::size_t>(li)];
    }
  }
  best.frozen = wq.frozen;
  wq = best;
  if (log) log->units.push_back({step, unit.name, initial, best_loss});
}

// Activation edges read by layers of the unit.
std::vector<int> consumed_edges(const QuantizedGraph& qgraph, const OptimizationUnit& unit) {
  std::vector<int> edges;
  for (int l = unit.first; l <= unit.last; ++l) {
    for (int e : qgraph.graph.layers[static_cast<std::size_t>(l)].inputs) {
      if (qgraph.activations.count(e) && std::find(edges.begin(), edges.end(), e) == edges.end()) {
        edges.push_back(e);
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

void recalibrate(QuantizedGraph& qgraph, const OptimizationUnit& unit, const UnitBatch& data,
                 const PipelineConfig& config, const std::vector<int>& last_use) {
  const QuantizerState tmpl = quantizer_template(Scheme::kAsymmetric, config.act_bits);
  if (!tmpl.enabled()) return;
  auto reinit = [&](int e, const Tensor& value) {
    auto it = qgraph.activations.find(e);
    if (it == qgraph.activations.end() || it->second.frozen) return;
    it->second.q = config.act_init == InitMethod::kMse
                       ? init_mse(std::span(&value, 1), tmpl, config.mse_grid_steps)
                       : init_minmax(std::span(&value, 1), tmpl);
  };
  for (const auto& [edge, value] : data.inputs) reinit(edge, value);
  std::map<int, Tensor> frontier = data.inputs;
  const std::vector<Tensor> subs = qgraph.effective_weights();
  ActivationHook hook(qgraph.activations);
  internal::advance(qgraph.graph, unit.first, unit.last, frontier, ExecOptions{&subs, &hook}, last_use,
                    [&](int l, const Tensor& v) {
                      if (l < unit.last) reinit(l, v);
                    });
}

ObjectiveKind objective_kind(Strategy s) {
  switch (s) {
    case Strategy::kQparam: return ObjectiveKind::kQparam;
    case Strategy::kWeights: return ObjectiveKind::kWeights;
    case Strategy::kRound: return ObjectiveKind::kRound;
    case Strategy::kBits: break;
  }
  throw ConfigError("strategy has no gradient objective");
}

void check_calibration(const Graph& graph, const Tensor& calib) {
  if (calib.rank() < 1 || calib.dim(0) < 1) throw ConfigError("calibration set is empty");
  if (calib.shape() != batched(calib.dim(0), graph.input_shape)) {
    throw StructuralError("calibration samples " + shape_string(calib.shape()) + " do not match the input shape " +
                          shape_string(graph.input_shape) + " of '" + graph.name + "'");
  }
}

}  // namespace

QuantizedGraph optimize(QuantizedGraph qgraph, const Graph& fp, const Tensor& calib,
                        const PipelineConfig& config, RunLog* log) {
  config.validate();
  check_calibration(qgraph.graph, calib);
  if (fp.size() != qgraph.graph.size()) throw StructuralError("reference graph does not match the quantized graph");
  if (config.iters == 0) return qgraph;

  const std::vector<OptimizationUnit> units = optimization_units(qgraph.graph, config.granularity);
  const std::vector<int> last_use = internal::last_uses(qgraph.graph);
  std::map<int, Tensor> fp_frontier{{kGraphInput, calib}};
  std::map<int, Tensor> q_frontier{{kGraphInput, calib}};
  const std::string step = strategy_step(config.strategy);

  for (std::size_t u = 0; u < units.size(); ++u) {
    const OptimizationUnit& unit = units[u];
    UnitBatch data;
    for (int e : external_edges(qgraph.graph, unit.first, unit.last)) data.inputs.emplace(e, q_frontier.at(e));
    internal::advance(fp, unit.first, unit.last, fp_frontier, {}, last_use);
    data.target = fp_frontier.at(unit.last);
    if (config.recalibrate_activations) recalibrate(qgraph, unit, data, config, last_use);

    const std::uint64_t seed = mix_seed(config.seed, u);
    std::vector<int> trainable;
    for (int e : consumed_edges(qgraph, unit)) {
      if (!qgraph.activations.at(e).frozen) trainable.push_back(e);
    }
    if (config.strategy == Strategy::kBits) {
      run_bits(qgraph, unit, data, config, seed, log);
    } else {
      const ObjectiveKind kind = objective_kind(config.strategy);
      UnitObjective obj(qgraph, unit, kind, kind == ObjectiveKind::kQparam ? trainable : std::vector<int>{},
                        config.rounding);
      GradientRun run{config.iters, config.batch_size, config.eval_every, config.effective_learning_rate(),
                      seed, step, unit.name};
      run_gradient(obj, data, run, config.rounding, qgraph, log);
    }
    for (int l : unit.weighted) qgraph.weights[static_cast<std::size_t>(l)].frozen = true;
    for (int e : trainable) qgraph.activations.at(e).frozen = true;

    const std::vector<Tensor> subs = qgraph.effective_weights();
    ActivationHook hook(qgraph.activations);
    internal::advance(qgraph.graph, unit.first, unit.last, q_frontier, ExecOptions{&subs, &hook}, last_use);
  }
  return qgraph;
}

QuantizedGraph bias_tune(QuantizedGraph qgraph, const Graph& fp, const Tensor& calib,
                         const PipelineConfig& config, RunLog* log) {
  config.validate();
  check_calibration(qgraph.graph, calib);
  UnitBatch data;
  data.inputs.emplace(kGraphInput, calib);
  {
    std::vector<Tensor> parts;
    for (std::int64_t b = 0; b < calib.dim(0); b += kEvalChunk) {
      parts.push_back(predict(fp, slice_rows(calib, b, std::min(kEvalChunk, calib.dim(0) - b))));
    }
    data.target = concat_rows(parts);
  }
  OptimizationUnit whole{"model", 0, qgraph.graph.size() - 1, {}};
  UnitObjective obj(qgraph, whole, ObjectiveKind::kBias, {}, config.rounding);
  GradientRun run{config.bias_iters, config.batch_size, config.eval_every, config.bias_lr,
                  mix_seed(config.seed, 0xb1a5), "bias_tune", whole.name};
  run_gradient(obj, data, run, config.rounding, qgraph, log);
  return qgraph;
}

PipelineResult run_pipeline(const Graph& fp_graph, const Tensor& calib, const PipelineConfig& config) {
  config.validate();
  check_calibration(fp_graph, calib);
  Tensor subset = calib;
  if (calib.dim(0) > config.calib_size) {
    std::vector<std::int64_t> rows = permutation(calib.dim(0), mix_seed(config.seed, 0xca1b));
    rows.resize(static_cast<std::size_t>(config.calib_size));
    subset = gather_rows(calib, rows);
  }
  PipelineResult result;
  result.reference = fold_batchnorm(fp_graph);
  if (config.cle) result.reference = cle_equalize(result.reference);
  result.model = attach_and_init(result.reference, subset, config);
  result.model = optimize(std::move(result.model), result.reference, subset, config, &result.log);
  if (config.bias_tune) result.model = bias_tune(std::move(result.model), result.reference, subset, config, &result.log);
  return result;
}

}  // namespace tinyptq
