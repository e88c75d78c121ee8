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

// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common/checks.h"
#include "tinyptq/cli.h"
#include "tinyptq/io.h"
#include "tinyptq/metrics.h"
#include "tinyptq/models.h"
#include "tinyptq/ptq.h"

namespace tinyptq::acceptance {
namespace {

using namespace tinyptq::testing;
namespace fs = std::filesystem;

// ---- pinned tolerances ----
constexpr double kStatTolerance = 0.02;          // A1, relative per cell
constexpr double kA1Seconds = 1.0;
constexpr int kA2Tensors = 10000;
constexpr double kA2Seconds = 30.0;
constexpr double kA2SumSlack = 1e-12;            // relative, summation order only
constexpr double kFoldTolerance = 1e-5;          // A3
constexpr double kCleTolerance = 1e-4;
constexpr double kFixedPointTolerance = 1e-6;
constexpr int kA3Inputs = 32;
constexpr double kA3Seconds = 60.0;
constexpr double kGradTolerance = 1e-3;          // A4
constexpr double kA4Seconds = 60.0;
constexpr double kOracleTolerance = 1e-9;        // A5
constexpr double kLossRecomputeTolerance = 1e-9;
constexpr double kA5Seconds = 300.0;
constexpr double kA6Seconds = 1.0;
constexpr double kStatsAgreement = 1e-12;        // A7, mean/std recomputation

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("violated: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---- A1 ----

struct ReferenceStats {
  const char* model;
  std::int64_t macs, params, peak;
};

constexpr ReferenceStats kReference[] = {{"res8", 12591808, 77706, 36608},
                               {"dscnn", 2736832, 22604, 36864},
                               {"mobilenetv1", 7723776, 210850, 32768},
                               {"har_cnn", 2298368, 523462, 8064}};

Verdict a1() {
  Verdict v;
  Stopwatch clock;
  for (const ReferenceStats& row : kReference) {
    const ModelStats s = model_stats(build_model(row.model));
    const std::pair<const char*, std::pair<std::int64_t, std::int64_t>> cells[] = {
        {"macs", {s.macs, row.macs}}, {"params", {s.params, row.params}}, {"peak_activation", {s.peak_activation, row.peak}}};
    for (const auto& [field, pair] : cells) {
      const auto [got, want] = pair;
      const double dev = static_cast<double>(got - want) / static_cast<double>(want);
      const bool ok = std::abs(dev) <= kStatTolerance;
      v.note(std::string(row.model) + " " + field + ": " + std::to_string(got) + " vs " + std::to_string(want) +
             " (" + (dev >= 0 ? "+" : "") + num(100.0 * dev, 3) + "%)" + (ok ? "" : "  OUT OF TOLERANCE"));
      v.check(ok, std::string(row.model) + " " + field + " within 2%");
    }
    if (std::string(row.model) == "res8") {
      for (const LayerStats& l : s.layers) {
        if (l.name == "conv1") v.check(l.macs == 442368, "res8 conv1 MACs == 442,368 (got " + std::to_string(l.macs) + ")");
        if (l.name == "fc") v.check(l.macs == 640, "res8 fc MACs == 640");
      }
    }
  }
  const double t = clock.seconds();
  v.check(t < kA1Seconds, "runtime < 1 s (" + num(t) + " s)");
  return v;
}

// ---- A2 ----

double ulp(double x) {
  const double a = std::abs(x);
  return std::nextafter(a, INFINITY) - a;
}

struct A2Counts {
  std::int64_t idempotence = 0, grid = 0, monotone = 0, clamp = 0, mse_vs_minmax = 0, channel_vs_tensor = 0;
  std::int64_t values = 0;
};

void check_quantizer(const Tensor& x, const QuantizerState& q, A2Counts& c) {
  // Probe the fitted range and beyond it.
  Tensor probe(batched(2, x.shape()));
  for (std::int64_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i];
    probe[x.size() + i] = 1.75 * x[i];
  }
  QuantizerState q2 = q;
  if (q.per_channel()) q2.channel_axis = static_cast<int>(probe.rank()) - 1;
  const Tensor y = quantize(probe, q2);
  const Tensor yy = quantize(y, q2);
  const std::int64_t groups = q.groups();
  std::vector<std::vector<std::pair<double, double>>> by_group(static_cast<std::size_t>(groups));
  for (std::int64_t i = 0; i < y.size(); ++i) {
    const auto g = static_cast<std::size_t>(q2.per_channel() ? group_of(i, probe.shape(), q2.channel_axis) : 0);
    const double s = q.scale[g];
    const auto z = static_cast<double>(q.zero_point[g]);
    ++c.values;
    if (std::bit_cast<std::uint64_t>(yy[i]) != std::bit_cast<std::uint64_t>(y[i])) ++c.idempotence;
    const double r = std::round(y[i] / s);
    if (std::abs(y[i] - s * r) > ulp(y[i]) || r + z < static_cast<double>(q.qmin) ||
        r + z > static_cast<double>(q.qmax)) {
      ++c.grid;
    }
    const double lo = s * (static_cast<double>(q.qmin) - z), hi = s * (static_cast<double>(q.qmax) - z);
    if (y[i] < lo || y[i] > hi) ++c.clamp;
    by_group[g].emplace_back(probe[i], y[i]);
  }
  for (auto& pts : by_group) {
    std::sort(pts.begin(), pts.end());
    for (std::size_t k = 1; k < pts.size(); ++k) {
      if (pts[k].second < pts[k - 1].second) ++c.monotone;
    }
  }
}

Verdict a2() {
  Verdict v;
  Stopwatch clock;
  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<int> dim(1, 6);
  std::lognormal_distribution<double> magnitude(0.0, 1.0);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution outlier(0.05);
  A2Counts c;
  for (int t = 0; t < kA2Tensors; ++t) {
    const int rows = 3 * dim(rng), channels = dim(rng);
    Tensor x({rows, channels});
    std::vector<double> scale(static_cast<std::size_t>(channels)), shift(scale.size());
    for (std::size_t ch = 0; ch < scale.size(); ++ch) {
      scale[ch] = magnitude(rng);
      shift[ch] = 0.5 * normal(rng) * scale[ch];
    }
    for (std::int64_t i = 0; i < x.size(); ++i) {
      const auto ch = static_cast<std::size_t>(i % channels);
      x[i] = shift[ch] + scale[ch] * normal(rng) * (outlier(rng) ? 8.0 : 1.0);
    }
    const int bits = 2 + t % 7;
    const Scheme scheme = (t / 7) % 2 ? Scheme::kSymmetric : Scheme::kAsymmetric;
    const std::span<const Tensor> s(&x, 1);
    double mse_sse[2] = {0, 0};
    for (int axis : {-1, 1}) {
      const QuantizerState tmpl = quantizer_template(scheme, bits, axis);
      const QuantizerState mm = init_minmax(s, tmpl);
      const QuantizerState ms = init_mse(s, tmpl);
      check_quantizer(x, mm, c);
      check_quantizer(x, ms, c);
      const double e_mm = reconstruction_sse(s, mm), e_ms = reconstruction_sse(s, ms);
      if (e_ms > e_mm * (1.0 + kA2SumSlack)) ++c.mse_vs_minmax;
      mse_sse[axis < 0 ? 0 : 1] = e_ms;
    }
    if (mse_sse[1] > mse_sse[0] * (1.0 + kA2SumSlack)) ++c.channel_vs_tensor;
  }
  const double t = clock.seconds();
  v.note(std::to_string(kA2Tensors) + " tensors, " + std::to_string(c.values) + " quantized values checked");
  v.check(c.idempotence == 0, "idempotence (" + std::to_string(c.idempotence) + ")");
  v.check(c.grid == 0, "grid membership within 1 ulp (" + std::to_string(c.grid) + ")");
  v.check(c.monotone == 0, "monotonicity (" + std::to_string(c.monotone) + ")");
  v.check(c.clamp == 0, "clamp bounds (" + std::to_string(c.clamp) + ")");
  v.check(c.mse_vs_minmax == 0, "MSE init <= MinMax init (" + std::to_string(c.mse_vs_minmax) + ")");
  v.check(c.channel_vs_tensor == 0, "per-channel <= per-tensor MSE (" + std::to_string(c.channel_vs_tensor) + ")");
  v.check(t < kA2Seconds, "runtime < 30 s (" + num(t) + " s)");
  return v;
}

// ---- A3 ----

Verdict a3() {
  Verdict v;
  Stopwatch clock;
  for (const std::string& name : model_names()) {
    const Graph g = build_model(name, nullptr, 31);
    const Tensor x = random_inputs(g, kA3Inputs, 32);
    const Graph f = fold_batchnorm(g);
    const Tensor ref = predict(g, x);
    const double fold_err = relative_error(predict(f, x), ref);
    CleReport report;
    const Graph e = cle_equalize(f, &report);
    const double cle_err = relative_error(predict(e, x), ref);
    double worst_fp = 0.0;
    for (const ClePair& p : report.pairs) {
      const auto r1 = channel_ranges(e.layers[static_cast<std::size_t>(p.first)], false);
      const auto r2 = channel_ranges(e.layers[static_cast<std::size_t>(p.second)], true);
      for (std::size_t i = 0; i < r1.size(); ++i) {
        const double denom = std::max({r1[i], r2[i], 1e-300});
        worst_fp = std::max(worst_fp, std::abs(r1[i] - r2[i]) / denom);
      }
    }
    v.note(name + ": fold " + num(fold_err) + ", cle " + num(cle_err) + ", " + std::to_string(report.pairs.size()) +
           " pairs, fixed point " + num(worst_fp));
    v.check(fold_err <= kFoldTolerance, name + " BN fold <= 1e-5");
    v.check(cle_err <= kCleTolerance, name + " CLE <= 1e-4");
    v.check(worst_fp <= kFixedPointTolerance, name + " range fixed point <= 1e-6");
  }
  const double t = clock.seconds();
  v.check(t < kA3Seconds, "runtime < 1 min (" + num(t) + " s)");
  return v;
}

// ---- A4 ----

Verdict a4() {
  Verdict v;
  Stopwatch clock;
  const auto cases = grad_cases();
  double worst_layer = 0.0;
  for (int i = 0; i < static_cast<int>(cases.size()); ++i) {
    const double err = check_grad_case(i).worst();
    worst_layer = std::max(worst_layer, err);
    v.check(err <= kGradTolerance, std::string("layer ") + cases[static_cast<std::size_t>(i)].name + " (" + num(err) + ")");
  }
  double worst_objective = 0.0;
  for (const FdCase& c : objective_cases()) {
    const double err = objective_fd_error(c);
    worst_objective = std::max(worst_objective, err);
    v.check(err <= kGradTolerance, std::string("surrogate ") + c.label + " (" + num(err) + ")");
  }
  v.note(std::to_string(cases.size()) + " layer cases, worst " + num(worst_layer) + "; " +
         std::to_string(objective_cases().size()) + " surrogate cases, worst " + num(worst_objective));
  const double t = clock.seconds();
  v.check(t < kA4Seconds, "runtime < 1 min (" + num(t) + " s)");
  return v;
}

// ---- A5 ----

Verdict a5() {
  Verdict v;
  Stopwatch clock;
  const Graph g = small_conv_net(5);
  const Tensor x = random_inputs(g, 64, 6);
  const std::vector<Tensor> fo = forward(g, x, true);
  const std::pair<Strategy, Granularity> runs[] = {
      {Strategy::kQparam, Granularity::kLayer}, {Strategy::kWeights, Granularity::kLayer},
      {Strategy::kBits, Granularity::kLayer},   {Strategy::kRound, Granularity::kLayer},
      {Strategy::kQparam, Granularity::kBlock}, {Strategy::kWeights, Granularity::kBlock},
      {Strategy::kRound, Granularity::kBlock}};
  for (const auto& [strategy, granularity] : runs) {
    const std::string label = std::string(to_string(strategy)) + "/" + std::string(to_string(granularity));
    const PipelineConfig cfg = config_4w4a(strategy, granularity);
    RunLog log;
    const QuantizedGraph q = optimize(attach_and_init(g, x, cfg), g, x, cfg, &log);
    const auto units = optimization_units(g, granularity);
    const std::vector<Tensor> subs = q.effective_weights();
    ActivationHook hook(q.activations);
    const auto qo = forward_range(q.graph, 0, q.graph.size() - 1, {{kGraphInput, x}}, ExecOptions{&subs, &hook}).outputs;
    std::string losses;
    for (std::size_t u = 0; u < units.size() && u < log.units.size(); ++u) {
      const UnitSummary& s = log.units[u];
      v.check(s.final_loss <= s.initial_loss, label + " " + s.unit + " final <= initial");
      const auto last = static_cast<std::size_t>(units[u].last);
      const double recomputed = sum_squared_error(qo[last], fo[last]) / static_cast<double>(fo[last].size());
      v.check(std::abs(recomputed - s.final_loss) <= kLossRecomputeTolerance * std::max(1.0, s.final_loss),
              label + " " + s.unit + " committed loss matches log");
      losses += " " + s.unit + " " + num(s.initial_loss, 4) + "->" + num(s.final_loss, 4);
    }
    v.check(log.units.size() == units.size(), label + " one summary per unit");
    v.note(label + ":" + losses);
    if (strategy == Strategy::kRound || strategy == Strategy::kBits) {
      std::int64_t off_grid = 0;
      for (int l = 0; l < g.size(); ++l) {
        const WeightQuantizer& wq = q.weights[static_cast<std::size_t>(l)];
        if (!g.layers[static_cast<std::size_t>(l)].has_weights()) continue;
        for (std::int64_t i = 0; i < wq.latent.size(); ++i) {
          const double s = wq.q.scale[static_cast<std::size_t>(group_of(i, wq.latent.shape(), wq.q.channel_axis))];
          const double code = wq.latent[i] / s;
          if (std::abs(code - std::round(code)) > 1e-9 || std::round(code) < static_cast<double>(wq.q.qmin) ||
              std::round(code) > static_cast<double>(wq.q.qmax)) {
            ++off_grid;
          }
        }
      }
      v.check(off_grid == 0, label + " hardened weights on the grid (" + std::to_string(off_grid) + " off)");
    }
  }

  int exact = 0, local = 0, bad = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    for (const std::int64_t cin : {1, 4}) {
      const OptBitsOracleCase r = opt_bits_oracle(seed, cin);
      if (std::abs(r.got - r.oracle) <= kOracleTolerance) {
        ++exact;
      } else if (r.local_optimum && r.got >= r.oracle) {
        ++local;
        v.note("opt_bits seed " + std::to_string(seed) + " cin " + std::to_string(cin) + ": local optimum " +
               num(r.got) + " vs exhaustive " + num(r.oracle));
      } else {
        ++bad;
      }
    }
  }
  v.note("opt_bits oracle: " + std::to_string(exact) + " exact, " + std::to_string(local) + " flagged local optima");
  v.check(bad == 0, "opt_bits matches exhaustive search or a flagged local optimum");

  PipelineConfig cfg = config_4w4a(Strategy::kWeights);
  cfg.bias_iters = 150;
  const QuantizedGraph before = attach_and_init(g, x, cfg);
  RunLog log;
  const QuantizedGraph after = bias_tune(before, g, x, cfg, &log);
  bool only_biases = true;
  for (int l = 0; l < g.size(); ++l) {
    const auto li = static_cast<std::size_t>(l);
    only_biases = only_biases && values_of(after.weights[li].latent) == values_of(before.weights[li].latent) &&
                  after.weights[li].q.scale == before.weights[li].q.scale &&
                  values_of(after.graph.layers[li].weight) == values_of(before.graph.layers[li].weight);
  }
  for (const auto& [edge, aq] : after.activations) {
    only_biases = only_biases && aq.q.scale == before.activations.at(edge).q.scale &&
                  aq.q.zero_point == before.activations.at(edge).q.zero_point;
  }
  const double mse_before = output_mse(before, g, x), mse_after = output_mse(after, g, x);
  v.note("bias_tune: calibration MSE " + num(mse_before) + " -> " + num(mse_after));
  v.check(only_biases, "bias_tune changes only biases");
  v.check(mse_after <= mse_before, "bias_tune never increases calibration MSE");

  const double t = clock.seconds();
  v.check(t < kA5Seconds, "runtime < 5 min (" + num(t) + " s)");
  return v;
}

// ---- A6 ----

Verdict a6() {
  Verdict v;
  Stopwatch clock;
  for (const std::string& name : model_names()) {
    const Graph g = build_model(name);
    const CostReport r4 = cost_report(g, 4, 4), r8 = cost_report(g, 8, 8);
    const double bop_ratio = static_cast<double>(r4.bop) / static_cast<double>(r8.bop);
    const double mem_ratio = static_cast<double>(peak_memory_bits(r4.params, r4.peak_activation, 4, 4)) /
                             static_cast<double>(peak_memory_bits(r8.params, r8.peak_activation, 8, 8));
    v.note(name + ": BOP ratio " + num(bop_ratio, 17) + ", memory ratio " + num(mem_ratio, 17));
    v.check(bop_ratio == 0.25, name + " BOP(4,4)/BOP(8,8) == 0.25");
    v.check(mem_ratio == 0.5, name + " memory(4,4)/memory(8,8) == 0.5");
  }
  const std::int64_t res8 = peak_memory_bytes(77706, 36608, 8, 8);
  v.note("Res8 8W8A peak memory from reference counts: " + std::to_string(res8) + " bytes");
  v.check(res8 == 114314, "Res8 8W8A peak memory == 114,314 bytes");
  v.check(bop_count(2736832, 8, 8) == 175157248, "DS-CNN 8W8A BOP == 175,157,248");
  const double t = clock.seconds();
  v.check(t < kA6Seconds, "runtime < 1 s (" + num(t) + " s)");
  return v;
}

// ---- A7 ----

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "tinyptq");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str() + e.str();
  return code;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

Verdict a7() {
  Verdict v;
  const fs::path dir = fs::temp_directory_path() / "tinyptq_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto path = [&](const std::string& n) { return (dir / n).string(); };

  std::mt19937_64 rng(77);
  Dataset calib;
  calib.inputs = random_tensor({48, 10, 49, 1}, rng);
  save_dataset(calib, path("calib.tqt"));
  Dataset data;
  data.inputs = random_tensor({96, 10, 49, 1}, rng);
  for (int i = 0; i < 96; ++i) data.labels.push_back(i % 12);
  // Three of four labels are the float model's predictions.
  const Graph fp = build_model("dscnn", nullptr, 5);
  const Tensor logits = predict(fp, data.inputs);
  for (std::int64_t i = 0; i < 96; ++i) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < 12; ++c) {
      if (logits[i * 12 + c] > logits[i * 12 + best]) best = c;
    }
    if (i % 4 != 0) data.labels[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best);
  }
  save_dataset(data, path("data.tqt"));
  save_weights(extract_parameters(fp), path("w.tqt"));

  const std::vector<std::vector<std::string>> variants = {
      {"--opt", "weights", "--init", "mse"},
      {"--opt", "round", "--granularity", "block", "--cle"},
      {"--opt", "bits", "--bias-tune", "--bias-iters", "6"},
      {"--opt", "qparam", "--bits-w", "3", "--bits-a", "3"}};
  int idx = 0;
  for (const auto& extra : variants) {
    std::string files[2][2];
    for (int rep = 0; rep < 2; ++rep) {
      const std::string out = path("q" + std::to_string(idx) + "_" + std::to_string(rep) + ".tqt");
      std::vector<std::string> args = {"quantize", "--model", "dscnn", "--weights", path("w.tqt"), "--calib",
                                       path("calib.tqt"), "--bits-w", "4", "--bits-a", "4", "--iters", "6",
                                       "--batch-size", "8", "--calib-size", "32", "--eval-every", "3",
                                       "--seed", "9", "--out", out};
      args.insert(args.end(), extra.begin(), extra.end());
      std::string msg;
      const int code = cli(args, &msg);
      v.check(code == 0, "quantize exit 0: " + msg);
      files[rep][0] = slurp(out);
      files[rep][1] = slurp(out + ".log.json");
    }
    std::string joined;
    for (const auto& e : extra) joined += e + " ";
    v.check(!files[0][0].empty() && files[0][0] == files[1][0], "identical model file for " + joined);
    v.check(!files[0][1].empty() && files[0][1] == files[1][1], "identical run log for " + joined);
    ++idx;
  }
  v.note(std::to_string(variants.size()) + " quantize invocations repeated byte-identically");

  const nlohmann::json cfg = {{"model", "dscnn"},
                              {"weights", path("w.tqt")},
                              {"calib", path("calib.tqt")},
                              {"dataset", path("data.tqt")},
                              {"seeds", {0, 1, 2, 3, 4}},
                              {"bits", {{3, 3}}},
                              {"strategies", {"qparam"}},
                              {"base", {{"iters", 4}, {"batch_size", 8}, {"calib_size", 24}, {"eval_every", 2}}},
                              {"csv", path("ablate.csv")},
                              {"json", path("ablate.json")}};
  std::ofstream(path("ablate_config.json")) << cfg.dump(2);
  std::string msg;
  v.check(cli({"ablate", "--config", path("ablate_config.json")}, &msg) == 0, "ablate exit 0: " + msg);

  // Recompute mean and sample std from the CSV rows.
  std::ifstream csv(path("ablate.csv"));
  std::string line;
  std::getline(csv, line);
  const auto header = split_csv_line(line);
  const auto col = [&](const std::string& n) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), n) - header.begin());
  };
  std::map<std::string, std::vector<double>> acc;
  std::map<std::string, std::vector<std::string>> seeds;
  while (std::getline(csv, line)) {
    const auto cells = split_csv_line(line);
    const std::string key = cells[col("b_w")] + "/" + cells[col("b_a")] + "/" + cells[col("strategy")];
    acc[key].push_back(std::stod(cells[col("accuracy")]));
    seeds[key].push_back(cells[col("seed")]);
  }
  const auto report = nlohmann::json::parse(slurp(path("ablate.json")));
  int groups = 0;
  for (const auto& grp : report["groups"]) {
    const std::string key = std::to_string(grp["b_w"].get<int>()) + "/" + std::to_string(grp["b_a"].get<int>()) + "/" +
                            grp["strategy"].get<std::string>();
    const auto& a = acc[key];
    double mean = 0.0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(a.size());
    double ss = 0.0;
    for (double x : a) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(a.size() - 1));
    v.note(key + ": " + std::to_string(a.size()) + " runs, mean " + num(mean) + " std " + num(sd) + " (report " +
           num(grp["accuracy_mean"].get<double>()) + " +- " + num(grp["accuracy_std"].get<double>()) + ")");
    v.check(a.size() == 5 && grp["runs"].get<int>() == 5, key + " has 5 runs");
    v.check(std::set<std::string>(seeds[key].begin(), seeds[key].end()).size() == 5, key + " uses 5 distinct seeds");
    v.check(std::abs(grp["accuracy_mean"].get<double>() - mean) <= kStatsAgreement, key + " mean recomputed");
    v.check(std::abs(grp["accuracy_std"].get<double>() - sd) <= kStatsAgreement, key + " sample std recomputed");
    ++groups;
  }
  v.check(groups == 2, "fp and quantized groups reported");
  return v;
}

}  // namespace
}  // namespace tinyptq::acceptance

int main() {
  using namespace tinyptq::acceptance;
  const std::pair<const char*, std::pair<const char*, std::function<Verdict()>>> criteria[] = {
      {"A1", {"model statistics vs reference counts", a1}},
      {"A2", {"quantizer property suite", a2}},
      {"A3", {"function preservation (BN fold, CLE)", a3}},
      {"A4", {"gradient checks", a4}},
      {"A5", {"optimization contracts", a5}},
      {"A6", {"cost-model identities", a6}},
      {"A7", {"determinism and seed statistics", a7}},
  };
  int failures = 0;
  for (const auto& [id, entry] : criteria) {
    const auto& [title, run] = entry;
    Stopwatch clock;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.note(std::string("exception: ") + e.what());
    }
    for (const std::string& n : v.notes) std::printf("    %s\n", n.c_str());
    std::printf("%s %s  %s (%.2f s)\n", id, v.pass ? "PASS" : "FAIL", title, clock.seconds());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  std::printf("%d of 7 criteria passed\n", 7 - failures);
  return failures == 0 ? 0 : 1;
}
