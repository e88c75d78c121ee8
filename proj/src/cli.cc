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

#include "tinyptq/cli.h"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tinyptq/error.h"
#include "tinyptq/io.h"
#include "tinyptq/metrics.h"
#include "tinyptq/models.h"
#include "tinyptq/ptq.h"

namespace tinyptq {

namespace {

using nlohmann::json;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Graph load_fp_model(const std::string& model, const std::optional<std::string>& weights,
                    std::uint64_t weights_seed) {
  if (!weights) return build_model(model, nullptr, weights_seed);
  const ParameterSet params = load_weights(*weights);
  return build_model(model, &params);
}

const std::vector<std::int32_t>& labels_of(const Dataset& d, const std::string& path) {
  if (d.labels.empty()) throw FormatError("dataset '" + path + "' has no 'labels' entry", 0);
  return d.labels;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---- stats ----

struct StatsArgs {
  std::string model;
  int bits_w = 8;
  int bits_a = 8;
  bool per_layer = false;
  bool as_json = false;
};

void run_stats(const StatsArgs& a, std::ostream& out) {
  const Graph g = build_model(a.model);
  const ModelStats s = model_stats(g);
  const CostReport r = cost_report(g, a.bits_w, a.bits_a);
  if (a.as_json) {
    out << json{{"model", r.model},
                {"b_w", r.b_w},
                {"b_a", r.b_a},
                {"macs", s.macs},
                {"weight_macs", s.weight_macs},
                {"aux_ops", s.aux_ops},
                {"params", s.params},
                {"batchnorm_params", s.batchnorm_params},
                {"peak_activation", s.peak_activation},
                {"bop", r.bop},
                {"peak_memory_bytes", r.peak_memory_bytes}}
               .dump(2)
        << '\n';
    return;
  }
  if (a.per_layer) {
    out << std::left << std::setw(20) << "layer" << std::setw(16) << "kind" << std::right << std::setw(12)
        << "macs" << std::setw(10) << "aux" << std::setw(10) << "params" << std::setw(10) << "output"
        << std::setw(10) << "live" << '\n';
    for (const LayerStats& l : s.layers) {
      out << std::left << std::setw(20) << l.name << std::setw(16) << to_string(l.kind) << std::right
          << std::setw(12) << l.macs << std::setw(10) << l.aux_ops << std::setw(10) << l.params << std::setw(10)
          << l.output_elements << std::setw(10) << l.live_elements << '\n';
    }
    out << '\n';
  }
  out << "model              " << r.model << '\n'
      << "macs               " << s.macs << "  (weights " << s.weight_macs << ", bias/pool " << s.aux_ops
      << ")\n"
      << "params             " << s.params << "  (batchnorm before folding " << s.batchnorm_params << ")\n"
      << "peak_activation    " << s.peak_activation << '\n'
      << "bits               " << r.b_w << "W" << r.b_a << "A\n"
      << "bop                " << r.bop << '\n'
      << "peak_memory_bytes  " << r.peak_memory_bytes << '\n';
}

// ---- quantize ----

struct QuantizeArgs {
  std::string model;
  std::optional<std::string> weights;
  std::uint64_t weights_seed = 0;
  std::string calib;
  std::string init = "minmax";
  std::string opt = "weights";
  std::string granularity = "layer";
  std::string out;
  PipelineConfig config;
};

void run_quantize(QuantizeArgs a, std::ostream& out) {
  PipelineConfig& cfg = a.config;
  cfg.weight_init = cfg.act_init = parse_init(a.init);
  cfg.strategy = parse_strategy(a.opt);
  cfg.granularity = parse_granularity(a.granularity);
  cfg.validate();
  const Graph fp = load_fp_model(a.model, a.weights, a.weights_seed);
  const Dataset calib = load_dataset(a.calib);
  const PipelineResult result = run_pipeline(fp, calib.inputs, cfg);
  save_quantized(result.model, a.model, cfg, a.out);
  write_text(a.out + ".log.json", result.log.to_json());
  out << "quantized " << a.model << " at " << cfg.weight_bits << "W" << cfg.act_bits << "A with "
      << to_string(cfg.strategy) << " (" << to_string(cfg.granularity) << "), seed " << cfg.seed << '\n';
  for (const UnitSummary& u : result.log.units) {
    out << "  " << u.step << ' ' << u.unit << ": " << u.initial_loss << " -> " << u.final_loss << '\n';
  }
  out << "wrote " << a.out << " and " << a.out << ".log.json\n";
}

// ---- eval ----

struct EvalArgs {
  std::optional<std::string> model;
  std::string weights;
  std::string dataset;
  std::optional<std::int64_t> limit;
};

void run_eval(const EvalArgs& a, std::ostream& out) {
  const TensorContainer c = load_container(a.weights);
  const Dataset d = load_dataset(a.dataset, a.limit);
  const auto& labels = labels_of(d, a.dataset);
  double acc = 0.0;
  std::string model;
  if (is_quantized(c)) {
    const LoadedQuantized q = load_quantized(c);
    if (a.model && *a.model != q.model) {
      throw ConfigError("'" + a.weights + "' holds a quantized " + q.model + ", not " + *a.model);
    }
    model = q.model;
    acc = evaluate(q.graph, d.inputs, labels);
  } else {
    if (!a.model) throw ConfigError("--model is required for full-precision weights");
    model = *a.model;
    ParameterSet params;
    for (const ContainerEntry& e : c.entries()) {
      if (e.dtype == DType::kF32) params.emplace(e.name, e.to_tensor());
    }
    acc = evaluate(build_model(model, &params), d.inputs, labels);
  }
  out << "model " << model << '\n'
      << "samples " << labels.size() << '\n'
      << "accuracy " << fmt(acc) << '\n';
}

// ---- ablate ----

// {"model", "weights"?, "weights_seed"?, "calib", "dataset", "seeds": [...],
//  "bits": [[w, a], ...], "strategies": [...], "base"?: {config},
//  "include_fp"?: true, "eval_limit"?: n, "csv", "json"}
void run_ablate(const std::string& config_path, std::ostream& out) {
  json sweep;
  try {
    sweep = json::parse(read_text(config_path));
  } catch (const json::parse_error& e) {
    throw ConfigError("ablation config is not valid JSON: " + std::string(e.what()));
  }
  static const std::set<std::string> known = {"model", "weights", "weights_seed", "calib", "dataset",
                                              "seeds", "bits", "strategies", "base", "include_fp",
                                              "eval_limit", "csv", "json"};
  for (const auto& [k, v] : sweep.items()) {
    if (!known.count(k)) throw ConfigError("unknown ablation key '" + k + "'");
  }
  std::string model, calib_path, dataset_path, csv_path, json_path;
  std::optional<std::string> weights;
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<int, int>> bits;
  std::vector<Strategy> strategies;
  json base = json::object();
  bool include_fp = true;
  std::optional<std::int64_t> eval_limit;
  std::uint64_t weights_seed = 0;
  try {
    model = sweep.at("model").get<std::string>();
    calib_path = sweep.at("calib").get<std::string>();
    dataset_path = sweep.at("dataset").get<std::string>();
    csv_path = sweep.at("csv").get<std::string>();
    json_path = sweep.at("json").get<std::string>();
    if (sweep.contains("weights")) weights = sweep["weights"].get<std::string>();
    if (sweep.contains("weights_seed")) weights_seed = sweep["weights_seed"].get<std::uint64_t>();
    seeds = sweep.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& b : sweep.at("bits")) bits.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
    for (const auto& s : sweep.at("strategies")) strategies.push_back(parse_strategy(s.get<std::string>()));
    if (sweep.contains("base")) base = sweep["base"];
    if (sweep.contains("include_fp")) include_fp = sweep["include_fp"].get<bool>();
    if (sweep.contains("eval_limit")) eval_limit = sweep["eval_limit"].get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ConfigError("bad ablation config: " + std::string(e.what()));
  }
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (!base.is_object()) throw ConfigError("'base' must be an object");

  const Graph fp = load_fp_model(model, weights, weights_seed);
  const Dataset calib = load_dataset(calib_path);
  const Dataset data = load_dataset(dataset_path, eval_limit);
  const auto& labels = labels_of(data, dataset_path);
  const Graph folded = fold_batchnorm(fp);

  std::vector<CostReport> runs;
  if (include_fp) {
    const double acc = evaluate(fp, data.inputs, labels);
    for (std::uint64_t seed : seeds) {
      CostReport r = cost_report(folded, 32, 32);
      r.model = model;
      r.seed = seed;
      r.accuracy = acc;
      runs.push_back(r);
    }
  }
  for (const auto& [bw, ba] : bits) {
    for (Strategy strategy : strategies) {
      for (std::uint64_t seed : seeds) {
        json j = json::parse(config_to_json(PipelineConfig{}));
        j.update(base);
        j["weight_bits"] = bw;
        j["act_bits"] = ba;
        j["strategy"] = to_string(strategy);
        j["seed"] = seed;
        const PipelineConfig cfg = config_from_json(j.dump());
        cfg.validate();
        const PipelineResult result = run_pipeline(fp, calib.inputs, cfg);
        CostReport r = cost_report(folded, bw, ba);
        r.model = model;
        r.strategy = std::string(to_string(strategy));
        r.init = std::string(to_string(cfg.weight_init));
        r.cle = cfg.cle;
        r.bias_tune = cfg.bias_tune;
        r.seed = seed;
        r.accuracy = evaluate(result.model, data.inputs, labels);
        out << model << ' ' << bw << 'W' << ba << "A " << r.strategy << " seed " << seed << ": accuracy "
            << fmt(r.accuracy) << '\n';
        runs.push_back(std::move(r));
      }
    }
  }
  const Report report = emit_report(runs);
  write_text(csv_path, report.csv);
  write_text(json_path, report.json);
  out << "wrote " << csv_path << " and " << json_path << '\n';
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Post-training quantization toolkit for tiny networks", "tinyptq"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  StatsArgs stats;
  CLI::App* stats_cmd = app.add_subcommand("stats", "MACs, parameters, peak activation and cost model");
  stats_cmd->add_option("--model", stats.model, "Model name")->required();
  stats_cmd->add_option("--bits-w", stats.bits_w, "Weight bits")->check(CLI::Range(2, 32));
  stats_cmd->add_option("--bits-a", stats.bits_a, "Activation bits")->check(CLI::Range(2, 32));
  stats_cmd->add_flag("--per-layer", stats.per_layer, "Print the per-layer table");
  stats_cmd->add_flag("--json", stats.as_json, "Print JSON");

  QuantizeArgs q;
  std::string weights;
  CLI::App* q_cmd = app.add_subcommand("quantize", "Run the quantization pipeline");
  q_cmd->add_option("--model", q.model, "Model name")->required();
  q_cmd->add_option("--weights", weights, "Full-precision weights (random if omitted)");
  q_cmd->add_option("--weights-seed", q.weights_seed, "Seed of the random weights");
  q_cmd->add_option("--calib", q.calib, "Calibration dataset")->required();
  q_cmd->add_option("--bits-w", q.config.weight_bits, "Weight bits");
  q_cmd->add_option("--bits-a", q.config.act_bits, "Activation bits");
  q_cmd->add_option("--init", q.init, "minmax or mse");
  q_cmd->add_flag("--cle", q.config.cle, "Cross-layer equalization");
  q_cmd->add_option("--opt", q.opt, "qparam, weights, bits or round");
  q_cmd->add_option("--granularity", q.granularity, "layer or block");
  q_cmd->add_flag("--bias-tune", q.config.bias_tune, "Tune biases end to end");
  q_cmd->add_option("--seed", q.config.seed, "Seed");
  q_cmd->add_option("--iters", q.config.iters, "Optimization iterations per unit");
  q_cmd->add_option("--lr", q.config.learning_rate, "Learning rate (0: strategy default)");
  q_cmd->add_option("--batch-size", q.config.batch_size, "Mini-batch size");
  q_cmd->add_option("--calib-size", q.config.calib_size, "Calibration samples used");
  q_cmd->add_option("--eval-every", q.config.eval_every, "Full-calibration evaluation period");
  q_cmd->add_option("--bias-iters", q.config.bias_iters, "Bias tuning iterations");
  q_cmd->add_option("--bias-lr", q.config.bias_lr, "Bias tuning learning rate");
  q_cmd->add_option("--out", q.out, "Quantized model file")->required();

  EvalArgs ev;
  std::string eval_model;
  std::int64_t eval_limit = -1;
  CLI::App* e_cmd = app.add_subcommand("eval", "Top-1 accuracy of a full-precision or quantized model");
  e_cmd->add_option("--model", eval_model, "Model name (optional for quantized files)");
  e_cmd->add_option("--weights", ev.weights, "Weights or quantized model file")->required();
  e_cmd->add_option("--dataset", ev.dataset, "Labeled dataset")->required();
  e_cmd->add_option("--limit", eval_limit, "Evaluate the first N samples");

  std::string ablate_config;
  CLI::App* a_cmd = app.add_subcommand("ablate", "Seed x bitwidth x strategy sweep");
  a_cmd->add_option("--config", ablate_config, "JSON sweep description")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*stats_cmd) {
      run_stats(stats, out);
    } else if (*q_cmd) {
      if (!weights.empty()) q.weights = weights;
      run_quantize(std::move(q), out);
    } else if (*e_cmd) {
      if (!eval_model.empty()) ev.model = eval_model;
      if (eval_limit >= 0) ev.limit = eval_limit;
      run_eval(ev, out);
    } else if (*a_cmd) {
      run_ablate(ablate_config, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace tinyptq
