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

#include "tinyptq/config.h"

#include <json.hpp>

#include "tinyptq/error.h"

namespace tinyptq {

using nlohmann::json;

std::string_view to_string(InitMethod v) { return v == InitMethod::kMse ? "mse" : "minmax"; }

std::string_view to_string(Strategy v) {
  switch (v) {
    case Strategy::kQparam: return "opt_qparam";
    case Strategy::kWeights: return "opt_weights";
    case Strategy::kBits: return "opt_bits";
    case Strategy::kRound: return "opt_round";
  }
  return "?";
}

std::string_view to_string(Granularity v) {
  return v == Granularity::kBlock ? "blockwise" : "layerwise";
}

InitMethod parse_init(std::string_view s) {
  if (s == "minmax") return InitMethod::kMinMax;
  if (s == "mse") return InitMethod::kMse;
  throw ConfigError("unknown init method '" + std::string(s) + "' (expected minmax or mse)");
}

Strategy parse_strategy(std::string_view s) {
  if (s.starts_with("opt_")) s.remove_prefix(4);
  if (s == "qparam") return Strategy::kQparam;
  if (s == "weights") return Strategy::kWeights;
  if (s == "bits") return Strategy::kBits;
  if (s == "round") return Strategy::kRound;
  throw ConfigError("unknown strategy '" + std::string(s) +
                    "' (expected qparam, weights, bits or round)");
}

Granularity parse_granularity(std::string_view s) {
  if (s == "layer" || s == "layerwise") return Granularity::kLayer;
  if (s == "block" || s == "blockwise") return Granularity::kBlock;
  throw ConfigError("unknown granularity '" + std::string(s) + "' (expected layer or block)");
}

double default_learning_rate(Strategy s) {
  switch (s) {
    case Strategy::kQparam: return 1e-3;
    case Strategy::kWeights: return 1e-4;
    case Strategy::kRound: return 1e-2;
    case Strategy::kBits: return 0.0;
  }
  return 0.0;
}

double PipelineConfig::effective_learning_rate() const {
  return learning_rate > 0.0 ? learning_rate : default_learning_rate(strategy);
}

namespace {

void check_bits(int b, const char* what) {
  if (b != kFullPrecisionBits && (b < 2 || b > 8)) {
    throw ConfigError(std::string(what) + " must be in [2, 8] or 32 (disabled), got " +
                      std::to_string(b));
  }
}

}  // namespace

void PipelineConfig::validate() const {
  check_bits(weight_bits, "weight bits");
  check_bits(act_bits, "activation bits");
  if (mse_grid_steps < 2) throw ConfigError("mse_grid_steps must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (calib_size < batch_size) throw ConfigError("calib_size must be >= batch_size");
  if (iters < 0 || bias_iters < 0) throw ConfigError("iteration counts must be >= 0");
  if (learning_rate < 0.0 || bias_lr < 0.0) throw ConfigError("learning rates must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (bits_sweeps < 1 || bits_samples < 1) throw ConfigError("bits_sweeps and bits_samples must be >= 1");
  if (strategy == Strategy::kBits && granularity == Granularity::kBlock) {
    throw ConfigError("opt_bits does not support blockwise optimization");
  }
  if (!(rounding.zeta > 1.0 && rounding.gamma < 0.0 && rounding.lambda >= 0.0)) {
    throw ConfigError("rounding constants require zeta > 1, gamma < 0, lambda >= 0");
  }
}

std::string config_to_json(const PipelineConfig& c) {
  json j = {
      {"weight_bits", c.weight_bits},
      {"act_bits", c.act_bits},
      {"weight_init", to_string(c.weight_init)},
      {"act_init", to_string(c.act_init)},
      {"mse_grid_steps", c.mse_grid_steps},
      {"cle", c.cle},
      {"strategy", to_string(c.strategy)},
      {"granularity", to_string(c.granularity)},
      {"bias_tune", c.bias_tune},
      {"calib_size", c.calib_size},
      {"iters", c.iters},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"eval_every", c.eval_every},
      {"bias_iters", c.bias_iters},
      {"bias_lr", c.bias_lr},
      {"bits_sweeps", c.bits_sweeps},
      {"bits_samples", c.bits_samples},
      {"bits_refit_scale", c.bits_refit_scale},
      {"recalibrate_activations", c.recalibrate_activations},
      {"rounding",
       {{"zeta", c.rounding.zeta},
        {"gamma", c.rounding.gamma},
        {"lambda", c.rounding.lambda},
        {"beta_start", c.rounding.beta_start},
        {"beta_end", c.rounding.beta_end}}},
      {"seed", c.seed},
  };
  return j.dump(2);
}

PipelineConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig c;
  try {
    for (auto& [key, v] : j.items()) {
      if (key == "weight_bits") c.weight_bits = v.get<int>();
      else if (key == "act_bits") c.act_bits = v.get<int>();
      else if (key == "weight_init") c.weight_init = parse_init(v.get<std::string>());
      else if (key == "act_init") c.act_init = parse_init(v.get<std::string>());
      else if (key == "mse_grid_steps") c.mse_grid_steps = v.get<int>();
      else if (key == "cle") c.cle = v.get<bool>();
      else if (key == "strategy") c.strategy = parse_strategy(v.get<std::string>());
      else if (key == "granularity") c.granularity = parse_granularity(v.get<std::string>());
      else if (key == "bias_tune") c.bias_tune = v.get<bool>();
      else if (key == "calib_size") c.calib_size = v.get<int>();
      else if (key == "iters") c.iters = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "eval_every") c.eval_every = v.get<int>();
      else if (key == "bias_iters") c.bias_iters = v.get<int>();
      else if (key == "bias_lr") c.bias_lr = v.get<double>();
      else if (key == "bits_sweeps") c.bits_sweeps = v.get<int>();
      else if (key == "bits_samples") c.bits_samples = v.get<int>();
      else if (key == "bits_refit_scale") c.bits_refit_scale = v.get<bool>();
      else if (key == "recalibrate_activations") c.recalibrate_activations = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "rounding") {
        for (auto& [rk, rv] : v.items()) {
          if (rk == "zeta") c.rounding.zeta = rv.get<double>();
          else if (rk == "gamma") c.rounding.gamma = rv.get<double>();
          else if (rk == "lambda") c.rounding.lambda = rv.get<double>();
          else if (rk == "beta_start") c.rounding.beta_start = rv.get<double>();
          else if (rk == "beta_end") c.rounding.beta_end = rv.get<double>();
          else throw ConfigError("unknown rounding key '" + rk + "'");
        }
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace tinyptq
