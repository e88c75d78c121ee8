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
#include <string>
#include <string_view>

#include "tinyptq/quantizer.h"

namespace tinyptq {

enum class InitMethod { kMinMax, kMse };
enum class Strategy { kQparam, kWeights, kBits, kRound };
enum class Granularity { kLayer, kBlock };

std::string_view to_string(InitMethod v);
std::string_view to_string(Strategy v);
std::string_view to_string(Granularity v);

// Accept the CLI spellings: minmax|mse, qparam|weights|bits|round (with or
// without the "opt_" prefix), layer|block (or layerwise|blockwise).
InitMethod parse_init(std::string_view s);
Strategy parse_strategy(std::string_view s);
Granularity parse_granularity(std::string_view s);

struct PipelineConfig {
  int weight_bits = 8;
  int act_bits = 8;
  InitMethod weight_init = InitMethod::kMinMax;
  InitMethod act_init = InitMethod::kMinMax;
  int mse_grid_steps = 100;

  bool cle = false;
  Strategy strategy = Strategy::kWeights;
  Granularity granularity = Granularity::kLayer;
  bool bias_tune = false;

  int calib_size = 1024;
  int iters = 2000;
  int batch_size = 32;
  /// 0 selects the strategy default (qparam 1e-3, weights 1e-4, round 1e-2).
  double learning_rate = 0.0;
  /// Full-calibration evaluations (for best-iterate tracking) every N iters.
  int eval_every = 100;

  int bias_iters = 2000;
  double bias_lr = 1e-3;

  int bits_sweeps = 3;
  /// Calibration samples used by the coordinate-descent objective.
  int bits_samples = 64;
  bool bits_refit_scale = true;

  /// Re-initialize activation quantizers from the quantized predecessor chain
  /// instead of the full-precision model.
  bool recalibrate_activations = false;

  RoundingConstants rounding;
  std::uint64_t seed = 0;

  /// Throws ConfigError on invalid settings.
  void validate() const;
  double effective_learning_rate() const;
};

double default_learning_rate(Strategy s);

/// JSON round-trip; unknown keys are rejected with ConfigError.
std::string config_to_json(const PipelineConfig& c);
PipelineConfig config_from_json(std::string_view text);

}  // namespace tinyptq
