# Copyright (c) 2026 The tinyptq Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Post-training quantization for tiny networks."""

import json as _json

from ._core import (
    ConfigError,
    FormatError,
    QuantizedModel,
    StructuralError,
    bop,
    cli,
    load_quantized,
    model_names,
    model_stats,
    peak_memory_bytes,
    predict,
    quantize_tensor,
    read_container,
    write_container,
)
from ._core import quantize as _quantize

__all__ = [
    "ConfigError",
    "FormatError",
    "QuantizedModel",
    "StructuralError",
    "bop",
    "cli",
    "load_quantized",
    "model_names",
    "model_stats",
    "peak_memory_bytes",
    "predict",
    "quantize",
    "quantize_tensor",
    "read_container",
    "write_container",
]


def quantize(model, calib, weights=None, weights_seed=0, **config):
    """Run the pipeline on `calib` samples; keyword arguments are pipeline
    settings such as weight_bits, act_bits, strategy, iters or seed."""
    return _quantize(model, calib, _json.dumps(config), weights, weights_seed)
