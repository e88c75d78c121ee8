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

import json
import os
import subprocess

import numpy as np
import pytest

import tinyptq


def test_model_stats_match_hand_counts():
    assert set(tinyptq.model_names()) == {"res8", "dscnn", "mobilenetv1", "har_cnn"}
    s = tinyptq.model_stats("res8")
    assert s["macs"] == 12_591_808
    assert s["params"] == 77_706
    s4 = tinyptq.model_stats("dscnn", 4, 4)
    s8 = tinyptq.model_stats("dscnn", 8, 8)
    assert s4["bop"] * 4 == s8["bop"]
    assert tinyptq.peak_memory_bytes(77_706, 36_608, 8, 8) == 114_314
    assert tinyptq.bop(1000, 4, 8) == 32_000


def test_quantize_tensor_grid_and_idempotence():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 4))
    y, scales, zero_points = tinyptq.quantize_tensor(x, 4, symmetric=True, channel_axis=1)
    assert y.shape == x.shape
    assert len(scales) == 4 and all(z == 0 for z in zero_points)
    codes = y / np.asarray(scales)
    np.testing.assert_allclose(codes, np.round(codes), atol=1e-9)
    assert np.all(np.round(codes) >= -8) and np.all(np.round(codes) <= 7)
    y2, _, _ = tinyptq.quantize_tensor(x, 4, symmetric=True, channel_axis=1, init="mse")
    assert np.sum((y2 - x) ** 2) <= np.sum((y - x) ** 2) * (1 + 1e-12)


def test_container_round_trip(tmp_path):
    path = str(tmp_path / "c.tqt")
    entries = {
        "w": np.arange(6, dtype=np.float32).reshape(2, 3) / 4,
        "codes": np.array([-3, 0, 5], dtype=np.int32),
        "meta": b'{"k": 1}',
    }
    tinyptq.write_container(path, entries)
    back = tinyptq.read_container(path)
    np.testing.assert_array_equal(back["w"], entries["w"])
    assert back["w"].dtype == np.float32
    np.testing.assert_array_equal(back["codes"], entries["codes"])
    assert back["meta"] == entries["meta"]
    with open(path, "r+b") as f:
        f.write(b"X")
    with pytest.raises(tinyptq.FormatError, match="offset 0"):
        tinyptq.read_container(path)


def test_pipeline_and_reload(tmp_path):
    rng = np.random.default_rng(1)
    calib = rng.normal(size=(16, 10, 49, 1))
    q = tinyptq.quantize("dscnn", calib, weight_bits=4, act_bits=4, strategy="opt_round", iters=4,
                         batch_size=8, calib_size=16, eval_every=2, seed=3)
    logits = q.forward(calib[:4])
    assert logits.shape == (4, 12)
    assert json.loads(q.log)["units"]
    codes = np.asarray(q.weight_codes("conv1"))
    assert codes.min() >= -8 and codes.max() <= 7
    path = str(tmp_path / "q.tqt")
    q.save(path)
    again = tinyptq.load_quantized(path)
    np.testing.assert_array_equal(again.forward(calib[:4]), logits)
    labels = np.argmax(logits, axis=1).tolist()
    assert again.accuracy(calib[:4], labels) == 1.0


def test_full_precision_pipeline_matches_float():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(8, 128, 9))
    q = tinyptq.quantize("har_cnn", x, weights_seed=4, weight_bits=32, act_bits=32, iters=0, calib_size=8,
                         batch_size=8)
    np.testing.assert_allclose(q.forward(x), tinyptq.predict("har_cnn", x, seed=4), rtol=1e-12, atol=1e-12)


def test_invalid_config_raises():
    x = np.zeros((8, 10, 49, 1))
    with pytest.raises(tinyptq.ConfigError):
        tinyptq.quantize("dscnn", x, strategy="opt_bits", granularity="blockwise")
    with pytest.raises(tinyptq.ConfigError):
        tinyptq.quantize("dscnn", x, not_a_setting=1)


def test_cli_in_process_and_binary():
    code, out, _ = tinyptq.cli(["stats", "--model", "res8", "--json"])
    assert code == 0
    assert json.loads(out)["params"] == 77_706
    code, _, _ = tinyptq.cli(["stats", "--model", "nope"])
    assert code == 1
    binary = os.environ.get("TINYPTQ_CLI")
    if binary:
        done = subprocess.run([binary, "stats", "--model", "har_cnn"], capture_output=True, text=True)
        assert done.returncode == 0
        assert "peak_activation" in done.stdout
