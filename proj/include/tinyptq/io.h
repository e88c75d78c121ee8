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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tinyptq/config.h"
#include "tinyptq/models.h"
#include "tinyptq/ptq.h"

namespace tinyptq {

// Binary tensor container, little-endian throughout:
//   "TQT1" | version u16 | entry count u32 |
//   entries: name length u16 | name (UTF-8) | dtype u8 | rank u8 |
//            dims u32 x rank | payload (product(dims) x dtype size)
enum class DType : std::uint8_t { kF32 = 0, kI32 = 1, kU8 = 2 };

inline constexpr std::uint16_t kContainerVersion = 1;

std::size_t dtype_size(DType t);

struct ContainerEntry {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint32_t> dims;
  /// Raw little-endian payload.
  std::vector<std::uint8_t> payload;

  std::int64_t elements() const;

  static ContainerEntry f32(std::string name, const Tensor& t);
  static ContainerEntry i32(std::string name, std::vector<std::uint32_t> dims,
                            std::span<const std::int32_t> values);
  static ContainerEntry text(std::string name, std::string_view bytes);

  /// f32 or i32 payload as a double tensor with the entry's dims.
  Tensor to_tensor() const;
  std::vector<std::int32_t> to_i32() const;
  std::string to_text() const;
};

class TensorContainer {
 public:
  /// Throws FormatError on a duplicate name.
  void add(ContainerEntry entry);
  const ContainerEntry* find(std::string_view name) const;
  /// Throws FormatError naming the missing entry.
  const ContainerEntry& at(std::string_view name) const;
  const std::vector<ContainerEntry>& entries() const noexcept { return entries_; }

 private:
  std::vector<ContainerEntry> entries_;
};

std::vector<std::uint8_t> serialize(const TensorContainer& c);
/// Throws FormatError with the byte offset of the first problem.
TensorContainer parse_container(std::span<const std::uint8_t> bytes);

void save_container(const TensorContainer& c, const std::string& path);
TensorContainer load_container(const std::string& path);

/// Parameters are stored as f32 "<layer>.<param>" entries.
void save_weights(const ParameterSet& params, const std::string& path);
ParameterSet load_weights(const std::string& path);

struct Dataset {
  /// N x sample shape.
  Tensor inputs;
  /// Empty for unlabeled (calibration) sets.
  std::vector<std::int32_t> labels;
};

// Entries "inputs" (f32, N x sample) and optionally "labels" (i32, N).
// `limit` keeps the first samples; nullopt keeps all.
Dataset load_dataset(const std::string& path, std::optional<std::int64_t> limit = std::nullopt);
void save_dataset(const Dataset& d, const std::string& path);

// Quantized model file: JSON entries meta.model, meta.config and
// meta.quantizers (exact scales, zero-points and biases) plus i32
// "<layer>.weight_codes" and f32 "<layer>.weight" / "<layer>.bias" copies
// of the effective parameters.
TensorContainer quantized_container(const QuantizedGraph& q, const std::string& model,
                                    const PipelineConfig& config);
void save_quantized(const QuantizedGraph& q, const std::string& model, const PipelineConfig& config,
                    const std::string& path);
bool is_quantized(const TensorContainer& c);

struct LoadedQuantized {
  std::string model;
  PipelineConfig config;
  QuantizedGraph graph;
};
LoadedQuantized load_quantized(const TensorContainer& c);

}  // namespace tinyptq
