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
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tinyptq {

using Shape = std::vector<std::int64_t>;

std::int64_t num_elements(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Activations are laid out N,H,W,C (or
// N,L,C for 1-d data); weight layouts are documented on Layer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Same values, new shape; element counts must agree.
  Tensor reshaped(Shape shape) const;

  void fill(double value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Rows [begin, begin + count) along axis 0.
Tensor slice_rows(const Tensor& t, std::int64_t begin, std::int64_t count);

/// Rows picked by index along axis 0, in the given order.
Tensor gather_rows(const Tensor& t, std::span<const std::int64_t> rows);

/// Concatenation along axis 0; all trailing dims must agree.
Tensor concat_rows(std::span<const Tensor> parts);

/// Shape with a leading batch extent prepended.
Shape batched(std::int64_t n, const Shape& sample);

/// Mean of squared elementwise differences.
double mean_squared_error(const Tensor& a, const Tensor& b);

/// Sum of squared elementwise differences.
double sum_squared_error(const Tensor& a, const Tensor& b);

double l2_norm(const Tensor& t);

bool all_finite(const Tensor& t);

}  // namespace tinyptq
