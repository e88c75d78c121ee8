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

#include "tinyptq/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "tinyptq/error.h"

namespace tinyptq {

std::int64_t num_elements(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d < 0) throw StructuralError("negative tensor extent in " + shape_string(shape_));
  }
  data_.assign(static_cast<std::size_t>(num_elements(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (num_elements(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw StructuralError("tensor shape " + shape_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " values");
  }
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw StructuralError("axis out of range");
  return shape_[static_cast<std::size_t>(axis)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (num_elements(shape) != size()) {
    throw StructuralError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor slice_rows(const Tensor& t, std::int64_t begin, std::int64_t count) {
  if (t.rank() == 0 || begin < 0 || count < 0 || begin + count > t.dim(0)) {
    throw StructuralError("row slice out of range for " + shape_string(t.shape()));
  }
  Shape shape = t.shape();
  shape[0] = count;
  const std::int64_t row = t.dim(0) ? t.size() / t.dim(0) : 0;
  Tensor out(shape);
  if (count > 0) {
    std::memcpy(out.data(), t.data() + begin * row,
                static_cast<std::size_t>(count * row) * sizeof(double));
  }
  return out;
}

Tensor gather_rows(const Tensor& t, std::span<const std::int64_t> rows) {
  Shape shape = t.shape();
  shape[0] = static_cast<std::int64_t>(rows.size());
  const std::int64_t row = t.dim(0) ? t.size() / t.dim(0) : 0;
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.dim(0)) throw StructuralError("row index out of range");
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * row, t.data() + rows[i] * row,
                static_cast<std::size_t>(row) * sizeof(double));
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) return Tensor();
  Shape shape = parts.front().shape();
  std::int64_t rows = 0;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    if (!std::equal(tail.begin(), tail.end(), shape.begin() + 1, shape.end())) {
      throw StructuralError("concat_rows: trailing shapes differ");
    }
    rows += p.dim(0);
  }
  shape[0] = rows;
  Tensor out(shape);
  double* dst = out.data();
  for (const auto& p : parts) {
    std::memcpy(dst, p.data(), static_cast<std::size_t>(p.size()) * sizeof(double));
    dst += p.size();
  }
  return out;
}

Shape batched(std::int64_t n, const Shape& sample) {
  Shape s;
  s.reserve(sample.size() + 1);
  s.push_back(n);
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

double sum_squared_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw StructuralError("shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
  if (a.size() == 0) return 0.0;
  return sum_squared_error(a, b) / static_cast<double>(a.size());
}

double l2_norm(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v * v;
  return std::sqrt(acc);
}

bool all_finite(const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace tinyptq
