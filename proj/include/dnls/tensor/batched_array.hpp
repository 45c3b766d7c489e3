// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dnls/tensor/memory.hpp"

namespace dnls {

using Shape = std::vector<std::int64_t>;
using Buffer = std::vector<double, memory::TrackingAllocator<double>>;

std::string shape_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

// Dense row-major real array whose leading dimension is the batch size.
// Every value in the library (variable payloads, residuals, Jacobian blocks,
// Hessian values) is carried by one of these.
class BatchedArray {
 public:
  BatchedArray() = default;
  explicit BatchedArray(Shape shape, double fill = 0.0);
  BatchedArray(Shape shape, std::span<const double> values);
  BatchedArray(Shape shape, std::initializer_list<double> values);

  static BatchedArray zeros(Shape shape) { return BatchedArray(std::move(shape), 0.0); }
  static BatchedArray full(Shape shape, double v) { return BatchedArray(std::move(shape), v); }
  // Batch of identical identity matrices, shape (batch, n, n).
  static BatchedArray identity(std::int64_t batch, std::int64_t n);

  bool empty() const noexcept { return shape_.empty(); }
  const Shape& shape() const noexcept { return shape_; }
  std::int64_t rank() const noexcept { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t batch() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::int64_t dim(std::int64_t axis) const;
  // Shape without the batch dimension.
  Shape item_shape() const { return Shape(shape_.begin() + (shape_.empty() ? 0 : 1), shape_.end()); }
  // Number of scalars per batch element.
  std::int64_t item_size() const noexcept { return item_size_; }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const double> values() const noexcept { return {data_.data(), data_.size()}; }

  double* item(std::int64_t b) noexcept { return data_.data() + b * item_size_; }
  const double* item(std::int64_t b) const noexcept { return data_.data() + b * item_size_; }

  double& operator[](std::int64_t i) noexcept { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const noexcept { return data_[static_cast<std::size_t>(i)]; }

  // Element access by batch index and flat index within the item.
  double& at(std::int64_t b, std::int64_t i) noexcept { return data_[static_cast<std::size_t>(b * item_size_ + i)]; }
  double at(std::int64_t b, std::int64_t i) const noexcept {
    return data_[static_cast<std::size_t>(b * item_size_ + i)];
  }

  // Same data, new trailing shape (batch preserved).
  BatchedArray reshaped(Shape item_shape) const;
  // Repeat a batch-1 array to `batch` rows; identity if already sized.
  BatchedArray broadcast_to(std::int64_t batch) const;
  // Copy of a single batch element as a batch-1 array.
  BatchedArray slice_batch(std::int64_t b) const;

  bool all_finite() const noexcept;
  std::string shape_string() const { return dnls::shape_string(shape_); }

  bool operator==(const BatchedArray& other) const noexcept {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::int64_t item_size_ = 0;
  Buffer data_;
};

// Max absolute elementwise difference; shapes must match.
double max_abs_diff(const BatchedArray& a, const BatchedArray& b);
double max_abs(const BatchedArray& a);

}  // namespace dnls
