// SPDX-License-Identifier: Apache-2.0
#include "dnls/tensor/batched_array.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dnls/error.hpp"

namespace dnls {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty() || shape[0] < 1) {
    throw ShapeError("BatchedArray: batch dimension must be >= 1, got " + shape_string(shape));
  }
  for (auto d : shape) {
    if (d < 0) throw ShapeError("BatchedArray: negative dimension in " + shape_string(shape));
  }
}
}  // namespace

BatchedArray::BatchedArray(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  item_size_ = shape_numel(shape_) / shape_[0];
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

BatchedArray::BatchedArray(Shape shape, std::span<const double> values) : shape_(std::move(shape)) {
  check_shape(shape_);
  item_size_ = shape_numel(shape_) / shape_[0];
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape_)) {
    throw ShapeError("BatchedArray: " + std::to_string(values.size()) + " values for shape " +
                     dnls::shape_string(shape_));
  }
  data_.assign(values.begin(), values.end());
}

BatchedArray::BatchedArray(Shape shape, std::initializer_list<double> values)
    : BatchedArray(std::move(shape), std::span<const double>(values.begin(), values.size())) {}

BatchedArray BatchedArray::identity(std::int64_t batch, std::int64_t n) {
  BatchedArray out({batch, n, n});
  for (std::int64_t b = 0; b < batch; ++b) {
    double* p = out.item(b);
    for (std::int64_t i = 0; i < n; ++i) p[i * n + i] = 1.0;
  }
  return out;
}

std::int64_t BatchedArray::dim(std::int64_t axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("BatchedArray::dim: axis " + std::to_string(axis) + " out of range for " +
                     shape_string());
  }
  return shape_[static_cast<std::size_t>(axis)];
}

BatchedArray BatchedArray::reshaped(Shape item_shape) const {
  Shape full{batch()};
  full.insert(full.end(), item_shape.begin(), item_shape.end());
  if (shape_numel(full) != numel()) {
    throw ShapeError("reshape: cannot view " + shape_string() + " as " + dnls::shape_string(full));
  }
  BatchedArray out;
  out.shape_ = std::move(full);
  out.item_size_ = item_size_;
  out.data_ = data_;
  return out;
}

BatchedArray BatchedArray::broadcast_to(std::int64_t b) const {
  if (batch() == b) return *this;
  if (batch() != 1) {
    throw ShapeError("broadcast: cannot broadcast batch " + std::to_string(batch()) + " to " +
                     std::to_string(b));
  }
  Shape s = shape_;
  s[0] = b;
  BatchedArray out(s);
  for (std::int64_t i = 0; i < b; ++i) std::copy(data(), data() + item_size_, out.item(i));
  return out;
}

BatchedArray BatchedArray::slice_batch(std::int64_t b) const {
  Shape s = shape_;
  s[0] = 1;
  return BatchedArray(s, std::span<const double>(item(b), static_cast<std::size_t>(item_size_)));
}

bool BatchedArray::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const BatchedArray& a, const BatchedArray& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  }
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const BatchedArray& a) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i]));
  return m;
}

}  // namespace dnls
