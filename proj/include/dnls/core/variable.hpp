// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>

#include "dnls/lie/lie.hpp"
#include "dnls/tensor/batched_array.hpp"

namespace dnls {

enum class Manifold { Euclidean, SO2, SE2, SO3, SE3 };

const char* manifold_name(Manifold m) noexcept;
std::optional<lie::Group> group_of(Manifold m) noexcept;
Manifold manifold_of(lie::Group g) noexcept;

// A named payload. Whether it is optimized or auxiliary is decided by how
// costs reference it; the Objective enforces a single role per name.
class Variable {
 public:
  Variable(std::string name, BatchedArray value, Manifold kind = Manifold::Euclidean);

  const std::string& name() const noexcept { return name_; }
  Manifold kind() const noexcept { return kind_; }
  const BatchedArray& value() const noexcept { return value_; }
  // Item shapes must match the current payload; the batch may change.
  void set_value(BatchedArray v);
  Shape item_shape() const { return value_.item_shape(); }
  std::int64_t tangent_dim() const;

 private:
  std::string name_;
  Manifold kind_;
  BatchedArray value_;
};

using VariablePtr = std::shared_ptr<Variable>;

VariablePtr make_variable(std::string name, BatchedArray value);
VariablePtr make_variable(std::string name, const lie::LieGroupElement& value);
VariablePtr make_variable(std::string name, BatchedArray value, Manifold kind);

void check_payload(Manifold kind, const BatchedArray& v, const std::string& name);

// Generic manifold operations over the tensor, tape and dual array types.

template <class T>
T manifold_retract(Manifold m, const T& x, const T& delta) {
  if (auto g = group_of(m)) return lie::retract(*g, x, delta);
  return add(x, reshape(delta, value(x).item_shape()));
}

// Tangent coordinates of b relative to a, (B, d).
template <class T>
T manifold_local(Manifold m, const T& a, const T& b) {
  if (auto g = group_of(m)) return lie::local(*g, a, b);
  return reshape(sub(b, a), Shape{value(a).item_size()});
}

// Embedding-space direction of tangent coordinate i at x.
template <class T>
T manifold_seed(Manifold m, const T& x, std::int64_t i) {
  if (auto g = group_of(m)) return lie::tangent_direction(*g, x, i);
  return euclidean_seed(x, i);
}

std::int64_t manifold_tangent_dim(Manifold m, const Shape& item_shape);

// Gradient with respect to the embedding -> tangent gradient, and back.
BatchedArray manifold_project(Manifold m, const BatchedArray& x, const BatchedArray& euclidean_grad);
BatchedArray manifold_lift(Manifold m, const BatchedArray& x, const BatchedArray& tangent_grad);

}  // namespace dnls
