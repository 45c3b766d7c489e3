// SPDX-License-Identifier: Apache-2.0
#include "dnls/core/variable.hpp"

namespace dnls {

const char* manifold_name(Manifold m) noexcept {
  switch (m) {
    case Manifold::Euclidean: return "Euclidean";
    case Manifold::SO2: return "SO2";
    case Manifold::SE2: return "SE2";
    case Manifold::SO3: return "SO3";
    case Manifold::SE3: return "SE3";
  }
  return "?";
}

std::optional<lie::Group> group_of(Manifold m) noexcept {
  switch (m) {
    case Manifold::SO2: return lie::Group::SO2;
    case Manifold::SE2: return lie::Group::SE2;
    case Manifold::SO3: return lie::Group::SO3;
    case Manifold::SE3: return lie::Group::SE3;
    case Manifold::Euclidean: break;
  }
  return std::nullopt;
}

Manifold manifold_of(lie::Group g) noexcept {
  switch (g) {
    case lie::Group::SO2: return Manifold::SO2;
    case lie::Group::SE2: return Manifold::SE2;
    case lie::Group::SO3: return Manifold::SO3;
    case lie::Group::SE3: return Manifold::SE3;
  }
  return Manifold::Euclidean;
}

std::int64_t manifold_tangent_dim(Manifold m, const Shape& item_shape) {
  if (auto g = group_of(m)) return lie::tangent_dim(*g);
  return shape_numel(item_shape);
}

void check_payload(Manifold kind, const BatchedArray& v, const std::string& name) {
  if (v.rank() < 2) throw ShapeError("variable '" + name + "': payload must be batched, got " + v.shape_string());
  if (!v.all_finite()) throw NonFiniteError("variable '" + name + "': non-finite payload");
  if (auto g = group_of(kind)) lie::LieGroupElement(*g, v);
}

Variable::Variable(std::string name, BatchedArray value, Manifold kind)
    : name_(std::move(name)), kind_(kind), value_(std::move(value)) {
  if (name_.empty()) throw Error("variable: empty name");
  check_payload(kind_, value_, name_);
}

void Variable::set_value(BatchedArray v) {
  if (v.item_shape() != value_.item_shape()) {
    throw ShapeError("variable '" + name_ + "': payload " + v.shape_string() + " does not match item shape " +
                     shape_string(value_.item_shape()));
  }
  check_payload(kind_, v, name_);
  value_ = std::move(v);
}

std::int64_t Variable::tangent_dim() const { return manifold_tangent_dim(kind_, value_.item_shape()); }

VariablePtr make_variable(std::string name, BatchedArray value) {
  return std::make_shared<Variable>(std::move(name), std::move(value), Manifold::Euclidean);
}

VariablePtr make_variable(std::string name, const lie::LieGroupElement& value) {
  return std::make_shared<Variable>(std::move(name), value.data(), manifold_of(value.kind()));
}

VariablePtr make_variable(std::string name, BatchedArray value, Manifold kind) {
  return std::make_shared<Variable>(std::move(name), std::move(value), kind);
}

BatchedArray manifold_project(Manifold m, const BatchedArray& x, const BatchedArray& euclidean_grad) {
  if (auto g = group_of(m)) return lie::project_gradient(*g, x, euclidean_grad);
  return reshape(euclidean_grad, Shape{x.item_size()});
}

BatchedArray manifold_lift(Manifold m, const BatchedArray& x, const BatchedArray& tangent_grad) {
  if (auto g = group_of(m)) return lie::lift_gradient(*g, x, tangent_grad);
  return reshape(tangent_grad, x.item_shape());
}

}  // namespace dnls
