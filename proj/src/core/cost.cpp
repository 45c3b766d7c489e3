// SPDX-License-Identifier: Apache-2.0
#include "dnls/core/cost.hpp"

namespace dnls {

CostFunction::CostFunction(std::string name, std::vector<VariablePtr> optim, std::vector<VariablePtr> aux,
                           std::int64_t dim)
    : name_(std::move(name)), optim_(std::move(optim)), aux_(std::move(aux)), dim_(dim) {
  if (optim_.empty()) throw Error("cost '" + name_ + "': needs at least one optimization variable");
  if (dim_ <= 0) throw Error("cost '" + name_ + "': dimension must be positive");
  for (const auto& v : optim_) {
    if (!v) throw Error("cost '" + name_ + "': null variable");
  }
  for (const auto& v : aux_) {
    if (!v) throw Error("cost '" + name_ + "': null variable");
  }
}

void CostFunction::set_weight(CostWeight w) {
  if (w.kind() == CostWeight::Kind::Diagonal && w.variable()->item_shape() != Shape{dim_}) {
    throw ShapeError("cost '" + name_ + "': diagonal weight of shape " + shape_string(w.variable()->item_shape()) +
                     " for residual dimension " + std::to_string(dim_));
  }
  weight_ = std::move(w);
}

void CostFunction::rebind(std::size_t slot, VariablePtr v) {
  if (slot < optim_.size()) optim_[slot] = std::move(v);
  else aux_.at(slot - optim_.size()) = std::move(v);
}

std::vector<Manifold> CostFunction::optim_kinds() const {
  std::vector<Manifold> k;
  for (const auto& v : optim_) k.push_back(v->kind());
  return k;
}

std::vector<std::int64_t> CostFunction::tangent_dims() const {
  std::vector<std::int64_t> d;
  for (const auto& v : optim_) d.push_back(v->tangent_dim());
  return d;
}

namespace {
std::int64_t prior_dim(const VariablePtr& x) {
  if (!x) throw Error("Prior: null variable");
  return x->tangent_dim();
}
}  // namespace

Prior::Prior(std::string name, VariablePtr x, VariablePtr target)
    : GenericCost<Prior>(std::move(name), {x}, {target}, prior_dim(x)), kind_(x->kind()) {
  if (!target || target->kind() != x->kind() || target->item_shape() != x->item_shape()) {
    throw ShapeError("Prior '" + this->name() + "': target must match the variable's kind and shape");
  }
}

std::string Prior::type_key() const { return std::string("Prior:") + manifold_name(kind_); }

Between::Between(std::string name, VariablePtr a, VariablePtr b, VariablePtr measurement)
    : GenericCost<Between>(std::move(name), {a, b}, {measurement}, prior_dim(a)), kind_(a->kind()) {
  const bool ok = b && measurement && b->kind() == a->kind() && measurement->kind() == a->kind() &&
                  b->item_shape() == a->item_shape() && measurement->item_shape() == a->item_shape();
  if (!ok) throw ShapeError("Between '" + this->name() + "': poses and measurement must share kind and shape");
}

std::string Between::type_key() const { return std::string("Between:") + manifold_name(kind_); }

}  // namespace dnls
