// SPDX-License-Identifier: Apache-2.0
#include "dnls/core/weight.hpp"

namespace dnls {

CostWeight CostWeight::scale(VariablePtr w) {
  if (!w || w->kind() != Manifold::Euclidean || w->item_shape() != Shape{1}) {
    throw ShapeError("CostWeight::scale: expected a Euclidean (B, 1) variable");
  }
  CostWeight c;
  c.kind_ = Kind::Scale;
  c.var_ = std::move(w);
  return c;
}

CostWeight CostWeight::diagonal(VariablePtr w) {
  if (!w || w->kind() != Manifold::Euclidean || w->value().rank() != 2) {
    throw ShapeError("CostWeight::diagonal: expected a Euclidean (B, dim) variable");
  }
  CostWeight c;
  c.kind_ = Kind::Diagonal;
  c.var_ = std::move(w);
  return c;
}

const char* weight_kind_name(CostWeight::Kind k) noexcept {
  switch (k) {
    case CostWeight::Kind::None: return "none";
    case CostWeight::Kind::Scale: return "scale";
    case CostWeight::Kind::Diagonal: return "diagonal";
  }
  return "?";
}

void check_radius(const BatchedArray& radius, const std::string& where) {
  for (std::int64_t i = 0; i < radius.numel(); ++i) {
    if (!(radius[i] > 0.0)) throw Error(where + ": robust kernel radius must be positive, got " + std::to_string(radius[i]));
  }
}

namespace {
RobustKernel make_kernel(VariablePtr r, const char* what) {
  if (!r || r->kind() != Manifold::Euclidean || r->item_shape() != Shape{1}) {
    throw ShapeError(std::string(what) + ": radius must be a Euclidean (B, 1) variable");
  }
  check_radius(r->value(), what);
  return RobustKernel();
}
}  // namespace

RobustKernel RobustKernel::huber(VariablePtr radius) {
  RobustKernel k = make_kernel(radius, "RobustKernel::huber");
  k.kind_ = Kind::Huber;
  k.radius_ = std::move(radius);
  return k;
}

RobustKernel RobustKernel::welsch(VariablePtr radius) {
  RobustKernel k = make_kernel(radius, "RobustKernel::welsch");
  k.kind_ = Kind::Welsch;
  k.radius_ = std::move(radius);
  return k;
}

const char* kernel_kind_name(RobustKernel::Kind k) noexcept {
  switch (k) {
    case RobustKernel::Kind::None: return "none";
    case RobustKernel::Kind::Huber: return "huber";
    case RobustKernel::Kind::Welsch: return "welsch";
  }
  return "?";
}

RobustRescale robust_rescale(RobustKernel::Kind kind, const BatchedArray& s, const BatchedArray& radius) {
  if (s.item_size() != 1) throw ShapeError("robust_rescale: s must be (N, 1), got " + s.shape_string());
  for (std::int64_t i = 0; i < s.numel(); ++i) {
    if (!(s[i] >= 0.0)) throw Error("robust_rescale: squared norm must be non-negative");
  }
  if (kind != RobustKernel::Kind::None) check_radius(radius, "robust_rescale");
  const BatchedArray k = kind == RobustKernel::Kind::None ? BatchedArray({1, 1}, {1.0}) : radius;
  KernelEval<BatchedArray> e = robust_eval(kind, s, k);
  return {e.kappa, e.dkappa, e.rho};
}

}  // namespace dnls
