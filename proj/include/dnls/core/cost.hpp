// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <typeinfo>
#include <utility>
#include <vector>

#include "dnls/core/variable.hpp"
#include "dnls/core/weight.hpp"
#include "dnls/tensor/dual.hpp"
#include "dnls/tensor/jacobian.hpp"
#include "dnls/tensor/tape.hpp"

namespace dnls {

// A vector-valued error c(theta; phi) over some optimization variables
// (theta) and auxiliary variables (phi), with a weight and a robust kernel.
//
// Inputs to error() and jacobians() are the payloads in declaration order:
// optimization variables first, then auxiliary variables. They may carry any
// batch; grouped evaluation stacks several costs along the batch axis.
// Jacobians are with respect to the tangent coordinates of each optimization
// variable, (N, dim, tangent_dim), and may have batch 1 when constant.
class CostFunction {
 public:
  CostFunction(std::string name, std::vector<VariablePtr> optim, std::vector<VariablePtr> aux, std::int64_t dim);
  virtual ~CostFunction() = default;

  const std::string& name() const noexcept { return name_; }
  const std::vector<VariablePtr>& optim_vars() const noexcept { return optim_; }
  const std::vector<VariablePtr>& aux_vars() const noexcept { return aux_; }
  std::int64_t dim() const noexcept { return dim_; }

  const CostWeight& weight() const noexcept { return weight_; }
  const RobustKernel& kernel() const noexcept { return kernel_; }
  void set_weight(CostWeight w);
  void set_kernel(RobustKernel k) { kernel_ = std::move(k); }

  // Costs with equal keys compute the same function of their inputs and can
  // be evaluated as one stacked call.
  virtual std::string type_key() const = 0;
  virtual bool has_analytic_jacobians() const = 0;

  virtual BatchedArray error(const std::vector<BatchedArray>& in) const = 0;
  virtual Var error(const std::vector<Var>& in) const = 0;
  virtual std::vector<BatchedArray> jacobians(const std::vector<BatchedArray>& in, BatchedArray* err) const = 0;
  virtual std::vector<Var> jacobians(const std::vector<Var>& in, Var* err) const = 0;
  // Forward-mode Jacobians regardless of analytic availability.
  virtual std::vector<BatchedArray> autodiff_jacobians(const std::vector<BatchedArray>& in, BatchedArray* err) const = 0;

  // Rebinds a slot to the objective's variable of the same name.
  void rebind(std::size_t slot, VariablePtr v);

 protected:
  std::vector<Manifold> optim_kinds() const;
  std::vector<std::int64_t> tangent_dims() const;

 private:
  std::string name_;
  std::vector<VariablePtr> optim_;
  std::vector<VariablePtr> aux_;
  std::int64_t dim_;
  CostWeight weight_;
  RobustKernel kernel_;
};

using CostPtr = std::shared_ptr<CostFunction>;

// Forward-mode Jacobians of `fn` with manifold-aware seeds.
template <class A, class Fn>
std::vector<A> autodiff_cost_jacobians(Fn&& fn, const std::vector<A>& in, const std::vector<Manifold>& kinds,
                                       const std::vector<std::int64_t>& tdims, A* err) {
  std::vector<std::int64_t> all_dims(in.size(), 0);
  std::vector<std::size_t> wrt;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    all_dims[k] = tdims[k];
    wrt.push_back(k);
  }
  return jacobian_forward<A>(
      fn, in, all_dims, wrt, [&](std::size_t k, std::int64_t i) { return manifold_seed(kinds[k], in[k], i); }, err);
}

// CRTP base: Derived provides
//   template <class T> T error_impl(const std::vector<T>& in) const;
// and optionally, with `static constexpr bool kAnalytic = true`,
//   template <class T> std::vector<T> jacobian_impl(const std::vector<T>& in, T* err) const;
template <class Derived>
class GenericCost : public CostFunction {
 public:
  using CostFunction::CostFunction;

  bool has_analytic_jacobians() const override { return analytic(); }

  BatchedArray error(const std::vector<BatchedArray>& in) const override { return self().error_impl(in); }
  Var error(const std::vector<Var>& in) const override { return self().error_impl(in); }

  std::vector<BatchedArray> jacobians(const std::vector<BatchedArray>& in, BatchedArray* err) const override {
    return jac(in, err);
  }
  std::vector<Var> jacobians(const std::vector<Var>& in, Var* err) const override { return jac(in, err); }

  std::vector<BatchedArray> autodiff_jacobians(const std::vector<BatchedArray>& in, BatchedArray* err) const override {
    return autodiff(in, err);
  }

 private:
  static constexpr bool analytic() {
    if constexpr (requires { Derived::kAnalytic; }) return Derived::kAnalytic;
    else return false;
  }
  const Derived& self() const { return static_cast<const Derived&>(*this); }

  template <class T>
  std::vector<T> autodiff(const std::vector<T>& in, T* err) const {
    return autodiff_cost_jacobians<T>([this](const std::vector<Dual<T>>& x) { return self().error_impl(x); }, in,
                                      optim_kinds(), tangent_dims(), err);
  }

  template <class T>
  std::vector<T> jac(const std::vector<T>& in, T* err) const {
    if constexpr (analytic()) return self().jacobian_impl(in, err);
    else return autodiff(in, err);
  }
};

// r = local(target, x) on Lie groups, x - target for vectors. Slots: optim
// {x}, aux {target}.
class Prior : public GenericCost<Prior> {
 public:
  static constexpr bool kAnalytic = true;
  Prior(std::string name, VariablePtr x, VariablePtr target);

  std::string type_key() const override;

  template <class T>
  T error_impl(const std::vector<T>& in) const {
    return manifold_local(kind_, in[1], in[0]);
  }

  template <class T>
  std::vector<T> jacobian_impl(const std::vector<T>& in, T* err) const {
    if (auto g = group_of(kind_)) {
      T jb;
      lie::jacobian_local(*g, in[1], in[0], static_cast<T*>(nullptr), &jb, err);
      return {jb};
    }
    if (err != nullptr) *err = error_impl(in);
    return {constant_like(in[0], BatchedArray::identity(1, value(in[0]).item_size()))};
  }

 private:
  Manifold kind_;
};

// Relative pose error r = local(z, inverse(a) * b) on Lie groups, or
// (b - a) - z for vectors. Slots: optim {a, b}, aux {z}.
class Between : public GenericCost<Between> {
 public:
  static constexpr bool kAnalytic = true;
  Between(std::string name, VariablePtr a, VariablePtr b, VariablePtr measurement);

  std::string type_key() const override;

  template <class T>
  T error_impl(const std::vector<T>& in) const {
    if (auto g = group_of(kind_)) return lie::local(*g, in[2], lie::compose(*g, lie::inverse(*g, in[0]), in[1]));
    return reshape(sub(sub(in[1], in[0]), in[2]), Shape{value(in[0]).item_size()});
  }

  template <class T>
  std::vector<T> jacobian_impl(const std::vector<T>& in, T* err) const {
    if (auto g = group_of(kind_)) {
      const T rel = lie::compose(*g, lie::inverse(*g, in[0]), in[1]);
      T jr;
      lie::jacobian_local(*g, in[2], rel, static_cast<T*>(nullptr), &jr, err);
      const T ja = neg(matmul(jr, lie::adjoint(*g, lie::inverse(*g, rel))));
      return {ja, jr};
    }
    if (err != nullptr) *err = error_impl(in);
    const std::int64_t n = value(in[0]).item_size();
    const T I = constant_like(in[0], BatchedArray::identity(1, n));
    return {neg(I), I};
  }

 private:
  Manifold kind_;
};

// User-defined error function with forward-mode Jacobians. `fn` is a generic
// callable fn(const std::vector<T>&) -> T over the primitive ops. Costs that
// share `schema` must compute the same function; they are then grouped.
template <class Fn>
class AutoDiffCost : public GenericCost<AutoDiffCost<Fn>> {
 public:
  AutoDiffCost(std::string schema, std::string name, std::vector<VariablePtr> optim, std::vector<VariablePtr> aux,
               std::int64_t dim, Fn fn)
      : GenericCost<AutoDiffCost<Fn>>(std::move(name), std::move(optim), std::move(aux), dim),
        schema_(std::move(schema)),
        fn_(std::move(fn)) {}

  std::string type_key() const override { return "AutoDiff:" + schema_ + ":" + typeid(Fn).name(); }

  template <class T>
  T error_impl(const std::vector<T>& in) const {
    return fn_(in);
  }

 private:
  std::string schema_;
  Fn fn_;
};

template <class Fn>
std::shared_ptr<AutoDiffCost<Fn>> make_autodiff_cost(std::string schema, std::string name,
                                                     std::vector<VariablePtr> optim, std::vector<VariablePtr> aux,
                                                     std::int64_t dim, Fn fn) {
  return std::make_shared<AutoDiffCost<Fn>>(std::move(schema), std::move(name), std::move(optim), std::move(aux), dim,
                                            std::move(fn));
}

}  // namespace dnls
