// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dnls/core/cost.hpp"

namespace dnls {

// Indices of a cost's variables in the objective registry.
struct CostSlots {
  std::vector<int> optim;  // into Objective::optim_vars()
  std::vector<int> aux;    // into Objective::aux_vars()
  int weight = -1;         // aux index of the weight variable, if any
  int radius = -1;         // aux index of the kernel radius, if any
};

// Costs evaluated together as one stacked call; row m * B + b of a stacked
// array belongs to costs[m], batch element b.
struct CostGroup {
  std::string key;
  std::vector<std::size_t> costs;
};

// S(theta; phi) = sum_i rho_i(|w_i c_i|^2), with rho = s / 2 for costs
// without a robust kernel.
class Objective {
 public:
  Objective() = default;

  void add_cost_function(CostPtr cost);
  // Replaces payloads by name; batch-1 payloads broadcast to the objective
  // batch size.
  void update_inputs(const std::map<std::string, BatchedArray>& inputs);

  std::int64_t batch_size() const noexcept { return batch_; }
  std::size_t num_costs() const noexcept { return costs_.size(); }
  const CostPtr& cost(std::size_t i) const { return costs_.at(i); }
  const CostSlots& slots(std::size_t i) const { return slots_.at(i); }

  const std::vector<VariablePtr>& optim_vars() const noexcept { return optim_; }
  const std::vector<VariablePtr>& aux_vars() const noexcept { return aux_; }
  std::optional<int> optim_index(const std::string& name) const;
  std::optional<int> aux_index(const std::string& name) const;
  VariablePtr variable(const std::string& name) const;

  std::int64_t total_residual_dim() const noexcept { return residual_dim_; }
  std::int64_t total_tangent_dim() const;

  // Grouping of same-schema costs; when off, every cost is its own group.
  void set_vectorize(bool on);
  bool vectorize() const noexcept { return vectorize_; }
  const std::vector<CostGroup>& schedule() const;

  // Compare analytic Jacobians with forward-mode ones on every evaluation.
  void set_jacobian_self_check(bool on) noexcept { self_check_ = on; }
  bool jacobian_self_check() const noexcept { return self_check_; }

  std::vector<BatchedArray> optim_values() const;
  std::vector<BatchedArray> aux_values() const;
  void set_optim_values(const std::vector<BatchedArray>& values);

  // Bumped whenever costs or variables are added.
  std::uint64_t structure_revision() const noexcept { return revision_; }

 private:
  int register_var(const VariablePtr& v, bool optim, const std::string& cost_name);
  void broadcast_all();

  std::vector<CostPtr> costs_;
  std::vector<CostSlots> slots_;
  std::vector<VariablePtr> optim_;
  std::vector<VariablePtr> aux_;
  std::map<std::string, std::pair<bool, int>> index_;  // name -> (is_optim, index)
  std::set<std::string> broadcast_;                     // payloads expanded from batch 1
  std::int64_t batch_ = 1;
  std::int64_t residual_dim_ = 0;
  bool vectorize_ = true;
  bool self_check_ = false;
  std::uint64_t revision_ = 0;
  mutable std::vector<CostGroup> schedule_;
  mutable bool schedule_valid_ = false;
};

template <class T>
struct VarValues {
  std::vector<T> optim;
  std::vector<T> aux;
};

VarValues<BatchedArray> current_values(const Objective& obj);

enum class JacobianMode {
  // IRLS: residual and Jacobian both scaled by sqrt(2 rho'(s)) with the
  // kernel weight frozen at the current residual.
  Irls,
  // Exact derivative of the reported residual kappa w c.
  Chain,
};

struct LinearizeOptions {
  bool jacobians = true;
  JacobianMode mode = JacobianMode::Irls;
};

template <class T>
struct GroupTerms {
  std::size_t group = 0;
  T weighted;          // kappa w c, (N, dim)
  T residual;          // linearized residual, (N, dim)
  std::vector<T> jac;  // per optimization slot, (N, dim, td)
  T rho;               // (N, 1)
};

template <class T>
struct Terms {
  std::vector<GroupTerms<T>> groups;
  T objective;  // (B, 1)
};

template <class T>
Terms<T> linearize(const Objective& obj, const VarValues<T>& values, const LinearizeOptions& opts = {});

extern template Terms<BatchedArray> linearize(const Objective&, const VarValues<BatchedArray>&, const LinearizeOptions&);
extern template Terms<Var> linearize(const Objective&, const VarValues<Var>&, const LinearizeOptions&);

// Plain-value front ends over the current payloads.
struct ResidualEval {
  BatchedArray stacked;                 // (B, total_dim), costs in insertion order
  std::vector<BatchedArray> per_cost;   // (B, dim_i)
  BatchedArray objective;               // (B, 1)
};

ResidualEval evaluate_residuals(const Objective& obj);
// [cost][slot] -> (B, dim, td)
std::vector<std::vector<BatchedArray>> evaluate_jacobians(const Objective& obj, JacobianMode mode = JacobianMode::Irls);
BatchedArray objective_value(const Objective& obj);

// Rows of a stacked group array belonging to group member m.
template <class T>
T group_member(const T& stacked, std::size_t m, std::int64_t batch) {
  if (value(stacked).batch() == 1) return stacked;
  if (value(stacked).batch() == batch) return stacked;
  return slice_rows(stacked, static_cast<std::int64_t>(m) * batch, batch);
}

}  // namespace dnls
