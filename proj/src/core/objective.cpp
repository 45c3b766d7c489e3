// SPDX-License-Identifier: Apache-2.0
#include "dnls/core/objective.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <type_traits>

namespace dnls {

int Objective::register_var(const VariablePtr& v, bool optim, const std::string& cost_name) {
  auto it = index_.find(v->name());
  if (it != index_.end()) {
    const VariablePtr& have = it->second.first ? optim_[static_cast<std::size_t>(it->second.second)]
                                               : aux_[static_cast<std::size_t>(it->second.second)];
    if (have->kind() != v->kind() || have->item_shape() != v->item_shape()) {
      throw Error("cost '" + cost_name + "': variable '" + v->name() + "' is registered as " +
                  manifold_name(have->kind()) + " " + shape_string(have->item_shape()) + ", redeclared as " +
                  manifold_name(v->kind()) + " " + shape_string(v->item_shape()));
    }
    if (it->second.first != optim) {
      throw Error("cost '" + cost_name + "': variable '" + v->name() + "' cannot be both optimized and auxiliary");
    }
    return it->second.second;
  }
  auto& list = optim ? optim_ : aux_;
  list.push_back(v);
  const int idx = static_cast<int>(list.size()) - 1;
  index_[v->name()] = {optim, idx};
  return idx;
}

void Objective::add_cost_function(CostPtr cost) {
  if (!cost) throw Error("add_cost_function: null cost");
  CostSlots s;
  const std::size_t no = cost->optim_vars().size();
  // Validate everything before mutating the registry.
  {
    Objective probe;
    probe.index_ = index_;
    probe.optim_ = optim_;
    probe.aux_ = aux_;
    for (const auto& v : cost->optim_vars()) probe.register_var(v, true, cost->name());
    for (const auto& v : cost->aux_vars()) probe.register_var(v, false, cost->name());
    if (cost->weight().variable()) probe.register_var(cost->weight().variable(), false, cost->name());
    if (cost->kernel().radius()) probe.register_var(cost->kernel().radius(), false, cost->name());
  }
  for (std::size_t i = 0; i < no; ++i) {
    const int idx = register_var(cost->optim_vars()[i], true, cost->name());
    for (int prev : s.optim) {
      if (prev == idx) throw Error("cost '" + cost->name() + "': variable listed twice");
    }
    s.optim.push_back(idx);
    cost->rebind(i, optim_[static_cast<std::size_t>(idx)]);
  }
  for (std::size_t i = 0; i < cost->aux_vars().size(); ++i) {
    const int idx = register_var(cost->aux_vars()[i], false, cost->name());
    s.aux.push_back(idx);
    cost->rebind(no + i, aux_[static_cast<std::size_t>(idx)]);
  }
  if (const auto& w = cost->weight().variable()) {
    s.weight = register_var(w, false, cost->name());
    const VariablePtr& reg = aux_[static_cast<std::size_t>(s.weight)];
    cost->set_weight(cost->weight().kind() == CostWeight::Kind::Scale ? CostWeight::scale(reg)
                                                                      : CostWeight::diagonal(reg));
  }
  if (const auto& r = cost->kernel().radius()) {
    s.radius = register_var(r, false, cost->name());
    const VariablePtr& reg = aux_[static_cast<std::size_t>(s.radius)];
    cost->set_kernel(cost->kernel().kind() == RobustKernel::Kind::Huber ? RobustKernel::huber(reg)
                                                                        : RobustKernel::welsch(reg));
  }
  costs_.push_back(std::move(cost));
  slots_.push_back(std::move(s));
  residual_dim_ += costs_.back()->dim();
  schedule_valid_ = false;
  ++revision_;
  broadcast_all();
}

void Objective::broadcast_all() {
  std::int64_t b = 1;
  auto scan = [&](const VariablePtr& v) {
    const std::int64_t vb = v->value().batch();
    if (vb == 1) return;
    if (b != 1 && vb != b) {
      throw ShapeError("objective: variable '" + v->name() + "' has batch " + std::to_string(vb) +
                       ", other payloads have batch " + std::to_string(b));
    }
    b = vb;
  };
  for (const auto& v : optim_) scan(v);
  for (const auto& v : aux_) scan(v);
  batch_ = b;
  auto fix = [&](const VariablePtr& v) {
    if (v->value().batch() != b) {
      v->set_value(v->value().broadcast_to(b));
      broadcast_.insert(v->name());
    }
  };
  for (const auto& v : optim_) fix(v);
  for (const auto& v : aux_) fix(v);
}

void Objective::update_inputs(const std::map<std::string, BatchedArray>& inputs) {
  for (const auto& [name, value] : inputs) {
    const VariablePtr v = variable(name);
    if (!v) throw Error("update_inputs: unknown variable '" + name + "'");
    if (value.item_shape() != v->item_shape()) {
      throw ShapeError("update_inputs: '" + name + "' expects item shape " + shape_string(v->item_shape()) + ", got " +
                       value.shape_string());
    }
  }
  // Payloads that were broadcast from batch 1 count as batch 1 again.
  std::int64_t b = 1;
  std::string first;
  auto scan = [&](const VariablePtr& v) {
    auto it = inputs.find(v->name());
    std::int64_t vb = v->value().batch();
    if (it != inputs.end()) vb = it->second.batch();
    else if (broadcast_.count(v->name()) != 0) vb = 1;
    if (vb == 1) return;
    if (b != 1 && vb != b) {
      throw ShapeError("update_inputs: '" + v->name() + "' has batch " + std::to_string(vb) + " but '" + first +
                       "' has batch " + std::to_string(b));
    }
    b = vb;
    first = v->name();
  };
  for (const auto& v : optim_) scan(v);
  for (const auto& v : aux_) scan(v);

  for (const auto& [name, value] : inputs) {
    variable(name)->set_value(value);
    broadcast_.erase(name);
  }
  auto reset = [&](const VariablePtr& v) {
    if (inputs.count(v->name()) == 0 && broadcast_.count(v->name()) != 0 && v->value().batch() != b) {
      v->set_value(slice_rows(v->value(), 0, 1));
    }
  };
  for (const auto& v : optim_) reset(v);
  for (const auto& v : aux_) reset(v);
  for (const auto& c : costs_) {
    if (c->kernel().radius()) check_radius(c->kernel().radius()->value(), "update_inputs");
  }
  broadcast_all();
}

std::optional<int> Objective::optim_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end() || !it->second.first) return std::nullopt;
  return it->second.second;
}

std::optional<int> Objective::aux_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end() || it->second.first) return std::nullopt;
  return it->second.second;
}

VariablePtr Objective::variable(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return nullptr;
  return it->second.first ? optim_[static_cast<std::size_t>(it->second.second)]
                          : aux_[static_cast<std::size_t>(it->second.second)];
}

std::int64_t Objective::total_tangent_dim() const {
  std::int64_t n = 0;
  for (const auto& v : optim_) n += v->tangent_dim();
  return n;
}

void Objective::set_vectorize(bool on) {
  if (on != vectorize_) schedule_valid_ = false;
  vectorize_ = on;
}

const std::vector<CostGroup>& Objective::schedule() const {
  if (schedule_valid_) return schedule_;
  schedule_.clear();
  if (!vectorize_) {
    for (std::size_t i = 0; i < costs_.size(); ++i) schedule_.push_back({costs_[i]->type_key(), {i}});
  } else {
    std::map<std::string, std::size_t> by_key;
    for (std::size_t i = 0; i < costs_.size(); ++i) {
      const CostFunction& c = *costs_[i];
      std::ostringstream key;
      key << c.type_key() << "|dim=" << c.dim() << "|w=" << weight_kind_name(c.weight().kind())
          << "|k=" << kernel_kind_name(c.kernel().kind());
      for (const auto& v : c.optim_vars()) key << "|o:" << manifold_name(v->kind()) << shape_string(v->item_shape());
      for (const auto& v : c.aux_vars()) key << "|a:" << manifold_name(v->kind()) << shape_string(v->item_shape());
      auto [it, fresh] = by_key.emplace(key.str(), schedule_.size());
      if (fresh) schedule_.push_back({key.str(), {}});
      schedule_[it->second].costs.push_back(i);
    }
  }
  schedule_valid_ = true;
  return schedule_;
}

std::vector<BatchedArray> Objective::optim_values() const {
  std::vector<BatchedArray> v;
  v.reserve(optim_.size());
  for (const auto& x : optim_) v.push_back(x->value());
  return v;
}

std::vector<BatchedArray> Objective::aux_values() const {
  std::vector<BatchedArray> v;
  v.reserve(aux_.size());
  for (const auto& x : aux_) v.push_back(x->value());
  return v;
}

void Objective::set_optim_values(const std::vector<BatchedArray>& values) {
  if (values.size() != optim_.size()) throw Error("set_optim_values: expected one value per optimization variable");
  for (std::size_t i = 0; i < values.size(); ++i) optim_[i]->set_value(values[i]);
  broadcast_all();
}

VarValues<BatchedArray> current_values(const Objective& obj) { return {obj.optim_values(), obj.aux_values()}; }

// ---------------------------------------------------------------------------

namespace {

template <class T>
T stack(const std::vector<T>& pool, const std::vector<int>& idx) {
  if (idx.size() == 1) return pool[static_cast<std::size_t>(idx[0])];
  std::vector<T> parts;
  parts.reserve(idx.size());
  for (int i : idx) parts.push_back(pool[static_cast<std::size_t>(i)]);
  return concat_batch(parts);
}

template <class T>
T broadcast_rows(const T& x, std::int64_t n) {
  const BatchedArray& v = value(x);
  if (v.batch() == n) return x;
  Shape s = v.shape();
  s[0] = n;
  return add(x, constant_like(x, BatchedArray(s)));
}

void check_finite(const BatchedArray& err, const Objective& obj, const CostGroup& g) {
  if (err.all_finite()) return;
  const std::int64_t B = obj.batch_size();
  for (std::int64_t r = 0; r < err.batch(); ++r) {
    for (std::int64_t j = 0; j < err.item_size(); ++j) {
      if (!std::isfinite(err.at(r, j))) {
        const std::size_t m = static_cast<std::size_t>(r / B);
        throw NonFiniteError("cost '" + obj.cost(g.costs[m])->name() + "': non-finite residual at batch element " +
                             std::to_string(r % B));
      }
    }
  }
}

void self_check(const CostFunction& c, const std::vector<BatchedArray>& in, const std::vector<BatchedArray>& jac) {
  BatchedArray e;
  const auto ad = c.autodiff_jacobians(in, &e);
  for (std::size_t s = 0; s < jac.size(); ++s) {
    const BatchedArray a = broadcast_rows(jac[s], value(e).batch());
    const BatchedArray b = broadcast_rows(ad[s], value(e).batch());
    const double err = rel_error(a, b, 1.0);
    if (!(err <= 1e-5)) {
      throw Error("cost '" + c.name() + "': analytic Jacobian of slot " + std::to_string(s) +
                  " disagrees with autodiff (rel " + std::to_string(err) + ")");
    }
  }
}

}  // namespace

template <class T>
Terms<T> linearize(const Objective& obj, const VarValues<T>& values, const LinearizeOptions& opts) {
  if (values.optim.size() != obj.optim_vars().size() || values.aux.size() != obj.aux_vars().size()) {
    throw Error("linearize: value lists do not match the objective");
  }
  const std::int64_t B = obj.batch_size();
  Terms<T> out;
  bool have_obj = false;
  const auto& sched = obj.schedule();
  for (std::size_t gi = 0; gi < sched.size(); ++gi) {
    const CostGroup& g = sched[gi];
    const CostFunction& c0 = *obj.cost(g.costs.front());
    const std::int64_t M = static_cast<std::int64_t>(g.costs.size());
    const std::int64_t N = M * B;

    std::vector<T> in;
    const std::size_t no = obj.slots(g.costs.front()).optim.size();
    const std::size_t na = obj.slots(g.costs.front()).aux.size();
    for (std::size_t s = 0; s < no; ++s) {
      std::vector<int> idx;
      for (std::size_t ci : g.costs) idx.push_back(obj.slots(ci).optim[s]);
      in.push_back(stack(values.optim, idx));
    }
    for (std::size_t s = 0; s < na; ++s) {
      std::vector<int> idx;
      for (std::size_t ci : g.costs) idx.push_back(obj.slots(ci).aux[s]);
      in.push_back(stack(values.aux, idx));
    }

    GroupTerms<T> gt;
    gt.group = gi;
    T err;
    std::vector<T> J;
    if (opts.jacobians) {
      J = c0.jacobians(in, &err);
    } else {
      err = c0.error(in);
    }
    check_finite(value(err), obj, g);
    if constexpr (std::is_same_v<T, BatchedArray>) {
      if (opts.jacobians && obj.jacobian_self_check() && c0.has_analytic_jacobians()) self_check(c0, in, J);
    }

    const CostWeight::Kind wk = c0.weight().kind();
    T w;
    if (wk != CostWeight::Kind::None) {
      std::vector<int> idx;
      for (std::size_t ci : g.costs) idx.push_back(obj.slots(ci).weight);
      w = stack(values.aux, idx);
    }
    const T wc = apply_weight(wk, w, err);
    const T s = squared_norm(wc);

    const RobustKernel::Kind kk = c0.kernel().kind();
    T k;
    if (kk != RobustKernel::Kind::None) {
      std::vector<int> idx;
      for (std::size_t ci : g.costs) idx.push_back(obj.slots(ci).radius);
      k = stack(values.aux, idx);
      check_radius(value(k), "cost '" + c0.name() + "'");
    } else {
      k = s;
    }
    const KernelEval<T> ke = robust_eval(kk, s, k);
    gt.rho = ke.rho;
    const bool plain = kk == RobustKernel::Kind::None;
    gt.weighted = plain ? wc : scale(wc, ke.kappa);

    if (opts.jacobians) {
      for (auto& j : J) {
        const T wj = apply_weight(wk, w, broadcast_rows(j, N));
        if (plain) {
          gt.jac.push_back(wj);
        } else if (opts.mode == JacobianMode::Irls) {
          gt.jac.push_back(scale(wj, ke.irls));
        } else {
          // d(kappa wc) = kappa W J + wc (dkappa/ds) 2 wc^T W J
          const std::int64_t dim = value(wc).dim(1);
          const T col = reshape(wc, Shape{dim, 1});
          const T g1 = matmul(transpose(col), wj);
          const T outer = matmul(col, g1);
          gt.jac.push_back(add(scale(wj, ke.kappa), scale(outer, scale(ke.dkappa, 2.0))));
        }
      }
    }
    gt.residual = (plain || opts.mode == JacobianMode::Chain) ? gt.weighted : scale(wc, ke.irls);

    const T folded = M == 1 ? gt.rho : fold_batch(gt.rho, M);
    out.objective = have_obj ? add(out.objective, folded) : folded;
    have_obj = true;
    out.groups.push_back(std::move(gt));
  }
  if (!have_obj) throw Error("linearize: objective has no costs");
  return out;
}

template Terms<BatchedArray> linearize(const Objective&, const VarValues<BatchedArray>&, const LinearizeOptions&);
template Terms<Var> linearize(const Objective&, const VarValues<Var>&, const LinearizeOptions&);

ResidualEval evaluate_residuals(const Objective& obj) {
  const Terms<BatchedArray> t = linearize(obj, current_values(obj), {false, JacobianMode::Irls});
  const std::int64_t B = obj.batch_size();
  ResidualEval r;
  r.per_cost.resize(obj.num_costs());
  const auto& sched = obj.schedule();
  for (const auto& gt : t.groups) {
    const CostGroup& g = sched[gt.group];
    for (std::size_t m = 0; m < g.costs.size(); ++m) {
      r.per_cost[g.costs[m]] = broadcast_rows(group_member(gt.weighted, m, B), B);
    }
  }
  r.stacked = r.per_cost.size() == 1 ? r.per_cost[0] : concat(r.per_cost, 1);
  r.objective = t.objective;
  return r;
}

std::vector<std::vector<BatchedArray>> evaluate_jacobians(const Objective& obj, JacobianMode mode) {
  const Terms<BatchedArray> t = linearize(obj, current_values(obj), {true, mode});
  const std::int64_t B = obj.batch_size();
  std::vector<std::vector<BatchedArray>> out(obj.num_costs());
  const auto& sched = obj.schedule();
  for (const auto& gt : t.groups) {
    const CostGroup& g = sched[gt.group];
    for (std::size_t m = 0; m < g.costs.size(); ++m) {
      for (const auto& j : gt.jac) out[g.costs[m]].push_back(broadcast_rows(group_member(j, m, B), B));
    }
  }
  return out;
}

BatchedArray objective_value(const Objective& obj) {
  return linearize(obj, current_values(obj), {false, JacobianMode::Irls}).objective;
}

}  // namespace dnls
