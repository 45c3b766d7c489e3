// SPDX-License-Identifier: Apache-2.0
#include "dnls/sparse/system.hpp"

#include <string>

#include "dnls/error.hpp"

namespace dnls::sparse {

namespace {

using I = std::int64_t;
template <class V>
std::size_t sz(V v) {
  return static_cast<std::size_t>(v);
}

struct PairPos {
  int p = 0;
  int q = 0;
  I base = 0;    // value index of (0, 0) in block (var_p, var_q)
  I stride = 0;  // distance between consecutive columns of the block
};

struct PlanGroup {
  I members = 0;
  I dim = 0;
  std::vector<I> td;
  std::vector<std::vector<int>> var;       // [member][slot]
  std::vector<std::vector<PairPos>> pairs;  // [member]
  std::size_t first = 0;                    // first slot in the flattened Jacobian list
};

struct Plan {
  I B = 0;
  I n = 0;
  I nnz = 0;
  std::vector<PlanGroup> groups;
  std::size_t njac = 0;
  std::vector<I> var_offset;
};

struct In {
  const double* d = nullptr;
  I rows = 0;
};

struct Out {
  double* d = nullptr;
  I rows = 0;
};

inline I rowsel(I rows, I row) { return rows == 1 ? 0 : row; }

template <class T>
Plan make_plan(const Objective& obj, const BlockPattern& pattern, const Terms<T>& terms) {
  const auto& vars = obj.optim_vars();
  if (static_cast<I>(vars.size()) != pattern.num_blocks()) {
    throw Error("assemble_system: pattern has " + std::to_string(pattern.num_blocks()) + " blocks but the objective has " +
                std::to_string(vars.size()) + " optimization variables");
  }
  for (std::size_t v = 0; v < vars.size(); ++v) {
    if (vars[v]->tangent_dim() != pattern.block_dim(static_cast<int>(v))) {
      throw Error("assemble_system: variable '" + vars[v]->name() + "' does not match its pattern block");
    }
  }
  Plan plan;
  plan.B = obj.batch_size();
  plan.n = pattern.dim();
  plan.nnz = pattern.nnz();
  for (std::size_t v = 0; v < vars.size(); ++v) plan.var_offset.push_back(pattern.block_offset(static_cast<int>(v)));
  const auto& sched = obj.schedule();
  for (const auto& gt : terms.groups) {
    const CostGroup& cg = sched.at(gt.group);
    PlanGroup g;
    g.members = static_cast<I>(cg.costs.size());
    g.dim = value(gt.residual).dim(1);
    g.first = plan.njac;
    for (const auto& j : gt.jac) g.td.push_back(value(j).dim(2));
    plan.njac += gt.jac.size();
    for (std::size_t ci : cg.costs) {
      const auto& slots = obj.slots(ci).optim;
      if (slots.size() != gt.jac.size()) throw Error("assemble_system: Jacobian count does not match cost slots");
      g.var.push_back(slots);
      std::vector<PairPos> pp;
      for (std::size_t p = 0; p < slots.size(); ++p) {
        for (std::size_t q = 0; q < slots.size(); ++q) {
          const int rb = slots[p];
          const int cb = slots[q];
          if (!pattern.has_block(rb, cb)) {
            throw Error("assemble_system: pattern mismatch, cost '" + obj.cost(ci)->name() +
                        "' couples variables the pattern does not");
          }
          const I base = pattern.entry(rb, cb, 0, 0);
          const I stride = pattern.block_dim(cb) > 1 ? pattern.entry(rb, cb, 0, 1) - base : 0;
          pp.push_back({static_cast<int>(p), static_cast<int>(q), base, stride});
        }
      }
      g.pairs.push_back(std::move(pp));
    }
    plan.groups.push_back(std::move(g));
  }
  return plan;
}

// H += sum J_p^T J_q over every ordered slot pair.
void assemble_h(const Plan& plan, const std::vector<In>& J, double* H) {
  for (const PlanGroup& g : plan.groups) {
    for (I m = 0; m < g.members; ++m) {
      for (I l = 0; l < plan.B; ++l) {
        const I row = m * plan.B + l;
        double* h = H + l * plan.nnz;
        for (const PairPos& pp : g.pairs[sz(m)]) {
          const I tp = g.td[sz(pp.p)];
          const I tq = g.td[sz(pp.q)];
          const In& ap = J[g.first + sz(pp.p)];
          const In& aq = J[g.first + sz(pp.q)];
          const double* jp = ap.d + rowsel(ap.rows, row) * g.dim * tp;
          const double* jq = aq.d + rowsel(aq.rows, row) * g.dim * tq;
          for (I j = 0; j < tq; ++j) {
            double* col = h + pp.base + j * pp.stride;
            for (I i = 0; i < tp; ++i) {
              double acc = 0.0;
              for (I k = 0; k < g.dim; ++k) acc += jp[k * tp + i] * jq[k * tq + j];
              col[i] += acc;
            }
          }
        }
      }
    }
  }
}

void assemble_b(const Plan& plan, const std::vector<In>& J, const std::vector<In>& R, double* b) {
  for (std::size_t gi = 0; gi < plan.groups.size(); ++gi) {
    const PlanGroup& g = plan.groups[gi];
    for (I m = 0; m < g.members; ++m) {
      for (I l = 0; l < plan.B; ++l) {
        const I row = m * plan.B + l;
        const double* r = R[gi].d + rowsel(R[gi].rows, row) * g.dim;
        for (std::size_t p = 0; p < g.td.size(); ++p) {
          const I tp = g.td[p];
          const In& ap = J[g.first + p];
          const double* jp = ap.d + rowsel(ap.rows, row) * g.dim * tp;
          double* out = b + l * plan.n + plan.var_offset[sz(g.var[sz(m)][p])];
          for (I i = 0; i < tp; ++i) {
            double acc = 0.0;
            for (I k = 0; k < g.dim; ++k) acc += jp[k * tp + i] * r[k];
            out[i] += acc;
          }
        }
      }
    }
  }
}

void assemble_h_vjp(const Plan& plan, const std::vector<In>& J, const double* G, const std::vector<Out>& gJ) {
  for (const PlanGroup& g : plan.groups) {
    for (I m = 0; m < g.members; ++m) {
      for (I l = 0; l < plan.B; ++l) {
        const I row = m * plan.B + l;
        const double* gh = G + l * plan.nnz;
        for (const PairPos& pp : g.pairs[sz(m)]) {
          const I tp = g.td[sz(pp.p)];
          const I tq = g.td[sz(pp.q)];
          const In& ap = J[g.first + sz(pp.p)];
          const In& aq = J[g.first + sz(pp.q)];
          const Out& op = gJ[g.first + sz(pp.p)];
          const Out& oq = gJ[g.first + sz(pp.q)];
          const double* jp = ap.d + rowsel(ap.rows, row) * g.dim * tp;
          const double* jq = aq.d + rowsel(aq.rows, row) * g.dim * tq;
          double* djp = op.d + rowsel(op.rows, row) * g.dim * tp;
          double* djq = oq.d + rowsel(oq.rows, row) * g.dim * tq;
          for (I j = 0; j < tq; ++j) {
            const double* x = gh + pp.base + j * pp.stride;
            for (I i = 0; i < tp; ++i) {
              const double xij = x[i];
              if (xij == 0.0) continue;
              for (I k = 0; k < g.dim; ++k) {
                djp[k * tp + i] += jq[k * tq + j] * xij;
                djq[k * tq + j] += jp[k * tp + i] * xij;
              }
            }
          }
        }
      }
    }
  }
}

void assemble_b_vjp(const Plan& plan, const std::vector<In>& J, const std::vector<In>& R, const double* G,
                    const std::vector<Out>& gJ, const std::vector<Out>& gR) {
  for (std::size_t gi = 0; gi < plan.groups.size(); ++gi) {
    const PlanGroup& g = plan.groups[gi];
    for (I m = 0; m < g.members; ++m) {
      for (I l = 0; l < plan.B; ++l) {
        const I row = m * plan.B + l;
        const double* r = R[gi].d + rowsel(R[gi].rows, row) * g.dim;
        double* dr = gR[gi].d + rowsel(gR[gi].rows, row) * g.dim;
        for (std::size_t p = 0; p < g.td.size(); ++p) {
          const I tp = g.td[p];
          const In& ap = J[g.first + p];
          const double* jp = ap.d + rowsel(ap.rows, row) * g.dim * tp;
          double* djp = gJ[g.first + p].d + rowsel(gJ[g.first + p].rows, row) * g.dim * tp;
          const double* gb = G + l * plan.n + plan.var_offset[sz(g.var[sz(m)][p])];
          for (I k = 0; k < g.dim; ++k) {
            double acc = 0.0;
            for (I i = 0; i < tp; ++i) {
              djp[k * tp + i] += r[k] * gb[i];
              acc += jp[k * tp + i] * gb[i];
            }
            dr[k] += acc;
          }
        }
      }
    }
  }
}

In in_of(const BatchedArray& a) { return {a.data(), a.batch()}; }

double lambda_at(const BatchedArray& lam, I l) {
  if (lam.batch() == 1) return lam[0];
  return lam.at(l, 0);
}

void check_lambda(const Damping& d, I B) {
  if (d.style == DampingStyle::None) return;
  if (d.lambda.rank() != 2 || d.lambda.dim(1) != 1 || (d.lambda.batch() != 1 && d.lambda.batch() != B)) {
    throw ShapeError("damping: lambda must have shape (B, 1) or (1, 1), got " + d.lambda.shape_string());
  }
}

// Diagonal scale applied by Marquardt damping (1 everywhere else).
void scale_diagonal(const BlockPattern& p, const Damping& d, I B, double* v) {
  if (d.style != DampingStyle::Marquardt) return;
  const I nnz = p.nnz();
  for (I l = 0; l < B; ++l) {
    const double f = 1.0 + lambda_at(d.lambda, l);
    for (I q : p.diagonal()) v[l * nnz + q] *= f;
  }
}

void apply_damping_inplace(const BlockPattern& p, const Damping& d, I B, double* h) {
  if (d.style == DampingStyle::Marquardt) {
    scale_diagonal(p, d, B, h);
  } else if (d.style == DampingStyle::Additive) {
    for (I l = 0; l < B; ++l) {
      const double lam = lambda_at(d.lambda, l);
      for (I q : p.diagonal()) h[l * p.nnz() + q] += lam;
    }
  }
}

}  // namespace

BatchedArray apply_damping(const BlockPattern& p, const BatchedArray& h, const Damping& d) {
  check_lambda(d, h.batch());
  BatchedArray out = h;
  apply_damping_inplace(p, d, h.batch(), out.data());
  return out;
}

LinearSystem assemble_system(const Objective& obj, const BlockPattern& pattern, const Terms<BatchedArray>& terms,
                             const Damping& damping) {
  const Plan plan = make_plan(obj, pattern, terms);
  check_lambda(damping, plan.B);
  std::vector<In> J, R;
  for (const auto& gt : terms.groups) {
    for (const auto& j : gt.jac) J.push_back(in_of(j));
    R.push_back(in_of(gt.residual));
  }
  LinearSystem sys;
  sys.h = BatchedArray(Shape{plan.B, plan.nnz});
  sys.b = BatchedArray(Shape{plan.B, plan.n});
  assemble_h(plan, J, sys.h.data());
  assemble_b(plan, J, R, sys.b.data());
  apply_damping_inplace(pattern, damping, plan.B, sys.h.data());
  sys.damping = damping;
  return sys;
}

VarSystem assemble_system(const Objective& obj, const BlockPattern& pattern, const Terms<Var>& terms,
                          const Damping& damping) {
  auto plan = std::make_shared<const Plan>(make_plan(obj, pattern, terms));
  check_lambda(damping, plan->B);
  std::vector<Var> jac, all;
  Tape* tape = nullptr;
  for (const auto& gt : terms.groups) {
    for (const auto& j : gt.jac) {
      jac.push_back(j);
      tape = j.tape();
    }
  }
  if (tape == nullptr) throw Error("assemble_system: linearization has no Jacobians");
  all = jac;
  for (const auto& gt : terms.groups) all.push_back(gt.residual);
  const std::size_t nj = jac.size();
  auto pat = std::make_shared<const BlockPattern>(pattern);

  auto h_fwd = [plan, pat, damping](const Inputs& in) {
    std::vector<In> J;
    for (const BatchedArray* a : in) J.push_back(in_of(*a));
    BatchedArray h(Shape{plan->B, plan->nnz});
    assemble_h(*plan, J, h.data());
    apply_damping_inplace(*pat, damping, plan->B, h.data());
    return h;
  };
  auto h_vjp = [plan, pat, damping](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
    BatchedArray gs = g;
    scale_diagonal(*pat, damping, plan->B, gs.data());
    std::vector<In> J;
    std::vector<BatchedArray> grads;
    for (const BatchedArray* a : in) {
      J.push_back(in_of(*a));
      grads.emplace_back(a->shape());
    }
    std::vector<Out> gJ;
    for (auto& a : grads) gJ.push_back({a.data(), a.batch()});
    assemble_h_vjp(*plan, J, gs.data(), gJ);
    return grads;
  };
  const Var h = tape->record("assemble_H", jac, h_fwd, h_vjp);

  auto b_fwd = [plan, nj](const Inputs& in) {
    std::vector<In> J, R;
    for (std::size_t i = 0; i < in.size(); ++i) (i < nj ? J : R).push_back(in_of(*in[i]));
    BatchedArray b(Shape{plan->B, plan->n});
    assemble_b(*plan, J, R, b.data());
    return b;
  };
  auto b_vjp = [plan, nj](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
    std::vector<In> J, R;
    std::vector<BatchedArray> grads;
    for (std::size_t i = 0; i < in.size(); ++i) {
      (i < nj ? J : R).push_back(in_of(*in[i]));
      grads.emplace_back(in[i]->shape());
    }
    std::vector<Out> gJ, gR;
    for (std::size_t i = 0; i < grads.size(); ++i) (i < nj ? gJ : gR).push_back({grads[i].data(), grads[i].batch()});
    assemble_b_vjp(*plan, J, R, g.data(), gJ, gR);
    return grads;
  };
  const Var b = tape->record("assemble_b", all, b_fwd, b_vjp);
  return {h, b};
}

BatchedArray matvec(const BlockPattern& p, const BatchedArray& h, const BatchedArray& x) {
  if (h.rank() != 2 || h.dim(1) != p.nnz() || x.rank() != 2 || x.dim(1) != p.dim()) {
    throw ShapeError("matvec: shapes " + h.shape_string() + " and " + x.shape_string() + " do not match the pattern");
  }
  if (h.batch() != x.batch() && h.batch() != 1 && x.batch() != 1) {
    throw ShapeError("matvec: batch sizes " + h.shape_string() + " and " + x.shape_string() + " differ");
  }
  const I B = std::max(h.batch(), x.batch());
  BatchedArray y(Shape{B, p.dim()});
  const auto& cp = p.colptr();
  const auto& ri = p.rowidx();
  for (I l = 0; l < B; ++l) {
    const double* hv = h.item(h.batch() == 1 ? 0 : l);
    const double* xv = x.item(x.batch() == 1 ? 0 : l);
    double* yv = y.item(l);
    for (I j = 0; j < p.dim(); ++j) {
      for (I q = cp[sz(j)]; q < cp[sz(j) + 1]; ++q) yv[ri[sz(q)]] += hv[q] * xv[j];
    }
  }
  return y;
}

Var matvec(const BlockPattern& pattern, const Var& h, const Var& x) {
  auto pat = std::make_shared<const BlockPattern>(pattern);
  auto fwd = [pat](const Inputs& in) { return matvec(*pat, *in[0], *in[1]); };
  auto vjp = [pat](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
    const BatchedArray& hv = *in[0];
    const BatchedArray& xv = *in[1];
    const I B = g.batch();
    BatchedArray gh(Shape{B, pat->nnz()});
    BatchedArray gx(Shape{B, pat->dim()});
    const auto& cp = pat->colptr();
    const auto& ri = pat->rowidx();
    for (I l = 0; l < B; ++l) {
      const double* hh = hv.item(hv.batch() == 1 ? 0 : l);
      const double* xx = xv.item(xv.batch() == 1 ? 0 : l);
      const double* gg = g.item(l);
      for (I j = 0; j < pat->dim(); ++j) {
        for (I q = cp[sz(j)]; q < cp[sz(j) + 1]; ++q) {
          const I i = ri[sz(q)];
          gh.at(l, q) = gg[i] * xx[j];
          gx.at(l, j) += hh[q] * gg[i];
        }
      }
    }
    return std::vector<BatchedArray>{reduce_to_batch(gh, hv.batch()), reduce_to_batch(gx, xv.batch())};
  };
  return h.tape()->record("sparse_matvec", {h, x}, fwd, vjp);
}

const std::vector<std::uint8_t>& Factorization::failed() const {
  return std::visit([](const auto& f) -> const std::vector<std::uint8_t>& { return f.failed; }, f_);
}

bool Factorization::any_failed() const {
  return std::visit([](const auto& f) { return f.any_failed(); }, f_);
}

std::uint64_t Factorization::checksum() const {
  return std::visit([](const auto& f) { return f.checksum; }, f_);
}

BatchedArray Factorization::solve(const BatchedArray& b, bool zero_failed) const {
  if (const auto* s = sparse()) return sparse::solve(*s, b, SolveOptions{zero_failed});
  return dense_solve(*dense(), b, zero_failed);
}

LinearSolver::LinearSolver(BlockPattern pattern, const SolverOptions& opts)
    : pattern_(std::move(pattern)), opts_(opts) {
  if (opts_.kind == SolverKind::Sparse) sym_ = symbolic_analyze(pattern_, opts_.symbolic);
}

LinearSolver LinearSolver::for_objective(const Objective& obj, const SolverOptions& opts) {
  return LinearSolver(BlockPattern::from_objective(obj), opts);
}

FactorPtr LinearSolver::factorize(const BatchedArray& h) const {
  if (opts_.kind == SolverKind::Sparse) {
    return std::make_shared<const Factorization>(numeric_factorize(sym_, h, opts_.factor));
  }
  return std::make_shared<const Factorization>(dense_factorize(pattern_, h, opts_.factor.pivot_tol));
}

BatchedArray LinearSolver::solve(const LinearSystem& sys, bool zero_failed) const {
  return factorize(sys.h)->solve(sys.b, zero_failed);
}

SolveGrads linear_solve_backward(const Factorization& f, const BlockPattern& pattern, const BatchedArray& y,
                                 const BatchedArray& grad_y, const BatchedArray* h_check, bool symmetrize) {
  if (h_check != nullptr && debug_checks() && values_checksum(*h_check) != f.checksum()) {
    throw FactorizationError("linear_solve_backward: stale factor, H changed since it was factorized");
  }
  SolveGrads g;
  g.grad_b = f.solve(grad_y, true);
  const I B = y.batch();
  const I n = pattern.dim();
  g.grad_h = BatchedArray(Shape{B, pattern.nnz()});
  const auto& cp = pattern.colptr();
  const auto& ri = pattern.rowidx();
  for (I l = 0; l < B; ++l) {
    const double* gb = g.grad_b.item(l);
    const double* yy = y.item(l);
    double* gh = g.grad_h.item(l);
    for (I j = 0; j < n; ++j) {
      for (I q = cp[sz(j)]; q < cp[sz(j) + 1]; ++q) {
        const I i = ri[sz(q)];
        gh[q] = symmetrize ? -0.5 * (gb[i] * yy[j] + gb[j] * yy[i]) : -gb[i] * yy[j];
      }
    }
  }
  return g;
}

VarSolve solve_system(const LinearSolver& solver, const Var& h, const Var& b, bool zero_failed) {
  FactorPtr factor = solver.factorize(value(h));
  BatchedArray y = factor->solve(value(b), zero_failed);
  auto pat = std::make_shared<const BlockPattern>(solver.pattern());
  auto fwd = [pat, sym = solver.symbolic(), opts = solver.options(), zero_failed](const Inputs& in) {
    if (opts.kind == SolverKind::Sparse) {
      return sparse::solve(numeric_factorize(sym, *in[0], opts.factor), *in[1], SolveOptions{zero_failed});
    }
    return dense_solve(dense_factorize(*pat, *in[0], opts.factor.pivot_tol), *in[1], zero_failed);
  };
  auto vjp = [factor, pat](const BatchedArray& g, const Inputs& in, const BatchedArray& out) {
    SolveGrads sg = linear_solve_backward(*factor, *pat, out, g, in[0]);
    return std::vector<BatchedArray>{std::move(sg.grad_h), std::move(sg.grad_b)};
  };
  Var delta = h.tape()->record_value("cholesky_solve", {h, b}, std::move(y), fwd, vjp);
  return {delta, factor};
}

}  // namespace dnls::sparse
