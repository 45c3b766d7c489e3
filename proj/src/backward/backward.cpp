// SPDX-License-Identifier: Apache-2.0
#include "dnls/backward/backward.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dnls/error.hpp"
#include "dnls/sparse/cholesky.hpp"

namespace dnls::backward {

namespace {
using I = std::int64_t;
template <class V>
std::size_t sz(V v) {
  return static_cast<std::size_t>(v);
}

struct Target {
  std::string name;
  bool optim = false;
  int index = 0;
};

std::vector<Target> resolve(const Objective& obj, const BackwardRequest& req) {
  std::vector<Target> out;
  if (req.targets.empty()) {
    for (std::size_t i = 0; i < obj.aux_vars().size(); ++i) out.push_back({obj.aux_vars()[i]->name(), false, static_cast<int>(i)});
    return out;
  }
  for (const auto& n : req.targets) {
    if (auto i = obj.optim_index(n)) {
      out.push_back({n, true, *i});
    } else if (auto j = obj.aux_index(n)) {
      out.push_back({n, false, *j});
    } else {
      throw Error("backward: unknown target variable '" + n + "'");
    }
  }
  return out;
}

void check_run(const Objective& obj, const Run& run) {
  if (run.structure_revision != obj.structure_revision() || run.theta_star.size() != obj.optim_vars().size() ||
      run.aux.size() != obj.aux_vars().size()) {
    throw Error("backward: the objective changed since the forward solve");
  }
}

// Upstream gradients stacked into the tangent layout of the linear system.
BatchedArray stacked_upstream(const Objective& obj, const BackwardRequest& req) {
  const I B = obj.batch_size();
  BatchedArray v(Shape{B, obj.total_tangent_dim()});
  I off = 0;
  for (const auto& var : obj.optim_vars()) {
    const I td = var->tangent_dim();
    auto it = req.upstream.find(var->name());
    if (it != req.upstream.end()) {
      const BatchedArray& g = it->second;
      if (g.item_size() != td || (g.batch() != B && g.batch() != 1)) {
        throw ShapeError("backward: upstream gradient for '" + var->name() + "' has shape " + g.shape_string() +
                         ", expected (" + std::to_string(B) + ", " + std::to_string(td) + ")");
      }
      for (I b = 0; b < B; ++b) {
        for (I i = 0; i < td; ++i) v.at(b, off + i) = g.at(g.batch() == 1 ? 0 : b, i);
      }
    }
    off += td;
  }
  for (const auto& [name, g] : req.upstream) {
    if (!obj.optim_index(name)) throw Error("backward: upstream gradient for unknown optimization variable '" + name + "'");
  }
  return v;
}

BatchedArray output_grad(Manifold kind, const BatchedArray& x, const BatchedArray& g) {
  if (group_of(kind)) return manifold_project(kind, x, g);
  return g;
}

BatchedArray zero_grad(Manifold kind, const BatchedArray& x) {
  if (group_of(kind)) return BatchedArray(Shape{x.batch(), manifold_tangent_dim(kind, x.item_shape())});
  return BatchedArray(x.shape());
}

const VariablePtr& target_var(const Objective& obj, const Target& t) {
  return t.optim ? obj.optim_vars()[sz(t.index)] : obj.aux_vars()[sz(t.index)];
}
const BatchedArray& target_value(const Run& run, const Target& t) {
  return t.optim ? run.theta_init[sz(t.index)] : run.aux[sz(t.index)];
}

struct CounterScope {
  sparse::Counters c0 = sparse::counters();
  void finish(GradientResult& r) const {
    const auto c1 = sparse::counters();
    r.solves = c1.solves - c0.solves;
    r.factorizations = c1.factorizations - c0.factorizations;
  }
};

GradientResult through_tape(const Objective& obj, const Run& run, std::size_t stop, int traversed,
                            const BackwardRequest& req) {
  if (!run.recorded()) throw Error("backward: this mode needs a recorded forward run");
  check_run(obj, run);
  const auto targets = resolve(obj, req);
  stacked_upstream(obj, req);  // shape checks
  CounterScope cs;
  std::vector<std::pair<Var, BatchedArray>> seeds;
  for (std::size_t i = 0; i < obj.optim_vars().size(); ++i) {
    const auto& var = obj.optim_vars()[i];
    auto it = req.upstream.find(var->name());
    if (it == req.upstream.end()) continue;
    const BatchedArray& x = value(run.theta[i]);
    const BatchedArray v = it->second.broadcast_to(x.batch());
    seeds.emplace_back(run.theta[i], manifold_lift(var->kind(), x, v));
  }
  GradientResult out;
  out.iterations_traversed = traversed;
  out.tape_stop = stop;
  out.min_node_visited = run.tape->size();
  BackwardResult r;
  if (!seeds.empty()) {
    r = run.tape->backward(seeds, stop);
    out.min_node_visited = r.min_node_visited;
  }
  for (const auto& t : targets) {
    const auto& var = target_var(obj, t);
    const BatchedArray& x = target_value(run, t);
    auto leaf = run.leaves.find(t.name);
    const BatchedArray* g = leaf == run.leaves.end() ? nullptr : r.grad(leaf->second);
    out.grads[t.name] = g ? output_grad(var->kind(), x, *g) : zero_grad(var->kind(), x);
  }
  cs.finish(out);
  return out;
}

// Tape over the objective with theta fixed and phi as differentiable leaves.
struct PhiTape {
  std::unique_ptr<Tape> tape = std::make_unique<Tape>();
  VarValues<Var> values;
  std::vector<Var> aux;
};

PhiTape phi_tape(const Objective& obj, const std::vector<BatchedArray>& theta, const std::vector<BatchedArray>& aux) {
  PhiTape p;
  for (const auto& t : theta) p.values.optim.push_back(p.tape->constant(t));
  for (std::size_t i = 0; i < aux.size(); ++i) {
    p.aux.push_back(p.tape->leaf(obj.aux_vars()[i]->name(), aux[i], true));
    p.values.aux.push_back(p.aux.back());
  }
  return p;
}

// dS/dphi (embedding shapes) at fixed theta, summed over nothing: row b of
// each gradient belongs to batch element b.
std::vector<BatchedArray> objective_phi_grads(const Objective& obj, const std::vector<BatchedArray>& theta,
                                              const std::vector<BatchedArray>& aux) {
  PhiTape p = phi_tape(obj, theta, aux);
  LinearizeOptions lo;
  lo.jacobians = false;
  const Terms<Var> t = linearize<Var>(obj, p.values, lo);
  const BatchedArray ones(value(t.objective).shape(), 1.0);
  const BackwardResult r = p.tape->backward({{t.objective, ones}});
  std::vector<BatchedArray> out;
  for (std::size_t i = 0; i < aux.size(); ++i) {
    const BatchedArray* g = r.grad(p.aux[i]);
    out.push_back(g ? *g : BatchedArray(aux[i].shape()));
  }
  return out;
}

const sparse::LinearSolver& solver_of(const Run& run) {
  if (!run.solver) throw Error("backward: the run carries no linear solver");
  return *run.solver;
}

}  // namespace

void BackwardMode::validate() const {
  if (kind == Kind::Truncated && k < 1) throw Error("backward mode: truncation window K must be >= 1");
  if (kind == Kind::Dlm && !(epsilon > 0.0)) throw Error("backward mode: DLM epsilon must be positive");
}

std::string BackwardMode::name() const {
  std::ostringstream o;
  switch (kind) {
    case Kind::Unroll: return "unroll";
    case Kind::Truncated: o << "truncated:" << k; return o.str();
    case Kind::Implicit: return "implicit";
    case Kind::Dlm: o << "dlm:" << epsilon; return o.str();
  }
  return "?";
}

bool BackwardMode::operator==(const BackwardMode& o) const noexcept {
  if (kind != o.kind) return false;
  if (kind == Kind::Truncated) return k == o.k;
  if (kind == Kind::Dlm) return epsilon == o.epsilon;
  return true;
}

BackwardMode parse_mode(std::string_view s) {
  const auto colon = s.find(':');
  const std::string_view head = s.substr(0, colon);
  const std::string arg = colon == std::string_view::npos ? "" : std::string(s.substr(colon + 1));
  BackwardMode m;
  try {
    if (head == "unroll" && arg.empty()) {
      m = BackwardMode::unroll();
    } else if (head == "truncated") {
      std::size_t used = 0;
      const int k = std::stoi(arg, &used);
      if (used != arg.size()) throw Error("");
      m = BackwardMode::truncated(k);
    } else if (head == "implicit" && arg.empty()) {
      m = BackwardMode::implicit();
    } else if (head == "dlm") {
      double eps = 1e-2;
      if (!arg.empty()) {
        std::size_t used = 0;
        eps = std::stod(arg, &used);
        if (used != arg.size()) throw Error("");
      }
      m = BackwardMode::dlm(eps);
    } else {
      throw Error("");
    }
  } catch (const std::exception&) {
    throw Error("unknown backward mode '" + std::string(s) + "' (expected unroll, truncated:K, implicit, dlm[:EPS])");
  }
  m.validate();
  return m;
}

const BatchedArray& GradientResult::at(const std::string& name) const {
  auto it = grads.find(name);
  if (it == grads.end()) throw Error("no gradient for '" + name + "'");
  return it->second;
}

Run solve_recorded(optim::Optimizer& opt, int keep_iterations) {
  Objective& obj = opt.objective();
  Run run;
  run.tape = std::make_shared<Tape>();
  const VarValues<BatchedArray> v0 = current_values(obj);
  VarValues<Var> start;
  for (std::size_t i = 0; i < v0.optim.size(); ++i) {
    const Var l = run.tape->leaf(obj.optim_vars()[i]->name(), v0.optim[i], true);
    run.leaves[obj.optim_vars()[i]->name()] = l;
    start.optim.push_back(l);
  }
  for (std::size_t i = 0; i < v0.aux.size(); ++i) {
    const Var l = run.tape->leaf(obj.aux_vars()[i]->name(), v0.aux[i], true);
    run.leaves[obj.aux_vars()[i]->name()] = l;
    start.aux.push_back(l);
  }
  optim::RecordOptions ro;
  ro.keep_iterations = keep_iterations;
  optim::RecordedSolution rec = opt.optimize_recorded(*run.tape, start, ro);
  run.theta = std::move(rec.theta);
  run.info = std::move(rec.info);
  run.theta_star = obj.optim_values();
  run.theta_init = v0.optim;
  run.aux = v0.aux;
  run.keep_iterations = keep_iterations;
  run.solver = std::make_shared<const sparse::LinearSolver>(opt.linear_solver());
  run.structure_revision = obj.structure_revision();
  return run;
}

Run solve_plain(optim::Optimizer& opt) {
  Objective& obj = opt.objective();
  Run run;
  run.theta_init = obj.optim_values();
  run.aux = obj.aux_values();
  run.info = opt.optimize();
  run.theta_star = obj.optim_values();
  run.solver = std::make_shared<const sparse::LinearSolver>(opt.linear_solver());
  run.structure_revision = obj.structure_revision();
  return run;
}

GradientResult backward_unroll(const Objective& obj, const Run& run, const BackwardRequest& request) {
  if (run.keep_iterations > 0 && run.info.iterations_run > run.keep_iterations) {
    throw Error("backward: unroll needs the whole run, but only the last " + std::to_string(run.keep_iterations) +
                " iterations were recorded");
  }
  return through_tape(obj, run, 0, run.info.iterations_run, request);
}

GradientResult backward_truncated(const Objective& obj, const Run& run, int k, const BackwardRequest& request) {
  if (k < 1) throw Error("backward: truncation window K must be >= 1");
  const int n = run.info.iterations_run;
  const int first = std::max(0, n - k);
  if (run.keep_iterations > 0 && n - first > run.keep_iterations) {
    throw Error("backward: truncated(" + std::to_string(k) + ") needs more iterations than the " +
                std::to_string(run.keep_iterations) + " recorded");
  }
  const std::size_t stop = first == 0 ? 0 : run.info.marks.at(sz(first));
  return through_tape(obj, run, stop, n - first, request);
}

GradientResult backward_implicit(const Objective& obj, const Run& run, const BackwardRequest& request) {
  check_run(obj, run);
  const auto targets = resolve(obj, request);
  for (const auto& t : targets) {
    if (t.optim) {
      throw Error("backward: implicit differentiation cannot provide gradients for initial values ('" + t.name + "')");
    }
  }
  const BatchedArray v = stacked_upstream(obj, request);
  const sparse::LinearSolver& solver = solver_of(run);
  CounterScope cs;

  // One Gauss-Newton step at theta*, factor held constant: d theta_new = -H^{-1} d b.
  PhiTape p = phi_tape(obj, run.theta_star, run.aux);
  const Terms<Var> lin = linearize<Var>(obj, p.values);
  const sparse::VarSystem sys = sparse::assemble_system(obj, solver.pattern(), lin);

  GradientResult out;
  out.iterations_traversed = 1;
  const BatchedArray& b = value(sys.b);
  std::ostringstream msg;
  for (I l = 0; l < b.batch(); ++l) {
    double m = 0;
    for (I i = 0; i < b.item_size(); ++i) m = std::max(m, std::abs(b.at(l, i)));
    if (m > kImplicitWarnGradient) {
      out.warning = true;
      msg << (msg.tellp() > 0 ? "; " : "") << "element " << l << " has |J^T r| = " << m;
    }
  }
  const sparse::FactorPtr f = solver.factorize(value(sys.h));
  const BatchedArray lambda = f->solve(v, true);
  for (I l = 0; l < b.batch(); ++l) {
    if (f->failed()[sz(l)]) {
      out.warning = true;
      msg << (msg.tellp() > 0 ? "; " : "") << "element " << l << " has a singular system (zero gradient)";
    }
  }
  if (out.warning) out.message = "implicit gradients at an inaccurate solution: " + msg.str();

  BackwardResult r;
  if (max_abs(lambda) > 0.0) r = p.tape->backward({{sys.b, scale(lambda, -1.0)}});
  for (const auto& t : targets) {
    const auto& var = target_var(obj, t);
    const BatchedArray* g = r.grad(p.aux[sz(t.index)]);
    out.grads[t.name] = g ? output_grad(var->kind(), run.aux[sz(t.index)], *g) : zero_grad(var->kind(), run.aux[sz(t.index)]);
  }
  cs.finish(out);
  return out;
}

GradientResult backward_dlm(const Objective& obj, const Run& run, double epsilon, const BackwardRequest& request) {
  if (!(epsilon > 0.0)) throw Error("backward: DLM epsilon must be positive");
  check_run(obj, run);
  const auto targets = resolve(obj, request);
  const BatchedArray v = stacked_upstream(obj, request);
  const sparse::LinearSolver& solver = solver_of(run);
  CounterScope cs;

  // One Gauss-Newton step on S + |eps u - v/2|^2, u the tangent coordinates
  // of theta (the vector itself for vector variables, centred at theta* on
  // groups): H + 2 eps^2 I and b + 2 eps (eps u - v/2).
  const Terms<BatchedArray> lin = linearize<BatchedArray>(obj, VarValues<BatchedArray>{run.theta_star, run.aux});
  sparse::Damping d{sparse::DampingStyle::Additive, BatchedArray(Shape{1, 1}, {2.0 * epsilon * epsilon})};
  sparse::LinearSystem sys = sparse::assemble_system(obj, solver.pattern(), lin, d);
  const I B = obj.batch_size();
  BatchedArray rhs(Shape{B, v.item_size()});
  I off = 0;
  for (std::size_t i = 0; i < obj.optim_vars().size(); ++i) {
    const auto& var = obj.optim_vars()[i];
    const I td = var->tangent_dim();
    const bool vec = !group_of(var->kind());
    const BatchedArray& x = run.theta_star[i];
    for (I l = 0; l < B; ++l) {
      for (I j = 0; j < td; ++j) {
        const double u = vec ? x.at(x.batch() == 1 ? 0 : l, j) : 0.0;
        const double bb = sys.b.at(sys.b.batch() == 1 ? 0 : l, off + j);
        rhs.at(l, off + j) = bb + 2.0 * epsilon * (epsilon * u - 0.5 * v.at(l, off + j));
      }
    }
    off += td;
  }
  const sparse::FactorPtr f = solver.factorize(sys.h);
  BatchedArray delta;
  try {
    delta = f->solve(rhs, false);
  } catch (const FactorizationError& e) {
    throw FactorizationError(std::string("backward: DLM augmented system: ") + e.what());
  }
  std::vector<BatchedArray> theta_d;
  off = 0;
  for (std::size_t i = 0; i < obj.optim_vars().size(); ++i) {
    const auto& var = obj.optim_vars()[i];
    const I td = var->tangent_dim();
    theta_d.push_back(manifold_retract(var->kind(), run.theta_star[i], scale(slice(delta, 1, off, td), -1.0)));
    off += td;
  }

  const auto g_star = objective_phi_grads(obj, run.theta_star, run.aux);
  const auto g_dir = objective_phi_grads(obj, theta_d, run.aux);
  GradientResult out;
  out.iterations_traversed = 1;
  for (const auto& t : targets) {
    const auto& var = target_var(obj, t);
    if (t.optim) {
      out.grads[t.name] = zero_grad(var->kind(), run.theta_init[sz(t.index)]);
      continue;
    }
    const BatchedArray g = scale(sub(g_star[sz(t.index)], g_dir[sz(t.index)]), 1.0 / epsilon);
    out.grads[t.name] = output_grad(var->kind(), run.aux[sz(t.index)], g);
  }
  cs.finish(out);
  return out;
}

GradientResult compute_gradients(const Objective& obj, const Run& run, const BackwardMode& mode,
                                 const BackwardRequest& request) {
  mode.validate();
  switch (mode.kind) {
    case Kind::Unroll: return backward_unroll(obj, run, request);
    case Kind::Truncated: return backward_truncated(obj, run, mode.k, request);
    case Kind::Implicit: return backward_implicit(obj, run, request);
    case Kind::Dlm: return backward_dlm(obj, run, mode.epsilon, request);
  }
  throw Error("backward: unknown mode");
}

}  // namespace dnls::backward
