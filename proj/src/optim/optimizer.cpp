// SPDX-License-Identifier: Apache-2.0
#include "dnls/optim/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dnls/sparse/cholesky.hpp"

namespace dnls::optim {

namespace {
using I = std::int64_t;
template <class V>
std::size_t sz(V v) {
  return static_cast<std::size_t>(v);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

bool all_set(const Mask& m) {
  return std::all_of(m.begin(), m.end(), [](std::uint8_t x) { return x != 0; });
}
bool none_set(const Mask& m) {
  return std::none_of(m.begin(), m.end(), [](std::uint8_t x) { return x != 0; });
}

template <class T>
T pick(const Mask& m, const T& a, const T& b) {
  if (all_set(m)) return a;
  if (none_set(m)) return b;
  return select(m, a, b);
}

BatchedArray column(const std::vector<double>& v) {
  BatchedArray a(Shape{static_cast<I>(v.size()), 1});
  for (std::size_t i = 0; i < v.size(); ++i) a[static_cast<I>(i)] = v[i];
  return a;
}

template <class T>
std::vector<BatchedArray> values_of(const std::vector<T>& xs) {
  std::vector<BatchedArray> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(value(x));
  return out;
}

// Plain and recorded front ends for assembly and solves.
template <class T>
struct System {
  T h;
  T b;
};

System<BatchedArray> assemble(const Objective& obj, const sparse::BlockPattern& p, const Terms<BatchedArray>& t,
                              const sparse::Damping& d) {
  auto s = sparse::assemble_system(obj, p, t, d);
  return {std::move(s.h), std::move(s.b)};
}
System<Var> assemble(const Objective& obj, const sparse::BlockPattern& p, const Terms<Var>& t,
                     const sparse::Damping& d) {
  auto s = sparse::assemble_system(obj, p, t, d);
  return {s.h, s.b};
}

template <class T>
struct Solved {
  T delta;
  sparse::FactorPtr factor;
};

Solved<BatchedArray> solve(const sparse::LinearSolver& solver, const System<BatchedArray>& s) {
  auto f = solver.factorize(s.h);
  return {f->solve(s.b, true), f};
}
Solved<Var> solve(const sparse::LinearSolver& solver, const System<Var>& s) {
  auto r = sparse::solve_system(solver, s.h, s.b, true);
  return {r.delta, r.factor};
}

struct PointValues {
  std::vector<int> kind;
  std::vector<double> alpha;  // Cauchy scale: c = alpha g
  std::vector<double> coef;   // boundary scale
  std::vector<double> beta;   // interpolation weight
  std::vector<double> predicted;
};

// Per-element branch selection and coefficients on plain values.
PointValues dogleg_values(const BatchedArray& gn, const BatchedArray& g, const BatchedArray& hg,
                          const std::vector<double>& radius) {
  const I B = g.batch();
  const I n = g.item_size();
  PointValues p;
  p.kind.assign(sz(B), 0);
  p.alpha.assign(sz(B), 0.0);
  p.coef.assign(sz(B), 0.0);
  p.beta.assign(sz(B), 0.0);
  p.predicted.assign(sz(B), 0.0);
  for (I l = 0; l < B; ++l) {
    const double* a = gn.item(l);
    const double* gv = g.item(l);
    const double* h = hg.item(l);
    double ngn = 0, gg = 0, ghg = 0, ga = 0;
    for (I i = 0; i < n; ++i) {
      ngn += a[i] * a[i];
      gg += gv[i] * gv[i];
      ghg += gv[i] * h[i];
      ga += gv[i] * a[i];
    }
    ngn = std::sqrt(ngn);
    const double D = radius[sz(l)];
    if (ngn <= D) {
      p.kind[sz(l)] = 0;
      p.predicted[sz(l)] = 0.5 * ga;  // H gn = g
      continue;
    }
    const double ng = std::sqrt(gg);
    const double alpha = ghg > 0.0 ? gg / ghg : kInf;
    if (alpha * ng >= D) {
      p.kind[sz(l)] = 1;
      const double c = D / ng;
      p.coef[sz(l)] = c;
      p.predicted[sz(l)] = c * gg - 0.5 * c * c * ghg;
      continue;
    }
    // |c + beta d| = D with c = alpha g, d = gn - c
    double cc = 0, cd = 0, dd = 0;
    for (I i = 0; i < n; ++i) {
      const double c = alpha * gv[i];
      const double d = a[i] - c;
      cc += c * c;
      cd += c * d;
      dd += d * d;
    }
    const double disc = std::max(0.0, cd * cd - dd * (cc - D * D));
    const double beta = dd > 0.0 ? (std::sqrt(disc) - cd) / dd : 0.0;
    p.kind[sz(l)] = 2;
    p.alpha[sz(l)] = alpha;
    p.beta[sz(l)] = beta;
    // s = (1 - beta) alpha g + beta gn, H s = (1 - beta) alpha H g + beta g
    const double gs = (1.0 - beta) * alpha * gg + beta * ga;
    const double sHs = (1.0 - beta) * (1.0 - beta) * alpha * alpha * ghg + 2.0 * (1.0 - beta) * beta * alpha * gg +
                       beta * beta * ga;
    p.predicted[sz(l)] = gs - 0.5 * sHs;
  }
  return p;
}

Mask kind_mask(const std::vector<int>& kind, int k) {
  Mask m(kind.size());
  for (std::size_t i = 0; i < kind.size(); ++i) m[i] = kind[i] == k ? 1 : 0;
  return m;
}

// The dogleg step as a differentiable function of gn, g and H g. Lanes that
// do not use a branch get benign stand-in values so the unused arithmetic
// stays finite (its gradient is masked out but still evaluated).
template <class T>
T dogleg_step(const T& gn, const T& g, const T& hg, const std::vector<double>& radius, const PointValues& p) {
  const I B = value(g).batch();
  const Mask use_gn = kind_mask(p.kind, 0);
  if (all_set(use_gn)) return gn;
  const Mask use_c = kind_mask(p.kind, 1);
  const Mask use_i = kind_mask(p.kind, 2);
  const BatchedArray ones(Shape{B, 1}, 1.0);
  const T one = constant_like(g, ones);

  Mask not_gn(sz(B));
  for (I l = 0; l < B; ++l) not_gn[sz(l)] = use_gn[sz(l)] ? 0 : 1;
  const T gg = pick(not_gn, squared_norm(g), one);
  const T ghg = pick(use_i, sum(mul(g, hg)), one);

  T step = gn;
  if (!none_set(use_c)) {
    const T cb = scale(g, div(constant_like(g, column(radius)), sqrt(gg)));
    step = pick(use_c, cb, step);
  }
  if (!none_set(use_i)) {
    const T c = scale(g, div(gg, ghg));
    const T d = sub(gn, c);
    const T cd = sum(mul(c, d));
    const T dd = pick(use_i, squared_norm(d), one);
    std::vector<double> r2(sz(B));
    for (I l = 0; l < B; ++l) r2[sz(l)] = radius[sz(l)] * radius[sz(l)];
    const T disc = pick(use_i, sub(mul(cd, cd), mul(dd, sub(squared_norm(c), constant_like(g, column(r2))))), one);
    const T beta = div(sub(sqrt(disc), cd), dd);
    const T si = add(c, scale(d, beta));
    step = pick(use_i, si, step);
  }
  return step;
}

bool converged(const OptimizerConfig& cfg, double s_prev, double s_new) {
  return s_new <= cfg.abs_tol || std::abs(s_new - s_prev) < cfg.abs_tol + cfg.rel_tol * std::abs(s_prev);
}

template <class T>
class Engine {
 public:
  Engine(const Objective& obj, const OptimizerConfig& cfg, const sparse::LinearSolver& solver, Tape* tape,
         std::vector<T> theta, std::vector<T> aux, int keep)
      : obj_(obj), cfg_(cfg), solver_(solver), tape_(tape), theta_(std::move(theta)), aux_(std::move(aux)),
        keep_(keep) {
    B_ = obj.batch_size();
    aux_plain_ = values_of(aux_);
    I off = 0;
    for (const auto& v : obj.optim_vars()) {
      offset_.push_back(off);
      td_.push_back(v->tangent_dim());
      off += v->tangent_dim();
    }
  }

  OptimizerInfo run() {
    const auto c0 = sparse::counters();
    OptimizerInfo info;
    info.status.assign(sz(B_), Status::MaxIterations);
    info.diagnostics.assign(sz(B_), "");
    info.iterations.assign(sz(B_), 0);

    std::vector<double> S = plain(values_of(theta_));
    info.initial_objective = column(S);
    Mask active(sz(B_), 1);
    for (I l = 0; l < B_; ++l) {
      if (!std::isfinite(S[sz(l)])) {
        fail(info, active, l, "non-finite initial objective");
      } else if (S[sz(l)] <= cfg_.abs_tol) {
        info.status[sz(l)] = Status::Converged;
        active[sz(l)] = 0;
      }
    }
    std::vector<double> lambda(sz(B_), cfg_.lambda_init);
    std::vector<double> radius(sz(B_), cfg_.radius_init);
    std::vector<std::vector<double>> hist, norms, damp;

    bool stale = true;
    Terms<T> lin;
    System<T> sys;        // undamped, cached for Dogleg rejections
    Solved<T> gn_solve;   // Dogleg
    T hg;                 // Dogleg
    std::vector<std::uint8_t> gn_failed;

    for (int k = 0; k < cfg_.max_iterations && !none_set(active); ++k) {
      if (tape_) info.marks.push_back(tape_->mark());
      const bool fresh = stale;
      if (stale) {
        lin = linearize<T>(obj_, VarValues<T>{theta_, aux_});
        stale = false;
      }
      Mask take(sz(B_), 0);
      std::vector<double> snorm(sz(B_), 0.0), dval(sz(B_), 0.0);
      std::vector<double> S_next = S;

      if (cfg_.method == Method::GaussNewton) {
        const System<T> s = assemble(obj_, solver_.pattern(), lin, {});
        const Solved<T> sol = solve(solver_, s);
        const std::vector<T> cand = retract(sol.delta, -cfg_.step_size);
        const std::vector<double> Sc = plain(values_of(cand));
        norms_of(value(sol.delta), cfg_.step_size, snorm);
        for (I l = 0; l < B_; ++l) {
          if (!active[sz(l)]) continue;
          if (sol.factor->failed()[sz(l)]) {
            fail(info, active, l, "factorization failed (H not positive definite)");
          } else if (!std::isfinite(Sc[sz(l)])) {
            fail(info, active, l, "non-finite objective after step");
          } else {
            take[sz(l)] = 1;
          }
        }
        theta_ = merge(take, cand);
        for (I l = 0; l < B_; ++l) {
          if (!take[sz(l)]) continue;
          ++info.iterations[sz(l)];
          S_next[sz(l)] = Sc[sz(l)];
          if (converged(cfg_, S[sz(l)], Sc[sz(l)])) converge(info, active, l);
        }
        stale = true;
      } else if (cfg_.method == Method::LevenbergMarquardt) {
        sparse::Damping d{sparse::DampingStyle::Marquardt, column(lambda)};
        const System<T> s = assemble(obj_, solver_.pattern(), lin, d);
        const Solved<T> sol = solve(solver_, s);
        const std::vector<T> cand = retract(sol.delta, -1.0);
        const std::vector<double> Sc = plain(values_of(cand));
        norms_of(value(sol.delta), 1.0, snorm);
        dval = lambda;
        for (I l = 0; l < B_; ++l) {
          if (!active[sz(l)]) continue;
          ++info.iterations[sz(l)];
          const bool ok = !sol.factor->failed()[sz(l)] && std::isfinite(Sc[sz(l)]);
          const bool accept = ok && Sc[sz(l)] < S[sz(l)];
          const bool conv = ok && converged(cfg_, S[sz(l)], Sc[sz(l)]);
          if (accept) {
            take[sz(l)] = 1;
            S_next[sz(l)] = Sc[sz(l)];
            lambda[sz(l)] = std::max(lambda[sz(l)] / cfg_.lambda_down, cfg_.lambda_min);
          }
          if (conv) {
            converge(info, active, l);
          } else if (!accept) {
            if (lambda[sz(l)] >= cfg_.lambda_max) {
              fail(info, active, l, "step rejected with damping at its upper bound");
            } else {
              lambda[sz(l)] = std::min(lambda[sz(l)] * cfg_.lambda_up, cfg_.lambda_max);
            }
          }
        }
        theta_ = merge(take, cand);
        if (!none_set(take)) stale = true;
      } else {
        if (fresh) {
          sys = assemble(obj_, solver_.pattern(), lin, {});
          gn_solve = solve(solver_, sys);
          gn_failed = gn_solve.factor->failed();
          hg = sparse::matvec(solver_.pattern(), sys.h, sys.b);
        }
        const PointValues pv = dogleg_values(value(gn_solve.delta), value(sys.b), value(hg), radius);
        const T step = dogleg_step(gn_solve.delta, sys.b, hg, radius, pv);
        const std::vector<T> cand = retract(step, -1.0);
        const std::vector<double> Sc = plain(values_of(cand));
        norms_of(value(step), 1.0, snorm);
        dval = radius;
        for (I l = 0; l < B_; ++l) {
          if (!active[sz(l)]) continue;
          ++info.iterations[sz(l)];
          if (gn_failed[sz(l)]) {
            fail(info, active, l, "factorization failed (H not positive definite)");
            continue;
          }
          const bool ok = std::isfinite(Sc[sz(l)]);
          const double actual = S[sz(l)] - Sc[sz(l)];
          const double pred = pv.predicted[sz(l)];
          double rho = -1.0;
          if (ok) rho = pred > 0.0 ? actual / pred : (actual > 0.0 ? 1.0 : -1.0);
          const bool accept = rho > 0.0;
          const bool conv = ok && converged(cfg_, S[sz(l)], Sc[sz(l)]);
          if (accept) {
            take[sz(l)] = 1;
            S_next[sz(l)] = Sc[sz(l)];
          }
          if (rho > 0.75) {
            radius[sz(l)] = std::min(2.0 * radius[sz(l)], cfg_.radius_max);
          } else if (rho < 0.25) {
            radius[sz(l)] *= 0.5;
          }
          if (conv) {
            converge(info, active, l);
          } else if (radius[sz(l)] < cfg_.radius_min) {
            fail(info, active, l, "trust radius fell below its lower bound");
          }
        }
        theta_ = merge(take, cand);
        if (!none_set(take)) stale = true;
      }

      S = S_next;
      hist.push_back(S);
      norms.push_back(snorm);
      damp.push_back(dval);
      info.accepted.push_back(take);
      ++info.iterations_run;
      if (tape_ && keep_ > 0 && k + 1 >= keep_) tape_->release_before(info.marks[sz(k + 1 - keep_)]);
    }
    if (tape_) info.marks.push_back(tape_->mark());

    info.final_objective = column(S);
    info.history = to_matrix(hist);
    info.step_norm = to_matrix(norms);
    info.damping_history = to_matrix(damp);
    info.damping = column(cfg_.method == Method::Dogleg ? radius : lambda);
    info.gradient_norm = gradient_norm();
    const auto c1 = sparse::counters();
    info.factorizations = c1.factorizations - c0.factorizations;
    info.solves = c1.solves - c0.solves;
    return info;
  }

  const std::vector<T>& theta() const { return theta_; }

 private:
  std::vector<double> plain(const std::vector<BatchedArray>& th) const {
    LinearizeOptions lo;
    lo.jacobians = false;
    const BatchedArray s = linearize<BatchedArray>(obj_, VarValues<BatchedArray>{th, aux_plain_}, lo).objective;
    std::vector<double> out(sz(B_));
    for (I l = 0; l < B_; ++l) out[sz(l)] = s.batch() == 1 ? s[0] : s[l];
    return out;
  }

  std::vector<T> retract(const T& delta, double coef) const {
    std::vector<T> out;
    out.reserve(theta_.size());
    for (std::size_t v = 0; v < theta_.size(); ++v) {
      T d = slice(delta, 1, offset_[v], td_[v]);
      if (coef != 1.0) d = scale(d, coef);
      out.push_back(manifold_retract(obj_.optim_vars()[v]->kind(), theta_[v], d));
    }
    return out;
  }

  std::vector<T> merge(const Mask& take, const std::vector<T>& cand) const {
    std::vector<T> out;
    out.reserve(theta_.size());
    for (std::size_t v = 0; v < theta_.size(); ++v) out.push_back(pick(take, cand[v], theta_[v]));
    return out;
  }

  void norms_of(const BatchedArray& d, double coef, std::vector<double>& out) const {
    for (I l = 0; l < B_ && l < d.batch(); ++l) {
      double s = 0;
      for (I i = 0; i < d.item_size(); ++i) s += d.at(l, i) * d.at(l, i);
      out[sz(l)] = std::abs(coef) * std::sqrt(s);
    }
  }

  BatchedArray gradient_norm() const {
    const auto plain_theta = values_of(theta_);
    const auto t = linearize<BatchedArray>(obj_, VarValues<BatchedArray>{plain_theta, aux_plain_});
    const auto s = sparse::assemble_system(obj_, solver_.pattern(), t);
    BatchedArray out(Shape{B_, 1});
    for (I l = 0; l < B_; ++l) {
      double m = 0;
      const I row = s.b.batch() == 1 ? 0 : l;
      for (I i = 0; i < s.b.item_size(); ++i) m = std::max(m, std::abs(s.b.at(row, i)));
      out[l] = m;
    }
    return out;
  }

  BatchedArray to_matrix(const std::vector<std::vector<double>>& cols) const {
    BatchedArray a(Shape{B_, static_cast<I>(cols.size())});
    for (std::size_t k = 0; k < cols.size(); ++k) {
      for (I l = 0; l < B_; ++l) a.at(l, static_cast<I>(k)) = cols[k][sz(l)];
    }
    return a;
  }

  static void fail(OptimizerInfo& info, Mask& active, I l, const std::string& why) {
    info.status[sz(l)] = Status::Failed;
    info.diagnostics[sz(l)] = why;
    active[sz(l)] = 0;
  }
  static void converge(OptimizerInfo& info, Mask& active, I l) {
    info.status[sz(l)] = Status::Converged;
    active[sz(l)] = 0;
  }

  const Objective& obj_;
  const OptimizerConfig& cfg_;
  const sparse::LinearSolver& solver_;
  Tape* tape_;
  std::vector<T> theta_;
  std::vector<T> aux_;
  std::vector<BatchedArray> aux_plain_;
  std::vector<I> offset_;
  std::vector<I> td_;
  I B_ = 1;
  int keep_ = 0;
};

void check_outcome(const OptimizerInfo& info) {
  if (info.status.empty()) return;
  for (const Status s : info.status) {
    if (s != Status::Failed) return;
  }
  throw OptimizationError("optimization failed for every batch element: " + info.summary(), info);
}

}  // namespace

const char* method_name(Method m) noexcept {
  switch (m) {
    case Method::GaussNewton: return "gauss-newton";
    case Method::LevenbergMarquardt: return "levenberg-marquardt";
    case Method::Dogleg: return "dogleg";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view s) {
  if (s == "gn" || s == "gauss-newton" || s == "GaussNewton") return Method::GaussNewton;
  if (s == "lm" || s == "levenberg-marquardt" || s == "LevenbergMarquardt") return Method::LevenbergMarquardt;
  if (s == "dogleg" || s == "Dogleg") return Method::Dogleg;
  return std::nullopt;
}

const char* status_name(Status s) noexcept {
  switch (s) {
    case Status::Converged: return "converged";
    case Status::MaxIterations: return "max-iter";
    case Status::Failed: return "failed";
  }
  return "?";
}

void OptimizerConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("OptimizerConfig: ") + what);
  };
  need(max_iterations >= 0, "max_iterations must be >= 0");
  need(step_size > 0.0 && step_size <= 1.0, "step_size must lie in (0, 1]");
  need(abs_tol >= 0.0 && rel_tol >= 0.0, "tolerances must be non-negative");
  need(lambda_min > 0.0 && lambda_min <= lambda_init && lambda_init <= lambda_max, "need 0 < lambda_min <= lambda_init <= lambda_max");
  need(lambda_down > 1.0 && lambda_up > 1.0, "damping factors must exceed 1");
  need(radius_min > 0.0 && radius_min <= radius_init && radius_init <= radius_max, "need 0 < radius_min <= radius_init <= radius_max");
}

bool OptimizerInfo::all_converged() const {
  return std::all_of(status.begin(), status.end(), [](Status s) { return s == Status::Converged; });
}

bool OptimizerInfo::any_failed() const {
  return std::any_of(status.begin(), status.end(), [](Status s) { return s == Status::Failed; });
}

std::string OptimizerInfo::summary() const {
  std::ostringstream o;
  for (std::size_t b = 0; b < status.size(); ++b) {
    if (b) o << "; ";
    o << "[" << b << "] " << status_name(status[b]);
    if (!diagnostics[b].empty()) o << " (" << diagnostics[b] << ")";
    if (!final_objective.empty()) o << " S=" << final_objective[static_cast<I>(b)];
  }
  return o.str();
}

Optimizer::Optimizer(Objective& obj, OptimizerConfig cfg) : obj_(&obj), cfg_(std::move(cfg)) { cfg_.validate(); }

void Optimizer::set_config(OptimizerConfig cfg) {
  cfg.validate();
  const bool same_linear = cfg.linear.kind == cfg_.linear.kind &&
                           cfg.linear.symbolic.ordering == cfg_.linear.symbolic.ordering &&
                           cfg.linear.symbolic.merge == cfg_.linear.symbolic.merge &&
                           cfg.linear.symbolic.merge_threshold == cfg_.linear.symbolic.merge_threshold &&
                           cfg.linear.factor.method == cfg_.linear.factor.method &&
                           cfg.linear.factor.pivot_tol == cfg_.linear.factor.pivot_tol;
  cfg_ = std::move(cfg);
  if (!same_linear) solver_.reset();
}

const sparse::LinearSolver& Optimizer::linear_solver() {
  if (!solver_ || solver_revision_ != obj_->structure_revision()) {
    solver_ = sparse::LinearSolver::for_objective(*obj_, cfg_.linear);
    solver_revision_ = obj_->structure_revision();
  }
  return *solver_;
}

OptimizerInfo Optimizer::optimize() {
  if (obj_->num_costs() == 0) throw Error("optimize: the objective has no costs");
  const auto& solver = linear_solver();
  const VarValues<BatchedArray> v0 = current_values(*obj_);
  Engine<BatchedArray> e(*obj_, cfg_, solver, nullptr, v0.optim, v0.aux, 0);
  OptimizerInfo info = e.run();
  obj_->set_optim_values(e.theta());
  check_outcome(info);
  return info;
}

RecordedSolution Optimizer::optimize_recorded(Tape& tape, const VarValues<Var>& start, const RecordOptions& opts) {
  if (obj_->num_costs() == 0) throw Error("optimize: the objective has no costs");
  if (start.optim.size() != obj_->optim_vars().size() || start.aux.size() != obj_->aux_vars().size()) {
    throw Error("optimize_recorded: start values do not match the objective's variables");
  }
  for (const auto& v : start.optim) {
    if (v.tape() != &tape) throw Error("optimize_recorded: start values live on another tape");
  }
  if (opts.keep_iterations < 0) throw Error("optimize_recorded: keep_iterations must be >= 0");
  const auto& solver = linear_solver();
  Engine<Var> e(*obj_, cfg_, solver, &tape, start.optim, start.aux, opts.keep_iterations);
  RecordedSolution out;
  out.info = e.run();
  out.theta = e.theta();
  obj_->set_optim_values(values_of(out.theta));
  check_outcome(out.info);
  return out;
}

OptimizerInfo optimize(Objective& obj, const OptimizerConfig& cfg) {
  Optimizer o(obj, cfg);
  return o.optimize();
}

DoglegPoint dogleg_point(const BatchedArray& gn, const BatchedArray& g, const BatchedArray& hg,
                         const std::vector<double>& radius) {
  if (gn.shape() != g.shape() || hg.shape() != g.shape() || g.rank() != 2 ||
      static_cast<I>(radius.size()) != g.batch()) {
    throw ShapeError("dogleg_point: expected matching (B, n) arrays and B radii");
  }
  const PointValues p = dogleg_values(gn, g, hg, radius);
  return {dogleg_step(gn, g, hg, radius, p), p.predicted, p.kind};
}

}  // namespace dnls::optim
