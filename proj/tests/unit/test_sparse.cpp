#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dnls/core/objective.hpp"
#include "dnls/error.hpp"
#include "dnls/sparse/csc.hpp"
#include "dnls/sparse/system.hpp"
#include "dnls/tensor/kernels.hpp"
#include "test_util.hpp"

using namespace dnls;
using namespace dnls::sparse;

namespace {

BatchedArray scalar(double v) { return BatchedArray({1, 1}, {v}); }

struct CurveFn {
  template <class T>
  T operator()(const std::vector<T>& in) const {
    return sub(in[2], scale(exp(in[1]), in[0]));
  }
};

// Pattern values of a batch of dense symmetric matrices (row-major n x n each).
BatchedArray values_from_dense(const BlockPattern& p, const std::vector<std::vector<double>>& mats) {
  const std::int64_t n = p.dim();
  BatchedArray h(Shape{static_cast<std::int64_t>(mats.size()), p.nnz()});
  for (std::size_t b = 0; b < mats.size(); ++b) {
    for (std::int64_t j = 0; j < n; ++j) {
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t q = p.find(i, j);
        if (q >= 0) h.at(static_cast<std::int64_t>(b), q) = mats[b][static_cast<std::size_t>(i * n + j)];
      }
    }
  }
  return h;
}

BlockPattern scalar_pattern(std::int64_t n, const std::vector<std::pair<int, int>>& edges) {
  return BlockPattern::from_blocks(std::vector<std::int64_t>(static_cast<std::size_t>(n), 1), edges);
}

BlockPattern arrow(int n) {
  std::vector<std::pair<int, int>> e;
  for (int i = 1; i < n; ++i) e.emplace_back(0, i);
  return scalar_pattern(n, e);
}

struct RandomSystem {
  BlockPattern pattern;
  BatchedArray h;
  BatchedArray b;
};

// Random block graph with diagonally dominant values (SPD by construction).
RandomSystem random_system(std::mt19937_64& rng, int blocks, std::int64_t batch, int max_dim = 3) {
  std::uniform_int_distribution<int> dim(1, max_dim);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::int64_t> dims(static_cast<std::size_t>(blocks));
  for (auto& d : dims) d = dim(rng);
  std::vector<std::pair<int, int>> edges;
  std::uniform_int_distribution<int> pick(0, blocks - 1);
  for (int i = 1; i < blocks; ++i) edges.emplace_back(i - 1, i);
  for (int e = 0; e < blocks / 3; ++e) {
    const int a = pick(rng), c = pick(rng);
    if (a != c) edges.emplace_back(a, c);
  }
  RandomSystem s;
  s.pattern = BlockPattern::from_blocks(dims, edges);
  const std::int64_t n = s.pattern.dim();
  s.h = BatchedArray(Shape{batch, s.pattern.nnz()});
  for (std::int64_t l = 0; l < batch; ++l) {
    std::vector<double> row_abs(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t j = 0; j < n; ++j) {
      for (std::int64_t i = j + 1; i < n; ++i) {
        const std::int64_t q = s.pattern.find(i, j);
        if (q < 0) continue;
        const double v = u(rng);
        s.h.at(l, q) = v;
        s.h.at(l, s.pattern.find(j, i)) = v;
        row_abs[static_cast<std::size_t>(i)] += std::abs(v);
        row_abs[static_cast<std::size_t>(j)] += std::abs(v);
      }
    }
    for (std::int64_t i = 0; i < n; ++i) {
      s.h.at(l, s.pattern.find(i, i)) = row_abs[static_cast<std::size_t>(i)] + 0.5 + std::abs(u(rng));
    }
  }
  s.b = testutil::random_array(rng, Shape{batch, n});
  return s;
}

// max |L L^T - P H P^T| / max |H| over the batch.
double factor_residual(const NumericFactor& f, const BlockPattern& p, const BatchedArray& h) {
  const auto& s = *f.symbolic;
  const std::int64_t n = s.n;
  double worst = 0.0;
  for (std::int64_t l = 0; l < f.lanes; ++l) {
    std::vector<double> L(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t j = 0; j < n; ++j) {
      for (std::int64_t q = s.Lp[static_cast<std::size_t>(j)]; q < s.Lp[static_cast<std::size_t>(j) + 1]; ++q) {
        const std::int64_t i = s.Li[static_cast<std::size_t>(q)];
        L[static_cast<std::size_t>(i * n + j)] = f.l_entry(l, i, j);
      }
    }
    double hmax = 0.0, err = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j <= i; ++j) {
        double acc = 0.0;
        for (std::int64_t k = 0; k <= j; ++k) acc += L[static_cast<std::size_t>(i * n + k)] * L[static_cast<std::size_t>(j * n + k)];
        const std::int64_t q = p.find(s.scalar_perm[static_cast<std::size_t>(i)], s.scalar_perm[static_cast<std::size_t>(j)]);
        const double hv = q < 0 ? 0.0 : h.at(l, q);
        hmax = std::max(hmax, std::abs(hv));
        err = std::max(err, std::abs(acc - hv));
      }
    }
    worst = std::max(worst, err / hmax);
  }
  return worst;
}

double max_rel_diff(const BatchedArray& a, const BatchedArray& b) {
  return max_abs_diff(a, b) / std::max(1.0, max_abs(b));
}

}  // namespace

TEST_CASE("assembly examples") {
  {
    Objective obj;
    auto th = make_variable("theta", scalar(0.0));
    obj.add_cost_function(std::make_shared<Prior>("p", th, make_variable("target", scalar(5.0))));
    const BlockPattern p = BlockPattern::from_objective(obj);
    const LinearSystem sys = assemble_system(obj, p, linearize(obj, current_values(obj)));
    CHECK(sys.h[0] == doctest::Approx(1.0));
    CHECK(sys.b[0] == doctest::Approx(-5.0));
  }
  Objective obj;
  auto v = make_variable("v", scalar(1.0));
  obj.add_cost_function(make_autodiff_cost("curve", "fit", {v},
                                           {make_variable("x", BatchedArray({1, 2}, {0.0, std::log(2.0)})),
                                            make_variable("y", BatchedArray({1, 2}, {3.0, 6.0}))},
                                           2, CurveFn{}));
  const BlockPattern p = BlockPattern::from_objective(obj);
  const Terms<BatchedArray> t = linearize(obj, current_values(obj));
  const LinearSystem sys = assemble_system(obj, p, t);
  CHECK(sys.h[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(sys.b[0] == doctest::Approx(-10.0).epsilon(1e-12));
  const LinearSystem damped = assemble_system(obj, p, t, {DampingStyle::Marquardt, scalar(1.0)});
  CHECK(damped.h[0] == doctest::Approx(10.0).epsilon(1e-12));
  const LinearSystem add = assemble_system(obj, p, t, {DampingStyle::Additive, scalar(1.0)});
  CHECK(add.h[0] == doctest::Approx(6.0).epsilon(1e-12));

  // A pattern that does not cover the objective is rejected.
  const BlockPattern other = BlockPattern::from_blocks({1, 1}, {});
  CHECK_THROWS_AS(assemble_system(obj, other, t), Error);
}

TEST_CASE("symbolic analysis examples") {
  SUBCASE("diagonal") {
    auto s = symbolic_analyze(scalar_pattern(4, {}));
    CHECK(s->perm == std::vector<int>{0, 1, 2, 3});
    CHECK(s->fill_in == 0);
  }
  SUBCASE("tridiagonal chain") {
    auto s = symbolic_analyze(scalar_pattern(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}));
    CHECK(s->fill_in == 0);
    int roots = 0;
    for (int k = 0; k < 5; ++k) {
      if (s->parent[static_cast<std::size_t>(k)] < 0) {
        ++roots;
      } else {
        CHECK(s->parent[static_cast<std::size_t>(k)] == k + 1);
      }
    }
    CHECK(roots == 1);
  }
  SUBCASE("arrow") {
    const BlockPattern p = arrow(4);
    auto md = symbolic_analyze(p);
    // The leaves go first; once the hub is down to one neighbour it ties with
    // the last leaf and wins on index.
    CHECK(md->perm == std::vector<int>{1, 2, 0, 3});
    CHECK(md->fill_in == 0);
    auto id = symbolic_analyze(p, SymbolicOptions{Ordering::Identity});
    // Eliminating the hub first couples the three leaves: 3 entries below the
    // diagonal, 6 counting both triangles.
    CHECK(id->fill_in == 3);
  }
  SUBCASE("arrow family") {
    for (int n = 2; n <= 40; ++n) {
      const BlockPattern p = arrow(n);
      CHECK(symbolic_analyze(p)->fill_in <= symbolic_analyze(p, SymbolicOptions{Ordering::Identity})->fill_in);
    }
  }
  SUBCASE("determinism and invariants") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 10; ++t) {
      const RandomSystem rs = random_system(rng, 60, 1);
      auto a = symbolic_analyze(rs.pattern);
      auto b = symbolic_analyze(rs.pattern);
      CHECK(a->perm == b->perm);
      std::vector<int> seen(a->perm.size(), 0);
      for (int k : a->perm) ++seen[static_cast<std::size_t>(k)];
      CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
      for (std::size_t k = 0; k < a->parent.size(); ++k) {
        if (a->parent[k] >= 0) CHECK(a->parent[k] > static_cast<int>(k));
      }
      CHECK(a->fill_in >= 0);
    }
  }
  SUBCASE("structurally singular") {
    const CscMatrix m = CscMatrix::from_triplets(2, {0, 1}, {1, 0}, {1.0, 1.0});
    CHECK_THROWS_AS(SparseCholesky{m}, Error);
  }
}

TEST_CASE("numeric factorization examples") {
  for (FactorMethod method : {FactorMethod::Supernodal, FactorMethod::Simplicial}) {
    CAPTURE(static_cast<int>(method));
    const BlockPattern p = scalar_pattern(2, {{0, 1}});
    auto sym = symbolic_analyze(p, SymbolicOptions{Ordering::Identity});
    FactorOptions fo{method};
    const BatchedArray h = values_from_dense(p, {{4, 2, 2, 3}, {1, 0, 0, 1}, {1, 2, 2, 1}});
    const NumericFactor f = numeric_factorize(sym, h, fo);
    CHECK(f.l_entry(0, 0, 0) == doctest::Approx(2.0));
    CHECK(f.l_entry(0, 1, 0) == doctest::Approx(1.0));
    CHECK(f.l_entry(0, 0, 1) == 0.0);
    CHECK(f.l_entry(0, 1, 1) == doctest::Approx(std::sqrt(2.0)));
    CHECK(f.l_entry(1, 0, 0) == doctest::Approx(1.0));
    CHECK(f.l_entry(1, 1, 0) == doctest::Approx(0.0));
    CHECK(f.l_entry(1, 1, 1) == doctest::Approx(1.0));
    CHECK(f.failed == std::vector<std::uint8_t>{0, 0, 1});

    CHECK_THROWS_AS(solve(f, BatchedArray(Shape{3, 2})), FactorizationError);
    const BatchedArray x = solve(f, BatchedArray({3, 2}, {8, 8, 3, -1, 1, 1}), SolveOptions{true});
    CHECK(x.at(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(x.at(0, 1) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x.at(1, 0) == doctest::Approx(3.0));
    CHECK(x.at(1, 1) == doctest::Approx(-1.0));
    CHECK(x.at(2, 0) == 0.0);

    // Batch of the two solvable systems keeps its order.
    const NumericFactor g = numeric_factorize(sym, values_from_dense(p, {{1, 0, 0, 1}, {4, 2, 2, 3}}), fo);
    const BatchedArray y = solve(g, BatchedArray({2, 2}, {5, 7, 8, 8}));
    CHECK(y.at(0, 0) == doctest::Approx(5.0));
    CHECK(y.at(0, 1) == doctest::Approx(7.0));
    CHECK(y.at(1, 0) == doctest::Approx(1.0));
    CHECK(y.at(1, 1) == doctest::Approx(2.0));
  }
}

TEST_CASE("dense path agrees with the sparse path") {
  const BlockPattern p = scalar_pattern(2, {{0, 1}});
  const BatchedArray h = values_from_dense(p, {{4, 2, 2, 3}});
  const BatchedArray b({1, 2}, {8, 8});
  const BatchedArray xd = dense_solve(p, h, b);
  const BatchedArray xs = solve(numeric_factorize(symbolic_analyze(p), h), b);
  CHECK(max_abs_diff(xd, xs) < 1e-12);
  CHECK(xd[0] == doctest::Approx(1.0));

  const BlockPattern one = scalar_pattern(1, {});
  CHECK(dense_solve(one, BatchedArray({1, 1}, {2.0}), BatchedArray({1, 1}, {4.0}))[0] == doctest::Approx(2.0));
  CHECK_THROWS_AS(dense_solve(p, values_from_dense(p, {{1, 2, 2, 1}}), b), FactorizationError);

  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const RandomSystem rs = random_system(rng, 20, 2);
    const BatchedArray a = dense_solve(rs.pattern, rs.h, rs.b);
    const BatchedArray c = solve(numeric_factorize(symbolic_analyze(rs.pattern), rs.h), rs.b);
    worst = std::max(worst, max_rel_diff(c, a));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("factorization residual on random block systems") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> nb(1, 200);
  double worst = 0.0, worst_solve = 0.0, worst_methods = 0.0;
  for (int t = 0; t < 50; ++t) {
    const RandomSystem rs = random_system(rng, nb(rng), 2, 2);
    auto sym = symbolic_analyze(rs.pattern);
    const NumericFactor sup = numeric_factorize(sym, rs.h);
    const NumericFactor simp = numeric_factorize(sym, rs.h, FactorOptions{FactorMethod::Simplicial});
    CHECK_FALSE(sup.any_failed());
    worst = std::max({worst, factor_residual(sup, rs.pattern, rs.h), factor_residual(simp, rs.pattern, rs.h)});
    worst_methods = std::max(worst_methods, max_abs_diff(sup.l_values(), simp.l_values()));
    const BatchedArray xd = dense_solve(rs.pattern, rs.h, rs.b);
    worst_solve = std::max({worst_solve, max_rel_diff(solve(sup, rs.b), xd), max_rel_diff(solve(simp, rs.b), xd)});
  }
  CHECK(worst < 1e-10);
  CHECK(worst_solve < 1e-8);
  CHECK(worst_methods < 1e-12);
}

TEST_CASE("supernodes") {
  // A chain of dense 2x2 blocks collapses into few panels; merging off keeps one
  // panel per block and gives the same factor.
  std::vector<std::pair<int, int>> e;
  for (int i = 1; i < 8; ++i) e.emplace_back(i - 1, i);
  for (int i = 0; i < 8; ++i) e.emplace_back(i, 8);
  const BlockPattern p = BlockPattern::from_blocks(std::vector<std::int64_t>(9, 2), e);
  auto merged = symbolic_analyze(p, SymbolicOptions{Ordering::Identity, 0.8, true});
  auto single = symbolic_analyze(p, SymbolicOptions{Ordering::Identity, 0.8, false});
  CHECK(merged->supernodes.size() < single->supernodes.size());
  CHECK(single->supernodes.size() == 9);
  std::mt19937_64 rng(2);
  BatchedArray h(Shape{3, p.nnz()});
  for (std::int64_t l = 0; l < 3; ++l) {
    for (std::int64_t j = 0; j < p.dim(); ++j) {
      for (std::int64_t i = j; i < p.dim(); ++i) {
        const std::int64_t q = p.find(i, j);
        if (q < 0) continue;
        const double v = i == j ? 10.0 + l : std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        h.at(l, q) = v;
        h.at(l, p.find(j, i)) = v;
      }
    }
  }
  const NumericFactor a = numeric_factorize(merged, h);
  const NumericFactor b = numeric_factorize(single, h);
  CHECK(max_abs_diff(a.l_values(), b.l_values()) < 1e-13);
  CHECK(factor_residual(a, p, h) < 1e-12);
}

TEST_CASE("symbolic reuse gives identical factors") {
  std::mt19937_64 rng(8);
  const RandomSystem base = random_system(rng, 40, 1);
  auto sym = symbolic_analyze(base.pattern);
  bool same = true;
  for (int t = 0; t < 100; ++t) {
    RandomSystem rs = random_system(rng, 1, 1);  // only for fresh values below
    BatchedArray h = base.h;
    std::uniform_real_distribution<double> u(0.9, 1.1);
    // Scale symmetric pairs and keep diagonal dominance.
    for (std::int64_t j = 0; j < base.pattern.dim(); ++j) {
      for (std::int64_t i = j; i < base.pattern.dim(); ++i) {
        const std::int64_t q = base.pattern.find(i, j);
        if (q < 0) continue;
        const double f = i == j ? 1.5 : u(rng);
        h[q] *= f;
        if (i != j) h[base.pattern.find(j, i)] *= f;
      }
    }
    const NumericFactor reuse = numeric_factorize(sym, h);
    const NumericFactor fresh = numeric_factorize(symbolic_analyze(base.pattern), h);
    same = same && reuse.values == fresh.values && solve(reuse, base.b) == solve(fresh, base.b);
    (void)rs;
  }
  CHECK(same);
}

TEST_CASE("linear solve backward") {
  const BlockPattern p = scalar_pattern(2, {{0, 1}});
  const BatchedArray h = values_from_dense(p, {{2, 0, 0, 4}});
  const LinearSolver solver(p, SolverOptions{});
  const FactorPtr f = solver.factorize(h);
  const BatchedArray y = f->solve(BatchedArray({1, 2}, {2, 4}));
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(1.0));
  reset_counters();
  const SolveGrads raw = linear_solve_backward(*f, p, y, BatchedArray({1, 2}, {1, 1}), &h, false);
  CHECK(counters().factorizations == 0);
  CHECK(counters().solves == 1);
  CHECK(raw.grad_b[0] == doctest::Approx(0.5));
  CHECK(raw.grad_b[1] == doctest::Approx(0.25));
  CHECK(raw.grad_h[p.find(0, 0)] == doctest::Approx(-0.5));
  CHECK(raw.grad_h[p.find(0, 1)] == doctest::Approx(-0.5));
  CHECK(raw.grad_h[p.find(1, 0)] == doctest::Approx(-0.25));
  CHECK(raw.grad_h[p.find(1, 1)] == doctest::Approx(-0.25));
  const SolveGrads sym = linear_solve_backward(*f, p, y, BatchedArray({1, 2}, {1, 1}), &h);
  CHECK(sym.grad_h[p.find(0, 1)] == doctest::Approx(-0.375));
  CHECK(sym.grad_h[p.find(1, 0)] == doctest::Approx(-0.375));

  SUBCASE("stale factor") {
    const bool before = debug_checks();
    set_debug_checks(true);
    BatchedArray h2 = h;
    h2[p.find(0, 0)] = 3.0;
    CHECK_THROWS_AS(linear_solve_backward(*f, p, y, BatchedArray({1, 2}, {1, 1}), &h2), FactorizationError);
    set_debug_checks(before);
  }

  SUBCASE("finite differences on random systems") {
    std::mt19937_64 rng(21);
    for (SolverKind kind : {SolverKind::Sparse, SolverKind::Dense}) {
      const RandomSystem rs = random_system(rng, 6, 1);
      const LinearSolver s(rs.pattern, SolverOptions{kind});
      const BatchedArray w = testutil::random_array(rng, rs.b.shape());
      auto fval = [&](const BatchedArray& hh, const BatchedArray& bb) {
        const BatchedArray x = s.factorize(hh)->solve(bb);
        double acc = 0.0;
        for (std::int64_t i = 0; i < x.numel(); ++i) acc += w[i] * x[i];
        return acc;
      };
      const FactorPtr fac = s.factorize(rs.h);
      const BatchedArray x = fac->solve(rs.b);
      const SolveGrads g = linear_solve_backward(*fac, rs.pattern, x, w, &rs.h);
      const double eps = 1e-6;
      double worst = 0.0;
      for (std::int64_t i = 0; i < rs.b.numel(); ++i) {
        BatchedArray bp = rs.b, bm = rs.b;
        bp[i] += eps;
        bm[i] -= eps;
        const double fd = (fval(rs.h, bp) - fval(rs.h, bm)) / (2 * eps);
        worst = std::max(worst, std::abs(fd - g.grad_b[i]) / std::max(1.0, std::abs(fd)));
      }
      // Symmetric perturbation of one stored pair moves both entries at once.
      for (std::int64_t j = 0; j < rs.pattern.dim(); ++j) {
        for (std::int64_t i = j; i < rs.pattern.dim(); ++i) {
          const std::int64_t q = rs.pattern.find(i, j);
          if (q < 0) continue;
          const std::int64_t qt = rs.pattern.find(j, i);
          BatchedArray hp = rs.h, hm = rs.h;
          hp[q] += eps;
          hm[q] -= eps;
          if (qt != q) {
            hp[qt] += eps;
            hm[qt] -= eps;
          }
          const double fd = (fval(hp, rs.b) - fval(hm, rs.b)) / (2 * eps);
          const double an = qt == q ? g.grad_h[q] : g.grad_h[q] + g.grad_h[qt];
          worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd)));
        }
      }
      CHECK(worst < 1e-6);
    }
  }
}

TEST_CASE("tape assembly and solve match plain values and finite differences") {
  std::mt19937_64 rng(4);
  Objective obj;
  std::vector<VariablePtr> x;
  for (int i = 0; i < 4; ++i) x.push_back(make_variable("x" + std::to_string(i), testutil::random_array(rng, {2, 2})));
  for (int i = 0; i < 4; ++i) {
    obj.add_cost_function(std::make_shared<Prior>("p" + std::to_string(i), x[static_cast<std::size_t>(i)],
                                                  make_variable("t" + std::to_string(i), testutil::random_array(rng, {2, 2}))));
  }
  for (int i = 1; i < 4; ++i) {
    obj.add_cost_function(std::make_shared<Between>("b" + std::to_string(i), x[static_cast<std::size_t>(i - 1)],
                                                    x[static_cast<std::size_t>(i)],
                                                    make_variable("z" + std::to_string(i), testutil::random_array(rng, {2, 2}))));
  }
  obj.add_cost_function(make_autodiff_cost("curve", "fit", {make_variable("v", BatchedArray({2, 1}, {1.0, 0.5}))},
                                           {make_variable("cx", BatchedArray({1, 2}, {0.1, 0.2})),
                                            make_variable("cy", BatchedArray({1, 2}, {1.0, 3.0}))},
                                           2, CurveFn{}));
  const LinearSolver solver = LinearSolver::for_objective(obj);
  const Damping damp{DampingStyle::Marquardt, BatchedArray({2, 1}, {0.1, 0.3})};
  const LinearSystem plain = assemble_system(obj, solver.pattern(), linearize(obj, current_values(obj)), damp);
  const BatchedArray w = testutil::random_array(rng, plain.b.shape());

  Tape tape;
  VarValues<Var> vv;
  for (const auto& v : obj.optim_vars()) vv.optim.push_back(tape.leaf(v->name(), v->value()));
  for (const auto& v : obj.aux_vars()) vv.aux.push_back(tape.leaf(v->name(), v->value()));
  const VarSystem vs = assemble_system(obj, solver.pattern(), linearize(obj, vv), damp);
  CHECK(max_abs_diff(vs.h.value(), plain.h) == 0.0);
  CHECK(max_abs_diff(vs.b.value(), plain.b) == 0.0);
  const VarSolve sol = solve_system(solver, vs.h, vs.b);
  CHECK(max_abs_diff(sol.delta.value(), solver.solve(plain)) < 1e-14);

  const auto res = tape.backward({{sol.delta, w}});
  auto f = [&]() {
    const LinearSystem s = assemble_system(obj, solver.pattern(), linearize(obj, current_values(obj)), damp);
    const BatchedArray d = solver.solve(s);
    double acc = 0.0;
    for (std::int64_t i = 0; i < d.numel(); ++i) acc += w[i] * d[i];
    return acc;
  };
  const double eps = 1e-6;
  double worst = 0.0;
  for (const std::string name : {"t1", "z2", "cy", "x3"}) {
    const VariablePtr var = obj.variable(name);
    const BatchedArray v0 = var->value();
    REQUIRE(res.grad(name) != nullptr);
    const BatchedArray& g = *res.grad(name);
    for (std::int64_t i = 0; i < v0.numel(); ++i) {
      BatchedArray vp = v0, vm = v0;
      vp[i] += eps;
      vm[i] -= eps;
      obj.update_inputs({{name, vp}});
      const double fp = f();
      obj.update_inputs({{name, vm}});
      const double fm = f();
      obj.update_inputs({{name, v0}});
      const double fd = (fp - fm) / (2 * eps);
      // Batch-1 payloads were broadcast, so their gradient is summed over rows.
      double an = 0.0;
      if (g.batch() == v0.batch()) {
        an = g[i];
      } else {
        for (std::int64_t b = 0; b < g.batch(); ++b) an += g.at(b, i);
      }
      worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd)));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("matrix market round trip and standalone cholesky") {
  const CscMatrix a = CscMatrix::from_dense(3, {4, 1, 0, 1, 3, 1, 0, 1, 2});
  std::stringstream ss;
  write_matrix_market(ss, a, true);
  const CscMatrix b = read_matrix_market(ss);
  CHECK(b.to_dense() == a.to_dense());

  const CscMatrix f = read_matrix_market_file(std::string(DNLS_FIXTURE_DIR) + "/spd_5.mtx");
  SparseCholesky chol(f);
  CHECK_FALSE(chol.failed());
  const std::vector<double> x = chol.solve({1, 2, 3, 4, 5});
  const std::vector<double> d = f.to_dense();
  for (int i = 0; i < 5; ++i) {
    double acc = 0.0;
    for (int j = 0; j < 5; ++j) acc += d[static_cast<std::size_t>(i * 5 + j)] * x[static_cast<std::size_t>(j)];
    CHECK(acc == doctest::Approx(i + 1.0).epsilon(1e-12));
  }
  std::stringstream bad("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n3 1 2.0\n");
  try {
    read_matrix_market(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("factorization kernels are ISA independent") {
  if (kernels::avx2_kernels() == nullptr) return;
  std::mt19937_64 rng(9);
  const RandomSystem rs = random_system(rng, 50, 5);
  auto sym = symbolic_analyze(rs.pattern);
  const kernels::Isa before = kernels::active().isa;
  for (FactorMethod m : {FactorMethod::Supernodal, FactorMethod::Simplicial}) {
    kernels::select(kernels::Isa::Scalar);
    const NumericFactor a = numeric_factorize(sym, rs.h, FactorOptions{m});
    const BatchedArray xa = solve(a, rs.b);
    kernels::select(kernels::Isa::Avx2);
    const NumericFactor b = numeric_factorize(sym, rs.h, FactorOptions{m});
    const BatchedArray xb = solve(b, rs.b);
    CHECK(a.values == b.values);
    CHECK(xa == xb);
  }
  kernels::select(before);
}
