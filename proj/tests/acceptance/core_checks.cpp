// SPDX-License-Identifier: Apache-2.0
// Sparse solver, Lie groups, optimizer properties, vectorized evaluation.
#include <numbers>
#include <random>

#include "acceptance.hpp"
#include "dnls/apps/pose_graph.hpp"
#include "dnls/core/objective.hpp"
#include "dnls/lie/lie.hpp"
#include "dnls/optim/optimizer.hpp"
#include "dnls/sparse/system.hpp"
#include "dnls/tensor/jacobian.hpp"
#include "dnls/tensor/tape.hpp"

namespace acceptance {

void vectorization_timing(Report& r, bool equivalence_ok, const std::string& equivalence);

using namespace dnls;

namespace {

BatchedArray random_array(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  BatchedArray a(std::move(shape));
  for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = u(rng);
  return a;
}

// ---------------------------------------------------------------- sparse

struct RandomSystem {
  sparse::BlockPattern pattern;
  BatchedArray h;
  BatchedArray b;
};

// Chain of blocks plus random chords; diagonally dominant, hence SPD.
RandomSystem random_system(std::mt19937_64& rng, int blocks, std::int64_t batch) {
  std::uniform_int_distribution<int> dim(1, 3), pick(0, blocks - 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::int64_t> dims(static_cast<std::size_t>(blocks));
  for (auto& d : dims) d = dim(rng);
  std::vector<std::pair<int, int>> edges;
  for (int i = 1; i < blocks; ++i) edges.emplace_back(i - 1, i);
  for (int e = 0; e < blocks / 3; ++e) {
    const int a = pick(rng), c = pick(rng);
    if (a != c) edges.emplace_back(a, c);
  }
  RandomSystem s;
  s.pattern = sparse::BlockPattern::from_blocks(dims, edges);
  const std::int64_t n = s.pattern.dim();
  s.h = BatchedArray(Shape{batch, s.pattern.nnz()});
  for (std::int64_t l = 0; l < batch; ++l) {
    std::vector<double> row(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t j = 0; j < n; ++j) {
      for (std::int64_t i = j + 1; i < n; ++i) {
        const std::int64_t q = s.pattern.find(i, j);
        if (q < 0) continue;
        const double v = u(rng);
        s.h.at(l, q) = v;
        s.h.at(l, s.pattern.find(j, i)) = v;
        row[static_cast<std::size_t>(i)] += std::abs(v);
        row[static_cast<std::size_t>(j)] += std::abs(v);
      }
    }
    for (std::int64_t i = 0; i < n; ++i) s.h.at(l, s.pattern.find(i, i)) = row[static_cast<std::size_t>(i)] + 0.5 + std::abs(u(rng));
  }
  s.b = random_array(rng, Shape{batch, n});
  return s;
}

// max |L L^T - P H P^T| / max |H|, worst lane.
double factor_residual(const sparse::NumericFactor& f, const sparse::BlockPattern& p, const BatchedArray& h) {
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

double dot(const BatchedArray& a, const BatchedArray& b) {
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------- lie

constexpr lie::Group kGroups[] = {lie::Group::SO2, lie::Group::SE2, lie::Group::SO3, lie::Group::SE3};
constexpr double kPi = std::numbers::pi;

BatchedArray random_tangent(std::mt19937_64& rng, lie::Group kind, std::int64_t batch, double max_angle,
                            double trans = 2.0) {
  const std::int64_t d = lie::tangent_dim(kind);
  const std::int64_t nrot = lie::rot_dim(kind) == 2 ? 1 : 3;
  BatchedArray xi({batch, d});
  std::uniform_real_distribution<double> u(-1.0, 1.0), mag(0.0, max_angle), tu(-trans, trans);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t i = 0; i < d - nrot; ++i) xi.at(b, i) = tu(rng);
    double dir[3] = {u(rng), u(rng), u(rng)}, n = 0.0;
    for (std::int64_t i = 0; i < nrot; ++i) n += dir[i] * dir[i];
    n = std::sqrt(n);
    const double m = mag(rng);
    for (std::int64_t i = 0; i < nrot; ++i) xi.at(b, d - nrot + i) = dir[i] / n * m;
  }
  return xi;
}

// Worst relative FD error over the analytic Jacobians of one group.
double lie_derivative_error(std::mt19937_64& rng, lie::Group k, std::int64_t B) {
  using namespace lie;
  const BatchedArray a = exp_map(k, random_tangent(rng, k, B, kPi - 0.2));
  const BatchedArray b = exp_map(k, random_tangent(rng, k, B, kPi - 0.2));
  const BatchedArray xi = random_tangent(rng, k, B, 2.5);
  const std::int64_t d = tangent_dim(k);
  auto err = [&](const BatchedArray& an, const BatchedArray& fd) {
    return rel_error(add(reshape(an, fd.item_shape()), BatchedArray(fd.shape())), fd, 1e-8);
  };
  double worst = 0.0;
  {
    const BatchedArray f0 = exp_map(k, xi);
    const auto fd = finite_diff_jacobian([&](const std::vector<BatchedArray>& in) { return local(k, f0, exp_map(k, in[0])); },
                                         {euclidean_leaf(xi)}, {0});
    worst = std::max(worst, err(jacobian_exp(k, xi), fd[0]));
  }
  {
    const auto fd = finite_diff_jacobian([&](const std::vector<BatchedArray>& in) { return log_map(k, in[0]); },
                                         {leaf_spec(k, a)}, {0});
    worst = std::max(worst, err(jacobian_log(k, a), fd[0]));
  }
  {
    const BatchedArray f0 = compose(k, a, b);
    const auto fd = finite_diff_jacobian(
        [&](const std::vector<BatchedArray>& in) { return local(k, f0, compose(k, in[0], in[1])); },
        {leaf_spec(k, a), leaf_spec(k, b)}, {0, 1});
    BatchedArray ja, jb;
    jacobian_compose(k, a, b, &ja, &jb);
    worst = std::max({worst, err(ja, fd[0]), err(jb, fd[1])});
  }
  {
    const BatchedArray f0 = inverse(k, a);
    const auto fd = finite_diff_jacobian([&](const std::vector<BatchedArray>& in) { return local(k, f0, inverse(k, in[0])); },
                                         {leaf_spec(k, a)}, {0});
    worst = std::max(worst, err(jacobian_inverse(k, a), fd[0]));
  }
  {
    const BatchedArray f0 = retract(k, a, xi);
    const auto fd = finite_diff_jacobian(
        [&](const std::vector<BatchedArray>& in) { return local(k, f0, retract(k, in[0], in[1])); },
        {leaf_spec(k, a), euclidean_leaf(xi)}, {0, 1});
    BatchedArray jg, jd;
    jacobian_retract(k, a, xi, &jg, &jd);
    worst = std::max({worst, err(jg, fd[0]), err(jd, fd[1])});
  }
  {
    const auto fd = finite_diff_jacobian([&](const std::vector<BatchedArray>& in) { return local(k, in[0], in[1]); },
                                         {leaf_spec(k, a), leaf_spec(k, b)}, {0, 1});
    BatchedArray ja, jb;
    jacobian_local(k, a, b, &ja, &jb);
    worst = std::max({worst, err(ja, fd[0]), err(jb, fd[1])});
  }
  {
    // Right Jacobian against the exp map: exp(xi + t) ~ exp(xi) exp(Jr t).
    const BatchedArray f0 = exp_map(k, xi);
    const auto fd = finite_diff_jacobian([&](const std::vector<BatchedArray>& in) { return local(k, f0, exp_map(k, in[0])); },
                                         {euclidean_leaf(xi)}, {0});
    worst = std::max(worst, err(right_jacobian(k, xi), fd[0]));
    const BatchedArray I = add(BatchedArray::identity(1, d), BatchedArray({B, d, d}));
    worst = std::max(worst, max_abs_diff(matmul(right_jacobian(k, xi), right_jacobian_inv(k, xi)), I));
  }
  return worst;
}

// Worst second difference across the small-angle thresholds.
double lie_branch_jump(std::mt19937_64& rng, lie::Group k) {
  using namespace lie;
  const std::int64_t d = tangent_dim(k);
  const std::int64_t nrot = rot_dim(k) == 2 ? 1 : 3;
  double worst = 0.0;
  for (double t0 : {std::sqrt(kSmallAngle2), std::sqrt(kSeriesAngle2)}) {
    BatchedArray u = random_tangent(rng, k, 16, 1.0, 1.0);
    for (std::int64_t b = 0; b < 16; ++b) {
      double n = 0.0;
      for (std::int64_t i = d - nrot; i < d; ++i) n += u.at(b, i) * u.at(b, i);
      for (std::int64_t i = d - nrot; i < d; ++i) u.at(b, i) /= std::sqrt(n);
    }
    auto at = [&](double t) {
      BatchedArray x = u;
      for (std::int64_t b = 0; b < 16; ++b) {
        for (std::int64_t i = d - nrot; i < d; ++i) x.at(b, i) *= t;
      }
      return x;
    };
    const BatchedArray lo = at(t0 - 1e-9), mid = at(t0), hi = at(t0 + 1e-9);
    auto second = [&](auto f) { return max_abs(add(sub(f(hi), scale(f(mid), 2.0)), f(lo))); };
    worst = std::max({worst, second([&](const BatchedArray& x) { return exp_map(k, x); }),
                      second([&](const BatchedArray& x) { return log_map(k, exp_map(k, x)); }),
                      second([&](const BatchedArray& x) { return right_jacobian(k, x); }),
                      second([&](const BatchedArray& x) { return right_jacobian_inv(k, x); })});
  }
  return worst;
}

// ---------------------------------------------------------------- optim

// r = A [x1; x2] - y with A (8, 5).
struct AffineFn {
  template <class T>
  T operator()(const std::vector<T>& in) const {
    const T x = reshape(concat(std::vector<T>{in[0], in[1]}, 1), Shape{5, 1});
    return sub(reshape(matmul(in[2], x), Shape{8}), in[3]);
  }
};

// Least-squares solution of A x = y by elimination on the normal equations.
std::vector<double> normal_solution(const BatchedArray& A, const BatchedArray& y, std::int64_t b) {
  double M[5][6] = {};
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      for (int r = 0; r < 8; ++r) M[i][j] += A.at(b, r * 5 + i) * A.at(b, r * 5 + j);
    }
    for (int r = 0; r < 8; ++r) M[i][5] += A.at(b, r * 5 + i) * y.at(b, r);
  }
  for (int c = 0; c < 5; ++c) {
    int piv = c;
    for (int r = c + 1; r < 5; ++r) {
      if (std::abs(M[r][c]) > std::abs(M[piv][c])) piv = r;
    }
    std::swap(M[c], M[piv]);
    for (int r = 0; r < 5; ++r) {
      if (r == c) continue;
      const double f = M[r][c] / M[c][c];
      for (int k = c; k < 6; ++k) M[r][k] -= f * M[c][k];
    }
  }
  std::vector<double> x(5);
  for (int i = 0; i < 5; ++i) x[static_cast<std::size_t>(i)] = M[i][5] / M[i][i];
  return x;
}

apps::PoseGraph perturbed(apps::PoseGraph g, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  for (std::size_t k = 1; k < g.poses.size(); ++k) {
    BatchedArray d({g.batch, lie::tangent_dim(g.kind)});
    for (std::int64_t i = 0; i < d.numel(); ++i) d[i] = n(rng);
    g.poses[k] = lie::retract(g.kind, g.poses[k], d);
  }
  return g;
}

BatchedArray random_pose(std::mt19937_64& rng, Manifold m, std::int64_t batch) {
  const auto g = group_of(m);
  if (!g) return random_array(rng, {batch, 3});
  return lie::exp_map(*g, random_array(rng, {batch, lie::tangent_dim(*g)}, -1.0, 1.0));
}

}  // namespace

void sparse_solver(Report& r) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nb(1, 200);
  double recon = 0, agree = 0, grad = 0;
  int max_blocks = 0;
  bool one_factor = true;
  for (int t = 0; t < 50; ++t) {
    const int blocks = t == 0 ? 200 : nb(rng);
    max_blocks = std::max(max_blocks, blocks);
    const RandomSystem rs = random_system(rng, blocks, 2);
    const auto sym = sparse::symbolic_analyze(rs.pattern);
    for (auto method : {sparse::FactorMethod::Supernodal, sparse::FactorMethod::Simplicial}) {
      const sparse::NumericFactor f = sparse::numeric_factorize(sym, rs.h, sparse::FactorOptions{method});
      recon = std::max(recon, factor_residual(f, rs.pattern, rs.h));
      const BatchedArray xd = sparse::dense_solve(rs.pattern, rs.h, rs.b);
      agree = std::max(agree, max_abs_diff(sparse::solve(f, rs.b), xd) / std::max(1.0, max_abs(xd)));
    }

    // Directional derivative of w . H^{-1} b against central differences.
    const sparse::LinearSolver solver(rs.pattern, sparse::SolverOptions{});
    const BatchedArray w = random_array(rng, rs.b.shape());
    const BatchedArray db = random_array(rng, rs.b.shape());
    BatchedArray dh(rs.h.shape());
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const std::int64_t n = rs.pattern.dim();
    for (std::int64_t l = 0; l < dh.batch(); ++l) {
      for (std::int64_t j = 0; j < n; ++j) {
        for (std::int64_t i = j; i < n; ++i) {
          const std::int64_t q = rs.pattern.find(i, j);
          if (q < 0) continue;
          const double v = 0.1 * u(rng);
          dh.at(l, q) = v;
          dh.at(l, rs.pattern.find(j, i)) = v;
        }
      }
    }
    const sparse::FactorPtr fac = solver.factorize(rs.h);
    const BatchedArray x = fac->solve(rs.b);
    const sparse::SolveGrads g = sparse::linear_solve_backward(*fac, rs.pattern, x, w, &rs.h);
    const double an = dot(g.grad_b, db) + dot(g.grad_h, dh);
    const double eps = 1e-6;
    auto f = [&](double s) { return dot(w, solver.factorize(add(rs.h, scale(dh, s)))->solve(add(rs.b, scale(db, s)))); };
    const double fd = (f(eps) - f(-eps)) / (2 * eps);
    grad = std::max(grad, std::abs(fd - an) / std::max(1.0, std::abs(fd)));

    // Recorded solve: forward plus backward factorizes once.
    Tape tape;
    const Var hv = tape.leaf("h", rs.h), bv = tape.leaf("b", rs.b);
    sparse::reset_counters();
    const sparse::VarSolve vs = sparse::solve_system(solver, hv, bv);
    const auto res = tape.backward({{vs.delta, w}});
    one_factor &= sparse::counters().factorizations == 1;
    one_factor &= res.grad("b") != nullptr && max_abs_diff(*res.grad("b"), g.grad_b) < 1e-12;
  }
  const bool ok = recon < 1e-10 && agree < 1e-8 && grad < 1e-6 && one_factor;
  r.pass_fail(5, "sparse_solver", ok,
              fmt("50 trials up to %d blocks: reconstruction %.2e (<1e-10), sparse/dense %.2e (<1e-8), "
                  "solve backward vs FD %.2e (<1e-6), one factorization per forward+backward: %s",
                  max_blocks, recon, agree, grad, one_factor ? "yes" : "no"));
}

void lie_suite(Report& r) {
  std::mt19937_64 rng(7);
  const std::int64_t N = 1000;
  double roundtrip = 0, ident = 0, deriv = 0, jump = 0;
  for (lie::Group k : kGroups) {
    using namespace lie;
    const BatchedArray xi = random_tangent(rng, k, N, kPi - 0.1);
    roundtrip = std::max(roundtrip, max_abs_diff(log_map(k, exp_map(k, xi)), xi));

    const BatchedArray g = exp_map(k, random_tangent(rng, k, N, kPi - 0.2));
    const BatchedArray h = exp_map(k, random_tangent(rng, k, N, kPi - 0.2));
    const BatchedArray q = exp_map(k, random_tangent(rng, k, N, kPi - 0.2));
    const BatchedArray id = LieGroupElement::identity(k, N).data();
    ident = std::max({ident, max_abs_diff(compose(k, g, id), g), max_abs_diff(compose(k, id, g), g),
                      max_abs_diff(compose(k, g, inverse(k, g)), id), max_abs_diff(compose(k, inverse(k, g), g), id),
                      max_abs_diff(inverse(k, inverse(k, g)), g),
                      max_abs_diff(compose(k, compose(k, g, h), q), compose(k, g, compose(k, h, q))),
                      max_abs_diff(inverse(k, compose(k, g, h)), compose(k, inverse(k, h), inverse(k, g)))});

    deriv = std::max(deriv, lie_derivative_error(rng, k, N));
    jump = std::max(jump, lie_branch_jump(rng, k));
  }
  const bool ok = roundtrip < 1e-9 && ident < 1e-12 && deriv < 1e-6 && jump < 1e-12;
  r.pass_fail(6, "lie_groups", ok,
              fmt("SO2/SE2/SO3/SE3, %lld samples: exp/log %.2e (<1e-9), compose/inverse %.2e (<1e-12), "
                  "derivatives vs FD %.2e (<1e-6), branch second difference %.2e (<1e-12)",
                  static_cast<long long>(N), roundtrip, ident, deriv, jump));
}

void optimizer_properties(Report& r) {
  std::mt19937_64 rng(11);
  double affine = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t B = 3;
    Objective obj;
    auto x1 = make_variable("x1", random_array(rng, {B, 2}));
    auto x2 = make_variable("x2", random_array(rng, {B, 3}));
    const BatchedArray A = random_array(rng, {B, 8, 5});
    const BatchedArray y = random_array(rng, {B, 8});
    obj.add_cost_function(make_autodiff_cost("affine", "a", {x1, x2}, {make_variable("A", A), make_variable("y", y)}, 8,
                                             AffineFn{}));
    optim::OptimizerConfig cfg;
    cfg.max_iterations = 1;
    optim::optimize(obj, cfg);
    for (std::int64_t b = 0; b < B; ++b) {
      const auto want = normal_solution(A, y, b);
      double num = 0, den = 0;
      for (int i = 0; i < 5; ++i) {
        const double got = i < 2 ? x1->value().at(b, i) : x2->value().at(b, i - 2);
        num += (got - want[static_cast<std::size_t>(i)]) * (got - want[static_cast<std::size_t>(i)]);
        den += want[static_cast<std::size_t>(i)] * want[static_cast<std::size_t>(i)];
      }
      affine = std::max(affine, std::sqrt(num / den));
    }
  }

  // Noisy Cube runs: LM never accepts an increase, Dogleg steps stay in the
  // trust region.
  bool monotone = true, in_region = true;
  int runs = 0;
  double worst_step = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    apps::CubeConfig c;
    c.num_poses = 64;
    c.batch = 4;
    c.seed = seed;
    const apps::PoseGraph g = apps::generate_cube(c);
    optim::OptimizerConfig oc;
    oc.max_iterations = 30;
    oc.method = optim::Method::LevenbergMarquardt;
    const apps::PgoResult lm = apps::pgo_solve(g, oc, {});
    oc.method = optim::Method::Dogleg;
    const apps::PgoResult dl = apps::pgo_solve(g, oc, {});
    ++runs;
    for (std::int64_t b = 0; b < g.batch; ++b) {
      double prev = lm.info.initial_objective[b];
      for (std::int64_t k = 0; k < lm.info.history.dim(1); ++k) {
        monotone &= lm.info.history.at(b, k) <= prev;
        prev = lm.info.history.at(b, k);
      }
      for (std::int64_t k = 0; k < dl.info.history.dim(1); ++k) {
        const double radius = dl.info.damping_history.at(b, k);
        if (radius <= 0) continue;
        worst_step = std::max(worst_step, dl.info.step_norm.at(b, k) / radius);
        in_region &= dl.info.step_norm.at(b, k) <= radius * (1 + 1e-12);
      }
    }
  }

  // Zero-noise Cube from a perturbed start converges to the exact fit.
  apps::CubeConfig zc;
  zc.num_poses = 64;
  zc.batch = 4;
  zc.noise_rot = zc.noise_trans = 0.0;
  zc.seed = 1;
  const apps::PoseGraph exact = apps::generate_cube(zc);
  const apps::PoseGraph zg = perturbed(exact, rng, 0.05);
  double zero_obj = 0;
  int exact_steps = 0;
  for (auto m : {optim::Method::GaussNewton, optim::Method::LevenbergMarquardt, optim::Method::Dogleg}) {
    optim::OptimizerConfig oc;
    oc.method = m;
    oc.max_iterations = 50;
    const apps::PgoResult at_truth = apps::pgo_solve(exact, oc, {});
    exact_steps = std::max(exact_steps, at_truth.info.iterations_run);
    oc.abs_tol = oc.rel_tol = 1e-14;
    const apps::PgoResult res = apps::pgo_solve(zg, oc, {});
    for (std::int64_t b = 0; b < zg.batch; ++b) {
      zero_obj = std::max({zero_obj, res.final_objective[b], at_truth.final_objective[b]});
    }
  }

  const bool ok = affine < 1e-10 && monotone && in_region && zero_obj < 1e-10;
  r.pass_fail(7, "optimizer_properties", ok,
              fmt("GN affine one-step rel %.2e (<1e-10); LM monotone on %d noisy Cube runs: %s; Dogleg max "
                  "|step|/radius %.6f (<=1); zero-noise Cube final objective %.2e (<1e-10), from ground truth %d steps",
                  affine, runs, monotone ? "yes" : "no", worst_step, zero_obj, exact_steps));
}

void vectorization(Report& r) {
  constexpr Manifold kinds[] = {Manifold::Euclidean, Manifold::SO2, Manifold::SE2, Manifold::SO3, Manifold::SE3};
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> pick(0, 4), npose(2, 7), nb(1, 4);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Objective obj;
    const Manifold m = kinds[pick(rng)];
    const std::int64_t B = nb(rng);
    const int n = npose(rng);
    std::vector<VariablePtr> p;
    for (int i = 0; i < n; ++i) p.push_back(make_variable("p" + std::to_string(i), random_pose(rng, m, B), m));
    std::uniform_int_distribution<int> node(0, n - 1);
    for (int c = 0; c < 2 * n; ++c) {
      const int i = node(rng);
      int j = node(rng);
      if (j == i) j = (i + 1) % n;
      const std::string id = std::to_string(c);
      CostPtr cost;
      if (c % 3 == 0) {
        cost = std::make_shared<Prior>("prior" + id, p[static_cast<std::size_t>(i)],
                                       make_variable("t" + id, random_pose(rng, m, B), m));
      } else {
        cost = std::make_shared<Between>("between" + id, p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)],
                                         make_variable("z" + id, random_pose(rng, m, B), m));
      }
      const std::int64_t d = p[static_cast<std::size_t>(i)]->tangent_dim();
      if (c % 2 == 0) cost->set_weight(CostWeight::diagonal(make_variable("w" + id, random_array(rng, {B, d}, 0.5, 2.0))));
      if (c % 4 == 1) cost->set_kernel(RobustKernel::welsch(make_variable("k" + id, random_array(rng, {B, 1}, 0.5, 2.0))));
      obj.add_cost_function(cost);
    }
    const ResidualEval rv = evaluate_residuals(obj);
    const auto jv = evaluate_jacobians(obj);
    obj.set_vectorize(false);
    const ResidualEval rs = evaluate_residuals(obj);
    const auto js = evaluate_jacobians(obj);
    worst = std::max({worst, max_abs_diff(rv.stacked, rs.stacked), max_abs_diff(rv.objective, rs.objective)});
    for (std::size_t c = 0; c < jv.size(); ++c) {
      for (std::size_t s = 0; s < jv[c].size(); ++s) worst = std::max(worst, max_abs_diff(jv[c][s], js[c][s]));
    }
  }
  vectorization_timing(r, worst < 1e-12,
                       fmt("50 random objectives, vectorized vs sequential max diff %.2e (<1e-12)", worst));
}

}  // namespace acceptance
