#include <cmath>
#include <random>

#include "doctest.h"
#include "dnls/core/objective.hpp"
#include "dnls/error.hpp"
#include "test_util.hpp"

using namespace dnls;

namespace {

BatchedArray scalar(double v) { return BatchedArray({1, 1}, {v}); }

// Residual y - v exp(x) of the exponential curve model; in = {v, x, y}.
struct CurveFn {
  template <class T>
  T operator()(const std::vector<T>& in) const {
    return sub(in[2], scale(exp(in[1]), in[0]));
  }
};

Objective curve_objective() {
  Objective obj;
  auto v = make_variable("v", scalar(1.0));
  auto x = make_variable("x", BatchedArray({1, 2}, {0.0, std::log(2.0)}));
  auto y = make_variable("y", BatchedArray({1, 2}, {3.0, 6.0}));
  obj.add_cost_function(make_autodiff_cost("curve", "fit", {v}, {x, y}, 2, CurveFn{}));
  return obj;
}

// Central-difference Jacobian of cost i's reported residual with respect to
// optimization slot s, through the objective's own evaluation path.
BatchedArray fd_cost_jacobian(Objective& obj, std::size_t i, std::size_t s) {
  const VariablePtr v = obj.cost(i)->optim_vars()[s];
  const BatchedArray x0 = v->value();
  LeafSpec spec = group_of(v->kind()) ? lie::leaf_spec(*group_of(v->kind()), x0) : euclidean_leaf(x0);
  auto fd = finite_diff_jacobian(
      [&](const std::vector<BatchedArray>& in) {
        obj.update_inputs({{v->name(), in[0]}});
        return evaluate_residuals(obj).per_cost[i];
      },
      {spec}, {0});
  obj.update_inputs({{v->name(), x0}});
  return fd[0];
}

BatchedArray random_pose(std::mt19937_64& rng, Manifold m, std::int64_t batch) {
  const auto g = group_of(m);
  if (!g) return testutil::random_array(rng, {batch, 3});
  return lie::exp_map(*g, testutil::random_array(rng, {batch, lie::tangent_dim(*g)}, -1.0, 1.0));
}

// Analytic Jacobian deliberately off by a factor of 2.
struct Wrong : GenericCost<Wrong> {
  static constexpr bool kAnalytic = true;
  using GenericCost<Wrong>::GenericCost;
  std::string type_key() const override { return "Wrong"; }
  template <class T>
  T error_impl(const std::vector<T>& in) const {
    return mul(in[0], in[0]);
  }
  template <class T>
  std::vector<T> jacobian_impl(const std::vector<T>& in, T* err) const {
    if (err) *err = error_impl(in);
    return {reshape(in[0], Shape{1, 1})};  // should be 2 x
  }
};

constexpr Manifold kKinds[] = {Manifold::Euclidean, Manifold::SO2, Manifold::SE2, Manifold::SO3, Manifold::SE3};

}  // namespace

TEST_CASE("objective: documented values") {
  {
    Objective obj;
    auto th = make_variable("theta", scalar(0.0));
    obj.add_cost_function(std::make_shared<Prior>("p", th, make_variable("target", scalar(5.0))));
    CHECK(obj.num_costs() == 1);
    CHECK(obj.optim_vars().size() == 1);
    const ResidualEval r = evaluate_residuals(obj);
    CHECK(r.stacked[0] == -5.0);
    CHECK(r.objective[0] == 12.5);
    CHECK(evaluate_jacobians(obj)[0][0][0] == 1.0);
  }
  {
    Objective obj = curve_objective();
    const ResidualEval r = evaluate_residuals(obj);
    CHECK(r.stacked.at(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(r.stacked.at(0, 1) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(r.objective[0] == doctest::Approx(10.0).epsilon(1e-15));
    const BatchedArray J = evaluate_jacobians(obj)[0][0];
    CHECK(J.shape() == Shape{1, 2, 1});
    CHECK(J[0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(J[1] == doctest::Approx(-2.0).epsilon(1e-15));
  }
  {
    Objective obj;
    auto th = make_variable("theta", scalar(0.0));
    auto c = std::make_shared<Prior>("p", th, make_variable("target", scalar(5.0)));
    c->set_weight(CostWeight::scale(make_variable("w", scalar(2.0))));
    obj.add_cost_function(c);
    const ResidualEval r = evaluate_residuals(obj);
    CHECK(r.stacked[0] == -10.0);
    CHECK(r.objective[0] == 50.0);
  }
  {
    // SE2 prior at its target: zero error and identity Jacobian.
    Objective obj;
    const BatchedArray g = lie::exp_map(lie::Group::SE2, BatchedArray({1, 3}, {0.4, -1.0, 0.7}));
    obj.add_cost_function(std::make_shared<Prior>("p", make_variable("x", g, Manifold::SE2),
                                                  make_variable("t", g, Manifold::SE2)));
    CHECK(max_abs(evaluate_residuals(obj).stacked) == 0.0);
    CHECK(max_abs_diff(evaluate_jacobians(obj)[0][0], BatchedArray::identity(1, 3)) < 1e-15);
  }
}

TEST_CASE("objective: registration and inputs") {
  Objective obj;
  auto p0 = make_variable("p0", BatchedArray::identity(1, 2), Manifold::SO2);
  auto p1 = make_variable("p1", BatchedArray::identity(1, 2), Manifold::SO2);
  auto p2 = make_variable("p2", BatchedArray::identity(1, 2), Manifold::SO2);
  auto z = [&](const char* n) { return make_variable(n, BatchedArray::identity(1, 2), Manifold::SO2); };
  obj.add_cost_function(std::make_shared<Between>("e01", p0, p1, z("z01")));
  obj.add_cost_function(std::make_shared<Between>("e12", p1, p2, z("z12")));
  CHECK(obj.optim_vars().size() == 3);
  CHECK(obj.slots(0).optim[1] == *obj.optim_index("p1"));
  CHECK(obj.slots(1).optim[0] == *obj.optim_index("p1"));

  // Same name, different kind.
  auto bad = make_variable("p1", BatchedArray({1, 3}));
  CHECK_THROWS_AS(obj.add_cost_function(std::make_shared<Prior>("bad", bad, make_variable("t", BatchedArray({1, 3})))),
                  Error);
  CHECK(obj.num_costs() == 2);
  // An auxiliary name reused as optimization variable.
  CHECK_THROWS_AS(obj.add_cost_function(std::make_shared<Prior>("bad2", z("z01"), z("zz"))), Error);
  // Same-name variables are unified.
  auto p1_again = make_variable("p1", BatchedArray::identity(1, 2), Manifold::SO2);
  obj.add_cost_function(std::make_shared<Prior>("anchor", p1_again, z("zp")));
  CHECK(obj.cost(2)->optim_vars()[0] == obj.variable("p1"));

  CHECK_THROWS_AS(obj.update_inputs({{"unknown", BatchedArray({1, 1})}}), Error);
  CHECK_THROWS_AS(obj.update_inputs({{"p0", BatchedArray({1, 3})}}), ShapeError);

  Objective c = curve_objective();
  c.update_inputs({{"v", BatchedArray({1, 1}, {1.0})}});
  CHECK(c.variable("v")->value()[0] == 1.0);
  c.update_inputs({{"y", BatchedArray({8, 2}, 3.0)}});
  CHECK(c.batch_size() == 8);
  CHECK(c.variable("v")->value().batch() == 8);
  CHECK(c.variable("x")->value().batch() == 8);
  // The batch can shrink again once the batched payload is replaced.
  c.update_inputs({{"y", BatchedArray({1, 2}, {3.0, 6.0})}});
  CHECK(c.batch_size() == 1);
  CHECK(evaluate_residuals(c).objective[0] == doctest::Approx(10.0));
}

TEST_CASE("objective: non-finite residuals name the cost") {
  Objective obj = curve_objective();
  obj.update_inputs({{"x", BatchedArray({1, 2}, {0.0, 1000.0})}});
  try {
    (void)evaluate_residuals(obj);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("'fit'") != std::string::npos);
  }
}

TEST_CASE("robust kernels") {
  const BatchedArray one = scalar(1.0);
  const auto none = robust_rescale(RobustKernel::Kind::None, BatchedArray({3, 1}, {0.0, 1.0, 7.0}), one);
  for (int i = 0; i < 3; ++i) CHECK(none.kappa[i] == 1.0);

  const auto w = robust_rescale(RobustKernel::Kind::Welsch, one, one);
  CHECK(w.rho[0] == doctest::Approx(0.5 * (1.0 - std::exp(-1.0))).epsilon(1e-15));
  CHECK(w.rho[0] == doctest::Approx(0.31606).epsilon(1e-5));
  CHECK(w.kappa[0] == doctest::Approx(std::sqrt(1.0 - std::exp(-1.0))).epsilon(1e-15));
  CHECK(w.kappa[0] == doctest::Approx(0.795060).epsilon(1e-6));

  const auto w0 = robust_rescale(RobustKernel::Kind::Welsch, BatchedArray({2, 1}, {0.0, 1e-14}), scalar(0.7));
  CHECK(w0.kappa[0] == 1.0);
  CHECK(w0.kappa[1] == doctest::Approx(1.0).epsilon(1e-13));

  CHECK_THROWS_AS(robust_rescale(RobustKernel::Kind::Welsch, one, scalar(0.0)), Error);
  CHECK_THROWS_AS(robust_rescale(RobustKernel::Kind::Huber, one, scalar(-1.0)), Error);
  CHECK_THROWS_AS(RobustKernel::welsch(make_variable("k", scalar(-2.0))), Error);

  for (auto kind : {RobustKernel::Kind::Huber, RobustKernel::Kind::Welsch}) {
    CAPTURE(std::string(kernel_kind_name(kind)));
    const BatchedArray k = scalar(0.8);
    // Sample both sides of every branch switch.
    std::vector<double> ss;
    for (double s = 0.0; s < 6.0; s += 0.013) ss.push_back(s);
    for (double s : {0.05, 0.064, 0.0639, 0.0641, 0.07, 0.2}) ss.push_back(s);
    BatchedArray s({static_cast<std::int64_t>(ss.size()), 1}, std::span<const double>(ss));
    const auto r = robust_rescale(kind, s, k);
    // 1/2 |kappa r|^2 = rho with s = |r|^2.
    for (std::int64_t i = 0; i < s.batch(); ++i) {
      CHECK(0.5 * r.kappa[i] * r.kappa[i] * s[i] == doctest::Approx(r.rho[i]).epsilon(1e-13));
    }
    // rho nondecreasing, Welsch bounded by k^2 / 2.
    std::vector<std::pair<double, double>> pts;
    for (std::int64_t i = 0; i < s.batch(); ++i) pts.push_back({s[i], r.rho[i]});
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 1; i < pts.size(); ++i) CHECK(pts[i].second >= pts[i - 1].second);
    if (kind == RobustKernel::Kind::Welsch) {
      for (std::int64_t i = 0; i < s.batch(); ++i) CHECK(r.rho[i] <= 0.32);
    }
    // d kappa / d s against central differences away from s = 0.
    for (std::int64_t i = 1; i < s.batch(); ++i) {
      const double si = s[i];
      if (si < 1e-3 || std::abs(si - 0.64) < 1e-3) continue;
      const double h = 1e-6;
      const double fd = (robust_rescale(kind, scalar(si + h), k).kappa[0] - robust_rescale(kind, scalar(si - h), k).kappa[0]) /
                        (2 * h);
      CHECK(std::abs(fd - r.dkappa_ds[i]) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("standard costs: Jacobians match finite differences") {
  std::mt19937_64 rng(21);
  for (Manifold m : kKinds) {
    CAPTURE(std::string(manifold_name(m)));
    for (int variant = 0; variant < 4; ++variant) {
      CAPTURE(variant);
      Objective obj;
      const std::int64_t B = 3;
      auto a = make_variable("a", random_pose(rng, m, B), m);
      auto b = make_variable("b", random_pose(rng, m, B), m);
      auto z = make_variable("z", random_pose(rng, m, B), m);
      auto t = make_variable("t", random_pose(rng, m, B), m);
      auto between = std::make_shared<Between>("between", a, b, z);
      auto prior = std::make_shared<Prior>("prior", a, t);
      const std::int64_t d = a->tangent_dim();
      if (variant >= 1) between->set_weight(CostWeight::diagonal(make_variable("wd", testutil::random_array(rng, {B, d}, 0.5, 2.0))));
      if (variant >= 1) prior->set_weight(CostWeight::scale(make_variable("ws", testutil::random_array(rng, {B, 1}, 0.5, 2.0))));
      if (variant == 2) between->set_kernel(RobustKernel::welsch(make_variable("kw", scalar(0.9))));
      if (variant == 3) between->set_kernel(RobustKernel::huber(make_variable("kh", scalar(0.3))));
      if (variant >= 2) prior->set_kernel(RobustKernel::welsch(make_variable("kp", scalar(1.5))));
      obj.add_cost_function(between);
      obj.add_cost_function(prior);
      obj.set_jacobian_self_check(true);

      const auto J = evaluate_jacobians(obj, JacobianMode::Chain);
      for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t s = 0; s < obj.cost(i)->optim_vars().size(); ++s) {
          const BatchedArray fd = fd_cost_jacobian(obj, i, s);
          CHECK(rel_error(J[i][s], fd, 1e-8) < 1e-6);
        }
      }

      // The IRLS linearization reproduces the exact gradient of S.
      const auto Jl = evaluate_jacobians(obj, JacobianMode::Irls);
      const Terms<BatchedArray> terms = linearize(obj, current_values(obj));
      for (const std::string name : {"a", "b"}) {
        const VariablePtr v = obj.variable(name);
        BatchedArray grad({B, d});
        for (const auto& gt : terms.groups) {
          const CostGroup& g = obj.schedule()[gt.group];
          for (std::size_t mm = 0; mm < g.costs.size(); ++mm) {
            const std::size_t ci = g.costs[mm];
            for (std::size_t s = 0; s < obj.slots(ci).optim.size(); ++s) {
              if (obj.optim_vars()[obj.slots(ci).optim[s]] != v) continue;
              const BatchedArray r = group_member(gt.residual, mm, B);
              const BatchedArray jt = transpose(Jl[ci][s]);
              grad = add(grad, reshape(matmul(jt, reshape(r, {obj.cost(ci)->dim(), 1})), {d}));
            }
          }
        }
        const BatchedArray x0 = v->value();
        LeafSpec spec = group_of(m) ? lie::leaf_spec(*group_of(m), x0) : euclidean_leaf(x0);
        auto fd = finite_diff_jacobian(
            [&](const std::vector<BatchedArray>& in) {
              obj.update_inputs({{name, in[0]}});
              return objective_value(obj);
            },
            {spec}, {0});
        obj.update_inputs({{name, x0}});
        CHECK(rel_error(reshape(grad, {1, d}), fd[0], 1e-8) < 1e-6);
      }
    }
  }
}

TEST_CASE("objective: analytic self-check catches wrong Jacobians") {
  Objective obj;
  obj.add_cost_function(std::make_shared<Wrong>("wrong", std::vector<VariablePtr>{make_variable("x", scalar(3.0))},
                                                std::vector<VariablePtr>{}, 1));
  CHECK_NOTHROW(evaluate_jacobians(obj));
  obj.set_jacobian_self_check(true);
  CHECK_THROWS_AS(evaluate_jacobians(obj), Error);
}

TEST_CASE("objective: vectorization schedule") {
  std::mt19937_64 rng(22);
  Objective obj;
  std::vector<VariablePtr> p;
  for (int i = 0; i < 4; ++i) p.push_back(make_variable("p" + std::to_string(i), random_pose(rng, Manifold::SE2, 1), Manifold::SE2));
  for (int i = 0; i < 3; ++i) {
    obj.add_cost_function(std::make_shared<Between>("e" + std::to_string(i), p[i], p[i + 1],
                                                    make_variable("z" + std::to_string(i), random_pose(rng, Manifold::SE2, 1), Manifold::SE2)));
  }
  CHECK(obj.schedule().size() == 1);
  const ResidualEval vec = evaluate_residuals(obj);
  obj.set_vectorize(false);
  CHECK(obj.schedule().size() == 3);
  const ResidualEval seq = evaluate_residuals(obj);
  CHECK(max_abs_diff(vec.stacked, seq.stacked) < 1e-12);
  obj.set_vectorize(true);
  obj.add_cost_function(std::make_shared<Prior>("anchor", p[0], make_variable("t", random_pose(rng, Manifold::SE2, 1), Manifold::SE2)));
  CHECK(obj.schedule().size() == 2);

  Objective two;
  two.add_cost_function(std::make_shared<Prior>("p1", make_variable("a", scalar(1.0)), make_variable("ta", scalar(0.0))));
  two.add_cost_function(std::make_shared<Prior>("p2", make_variable("b", scalar(2.0)), make_variable("tb", scalar(0.0))));
  CHECK(two.schedule().size() == 1);
  CHECK(evaluate_residuals(two).stacked == BatchedArray({1, 2}, {1.0, 2.0}));
  two.set_vectorize(false);
  CHECK(evaluate_residuals(two).stacked == BatchedArray({1, 2}, {1.0, 2.0}));
}

TEST_CASE("objective: vectorized equals sequential on random objectives") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> pick(0, 4), npose(2, 7), nb(1, 4);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Objective obj;
    const Manifold m = kKinds[pick(rng)];
    const std::int64_t B = nb(rng);
    const int n = npose(rng);
    std::vector<VariablePtr> p;
    for (int i = 0; i < n; ++i) p.push_back(make_variable("p" + std::to_string(i), random_pose(rng, m, B), m));
    std::uniform_int_distribution<int> node(0, n - 1);
    const int ncost = 2 * n;
    for (int c = 0; c < ncost; ++c) {
      const int i = node(rng);
      int j = node(rng);
      if (j == i) j = (i + 1) % n;
      const std::string id = std::to_string(c);
      CostPtr cost;
      if (c % 3 == 0) cost = std::make_shared<Prior>("prior" + id, p[i], make_variable("t" + id, random_pose(rng, m, B), m));
      else cost = std::make_shared<Between>("between" + id, p[i], p[j], make_variable("z" + id, random_pose(rng, m, B), m));
      const std::int64_t d = p[i]->tangent_dim();
      if (c % 2 == 0) cost->set_weight(CostWeight::diagonal(make_variable("w" + id, testutil::random_array(rng, {B, d}, 0.5, 2.0))));
      if (c % 4 == 1) cost->set_kernel(RobustKernel::welsch(make_variable("k" + id, testutil::random_array(rng, {B, 1}, 0.5, 2.0))));
      obj.add_cost_function(cost);
    }
    const ResidualEval rv = evaluate_residuals(obj);
    const auto jv = evaluate_jacobians(obj);
    obj.set_vectorize(false);
    const ResidualEval rs = evaluate_residuals(obj);
    const auto js = evaluate_jacobians(obj);
    worst = std::max(worst, max_abs_diff(rv.stacked, rs.stacked));
    worst = std::max(worst, max_abs_diff(rv.objective, rs.objective));
    for (std::size_t c = 0; c < jv.size(); ++c) {
      for (std::size_t s = 0; s < jv[c].size(); ++s) worst = std::max(worst, max_abs_diff(jv[c][s], js[c][s]));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("objective: weight linearity and Between frame invariance") {
  std::mt19937_64 rng(24);
  Objective obj;
  auto a = make_variable("a", random_pose(rng, Manifold::SE3, 4), Manifold::SE3);
  auto b = make_variable("b", random_pose(rng, Manifold::SE3, 4), Manifold::SE3);
  auto z = make_variable("z", random_pose(rng, Manifold::SE3, 4), Manifold::SE3);
  auto c = std::make_shared<Between>("e", a, b, z);
  c->set_weight(CostWeight::scale(make_variable("w", scalar(1.5))));
  obj.add_cost_function(c);
  const BatchedArray s1 = objective_value(obj);
  obj.update_inputs({{"w", scalar(3.0)}});
  const BatchedArray s2 = objective_value(obj);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(s2[i] == 4.0 * s1[i]);

  const BatchedArray r0 = evaluate_residuals(obj).stacked;
  const BatchedArray T = random_pose(rng, Manifold::SE3, 1);
  obj.update_inputs({{"a", lie::compose(lie::Group::SE3, T, a->value())}, {"b", lie::compose(lie::Group::SE3, T, b->value())}});
  const BatchedArray r1 = evaluate_residuals(obj).stacked;
  for (std::int64_t i = 0; i < 4; ++i) {
    double n0 = 0, n1 = 0;
    for (std::int64_t j = 0; j < 6; ++j) {
      n0 += r0.at(i, j) * r0.at(i, j);
      n1 += r1.at(i, j) * r1.at(i, j);
    }
    CHECK(std::abs(std::sqrt(n0) - std::sqrt(n1)) < 1e-10);
  }
}

TEST_CASE("objective: recorded linearization equals plain values") {
  std::mt19937_64 rng(25);
  Objective obj;
  auto a = make_variable("a", random_pose(rng, Manifold::SE2, 2), Manifold::SE2);
  auto b = make_variable("b", random_pose(rng, Manifold::SE2, 2), Manifold::SE2);
  auto c = std::make_shared<Between>("e", a, b, make_variable("z", random_pose(rng, Manifold::SE2, 2), Manifold::SE2));
  c->set_kernel(RobustKernel::welsch(make_variable("k", scalar(0.5))));
  obj.add_cost_function(c);
  obj.add_cost_function(make_autodiff_cost("curve", "fit", {make_variable("v", BatchedArray({2, 1}, {1.0, 2.0}))},
                                           {make_variable("x", BatchedArray({1, 2}, {0.1, 0.2})),
                                            make_variable("y", BatchedArray({1, 2}, {1.0, 3.0}))},
                                           2, CurveFn{}));
  const Terms<BatchedArray> plain = linearize(obj, current_values(obj));
  Tape tape;
  VarValues<Var> vv;
  for (const auto& v : obj.optim_vars()) vv.optim.push_back(tape.leaf(v->name(), v->value()));
  for (const auto& v : obj.aux_vars()) vv.aux.push_back(tape.leaf(v->name(), v->value()));
  const Terms<Var> rec = linearize(obj, vv);
  CHECK(max_abs_diff(rec.objective.value(), plain.objective) == 0.0);
  for (std::size_t g = 0; g < plain.groups.size(); ++g) {
    CHECK(max_abs_diff(rec.groups[g].residual.value(), plain.groups[g].residual) == 0.0);
    for (std::size_t s = 0; s < plain.groups[g].jac.size(); ++s) {
      CHECK(max_abs_diff(rec.groups[g].jac[s].value(), plain.groups[g].jac[s]) == 0.0);
    }
  }
  // Gradient of S with respect to the kernel radius through the tape.
  const auto res = tape.backward({{rec.objective, BatchedArray({2, 1}, 1.0)}});
  const double h = 1e-6;
  obj.update_inputs({{"k", scalar(0.5 + h)}});
  const BatchedArray sp = objective_value(obj);
  obj.update_inputs({{"k", scalar(0.5 - h)}});
  const BatchedArray sm = objective_value(obj);
  const double fd = (sp[0] + sp[1] - sm[0] - sm[1]) / (2 * h);
  REQUIRE(res.grad("k") != nullptr);
  // k was broadcast to both rows, so the scalar derivative is the row sum.
  const BatchedArray& gk = *res.grad("k");
  CHECK(gk[0] + gk[1] == doctest::Approx(fd).epsilon(1e-7));
}
