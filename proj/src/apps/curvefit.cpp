// SPDX-License-Identifier: Apache-2.0
#include "dnls/apps/curvefit.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "dnls/core/objective.hpp"

namespace dnls::apps {

namespace {

struct ExpResidual {
  template <class T>
  T operator()(const std::vector<T>& in) const {
    return sub(in[2], scale(exp(in[1]), in[0]));
  }
};

}  // namespace

CurveFitResult curve_fit(const CurveFitConfig& cfg) {
  if (cfg.num_points < 1) throw Error("curvefit: need at least one point");
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t n = cfg.num_points;
  BatchedArray x({1, n}), y({1, n});
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::int64_t i = 0; i < n; ++i) {
    x[i] = n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    y[i] = cfg.v_true * std::exp(x[i]) + (cfg.noise > 0 ? cfg.noise * gauss(rng) : 0.0);
  }
  Objective obj;
  auto v = make_variable("v", BatchedArray({1, 1}, {cfg.v_init}));
  obj.add_cost_function(make_autodiff_cost("exp_curve", "fit", {v}, {make_variable("x", x), make_variable("y", y)}, n,
                                           ExpResidual{}));
  const optim::OptimizerInfo info = optim::optimize(obj, cfg.optimizer);

  CurveFitResult r;
  r.v = obj.variable("v")->value()[0];
  double num = 0, den = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    num += y[i] * std::exp(x[i]);
    den += std::exp(2 * x[i]);
  }
  r.v_oracle = num / den;
  r.final_objective = info.final_objective[0];
  r.iterations = info.iterations.empty() ? 0 : info.iterations[0];
  r.converged = info.all_converged();
  r.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace dnls::apps
