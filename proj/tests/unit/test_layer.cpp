#include <cmath>

#include "doctest.h"
#include "dnls/layer/layer.hpp"

using namespace dnls;
using namespace dnls::layer;
using backward::BackwardMode;

namespace {

BatchedArray scalar(double v) { return BatchedArray({1, 1}, {v}); }

struct CurveFn {
  template <class T>
  T operator()(const std::vector<T>& in) const {
    return sub(in[2], scale(exp(in[1]), in[0]));
  }
};

Objective curve_objective() {
  Objective obj;
  auto v = make_variable("v", scalar(1.0));
  auto x = make_variable("x", BatchedArray({1, 2}, {0.0, 0.0}));
  auto y = make_variable("y", BatchedArray({1, 2}, {0.0, 0.0}));
  obj.add_cost_function(make_autodiff_cost("curve", "fit", {v}, {x, y}, 2, CurveFn{}));
  return obj;
}

const BatchedArray kX({1, 2}, {0.0, std::log(2.0)});
const BatchedArray kY({1, 2}, {3.0, 6.0});

}  // namespace

TEST_CASE("layer: forward") {
  DnlsLayer layer(curve_objective());
  const ForwardResult r = layer.forward({{"x", kX}, {"y", kY}});
  CHECK(std::abs(r.solution.at("v")[0] - 3.0) < 1e-9);
  CHECK(r.info.all_converged());
  CHECK_THROWS_AS(layer.forward({{"x", kX}}), Error);
  CHECK_THROWS_AS(layer.forward({{"x", kX}, {"y", kY}, {"w", kY}}), Error);
  {
    LayerConfig cfg;
    cfg.required_inputs = std::vector<std::string>{"y"};
    DnlsLayer partial(curve_objective(), cfg);
    CHECK_NOTHROW(partial.forward({{"y", kY}}));
  }
  // Already optimal start: the output equals the input.
  const ForwardResult same = layer.forward({{"x", kX}, {"y", kY}, {"v", scalar(3.0)}});
  CHECK(same.solution.at("v")[0] == 3.0);
  CHECK(same.info.iterations_run == 0);
}

TEST_CASE("layer: determinism and round trip") {
  LayerConfig cfg;
  cfg.mode = BackwardMode::implicit();
  DnlsLayer layer(curve_objective(), cfg);
  const std::map<std::string, BatchedArray> in{{"x", kX}, {"y", BatchedArray({1, 2}, {3.4, 5.7})}};
  const ForwardResult a = layer.forward(in);
  layer.backward({{"v", scalar(1.0)}});
  const ForwardResult b = layer.forward(in);
  CHECK(a.solution.at("v")[0] == b.solution.at("v")[0]);
  CHECK(max_abs_diff(a.info.history, b.info.history) == 0.0);
}

TEST_CASE("layer: backward") {
  LayerConfig cfg;
  cfg.mode = BackwardMode::implicit();
  DnlsLayer layer(curve_objective(), cfg);
  const BatchedArray y({1, 2}, {3.4, 5.7});
  layer.forward({{"x", kX}, {"y", y}});
  const backward::GradientResult g = layer.backward({{"v", scalar(1.0)}});
  // v*(x) = sum y e^x / sum e^2x, differentiated by central differences.
  auto vstar = [&](const BatchedArray& x) {
    double num = 0, den = 0;
    for (int i = 0; i < 2; ++i) {
      num += y[i] * std::exp(x[i]);
      den += std::exp(2 * x[i]);
    }
    return num / den;
  };
  for (int i = 0; i < 2; ++i) {
    BatchedArray xp = kX, xm = kX;
    xp[i] += 1e-6;
    xm[i] -= 1e-6;
    const double fd = (vstar(xp) - vstar(xm)) / 2e-6;
    CHECK(std::abs(g.at("x")[i] - fd) <= 1e-3 * std::abs(fd));
  }
  const backward::GradientResult z = layer.backward({{"v", scalar(0.0)}});
  CHECK(max_abs(z.at("x")) == 0.0);
  CHECK(max_abs(z.at("y")) == 0.0);

  layer.set_backward_mode(BackwardMode::unroll());
  CHECK_THROWS_AS(layer.backward({{"v", scalar(1.0)}}), Error);
  layer.forward({{"x", kX}, {"y", y}});
  const backward::GradientResult u = layer.backward({{"v", scalar(1.0)}});
  CHECK(std::abs(u.at("x")[0] - g.at("x")[0]) < 1e-4 * std::abs(g.at("x")[0]));

  DnlsLayer fresh(curve_objective());
  CHECK_THROWS_AS(fresh.backward({{"v", scalar(1.0)}}), Error);
}

TEST_CASE("layer: shared inputs get batch-summed gradients") {
  LayerConfig cfg;
  cfg.mode = BackwardMode::implicit();
  DnlsLayer layer(curve_objective(), cfg);
  const BatchedArray ys({3, 2}, {3.0, 6.0, 2.5, 7.0, 4.0, 4.0});
  layer.forward({{"x", kX}, {"y", ys}});
  const BatchedArray up({3, 1}, {1.0, -0.5, 2.0});
  const backward::GradientResult g = layer.backward({{"v", up}});
  CHECK(g.at("x").shape() == Shape{1, 2});
  CHECK(g.at("y").shape() == Shape{3, 2});
  double sum0 = 0;
  for (int b = 0; b < 3; ++b) {
    DnlsLayer one(curve_objective(), cfg);
    one.forward({{"x", kX}, {"y", ys.slice_batch(b)}});
    const BatchedArray gb = one.backward({{"v", scalar(up[b])}}).at("x");
    sum0 += gb[0];
  }
  CHECK(g.at("x")[0] == doctest::Approx(sum0).epsilon(1e-12));
}
