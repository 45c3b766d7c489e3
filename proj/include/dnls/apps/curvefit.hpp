// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "dnls/optim/optimizer.hpp"

namespace dnls::apps {

// Fits y = v e^x to points on [-1, 1]; y = v_true e^x plus optional noise.
struct CurveFitConfig {
  std::int64_t num_points = 50;
  double v_true = 3.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  double v_init = 1.0;
  optim::OptimizerConfig optimizer;
};

struct CurveFitResult {
  double v = 0;
  double v_oracle = 0;  // sum y e^x / sum e^2x
  double final_objective = 0;
  std::int64_t iterations = 0;
  bool converged = false;
  double elapsed_ms = 0;
};

CurveFitResult curve_fit(const CurveFitConfig& cfg);

}  // namespace dnls::apps
