// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "dnls/tensor/batched_array.hpp"

namespace dnls::apps {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  BatchedArray m;  // moments, shaped like the parameters once started
  BatchedArray v;
};

// Bias-corrected Adam step; returns the new parameters.
BatchedArray adam_update(AdamState& state, const BatchedArray& params, const BatchedArray& grads);

}  // namespace dnls::apps
