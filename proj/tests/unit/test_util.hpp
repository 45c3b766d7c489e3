#pragma once

#include <random>

#include "dnls/tensor/batched_array.hpp"

namespace testutil {

inline dnls::BatchedArray random_array(std::mt19937_64& rng, dnls::Shape shape, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  dnls::BatchedArray a(std::move(shape));
  for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = u(rng);
  return a;
}

}  // namespace testutil
