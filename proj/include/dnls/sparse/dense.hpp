// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dnls/sparse/pattern.hpp"
#include "dnls/tensor/batched_array.hpp"

namespace dnls::sparse {

// LAPACK Cholesky of the densified H, one batch element after another.
struct DenseFactor {
  std::int64_t n = 0;
  std::int64_t lanes = 0;
  Buffer values;  // per lane, column-major n x n, lower triangle holds L
  std::vector<std::uint8_t> failed;
  std::uint64_t checksum = 0;

  bool any_failed() const;
};

// (B, n, n) dense copy of pattern-stored values.
BatchedArray densify(const BlockPattern& pattern, const BatchedArray& h_values);

DenseFactor dense_factorize(const BlockPattern& pattern, const BatchedArray& h_values, double pivot_tol = 1e-13);
BatchedArray dense_solve(const DenseFactor& f, const BatchedArray& b, bool zero_failed = false);
// Factorize and solve; throws FactorizationError on a non-SPD element.
BatchedArray dense_solve(const BlockPattern& pattern, const BatchedArray& h_values, const BatchedArray& b);

}  // namespace dnls::sparse
