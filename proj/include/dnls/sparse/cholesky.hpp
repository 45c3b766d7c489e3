// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dnls/sparse/symbolic.hpp"
#include "dnls/tensor/batched_array.hpp"

namespace dnls::sparse {

enum class FactorMethod {
  Supernodal,  // left-looking over dense panels
  Simplicial,  // up-looking, row by row
};

struct FactorOptions {
  FactorMethod method = FactorMethod::Supernodal;
  // A pivot below pivot_tol * max(diag H) marks the batch element failed.
  double pivot_tol = 1e-13;
};

// Batched Cholesky factor L L^T = P H P^T. Values are stored lane-inner:
// every structural entry holds one value per batch element.
struct NumericFactor {
  SymbolicPtr symbolic;
  FactorMethod method = FactorMethod::Supernodal;
  std::int64_t lanes = 0;
  Buffer values;
  std::vector<std::uint8_t> failed;
  std::uint64_t checksum = 0;  // of the H values it was computed from

  bool any_failed() const;
  std::int64_t num_failed() const;
  // L on the simplicial structure (symbolic->Lp / Li), shape (B, nnz(L)).
  BatchedArray l_values() const;
  // Diagonal of L, (B, n), permuted order.
  BatchedArray diagonal() const;
  // Entry L(i, j) of batch element b in permuted indices (0 outside the structure).
  double l_entry(std::int64_t b, std::int64_t i, std::int64_t j) const;
};

NumericFactor numeric_factorize(const SymbolicPtr& sym, const BatchedArray& h_values, const FactorOptions& opts = {});

struct SolveOptions {
  // Return zeros for failed batch elements instead of throwing.
  bool zero_failed = false;
};

// x = H^{-1} b for every batch element; b is (B, n) in the original order.
BatchedArray solve(const NumericFactor& f, const BatchedArray& b, const SolveOptions& opts = {});

// Fingerprint of an H value array, used for stale-factor detection.
std::uint64_t values_checksum(const BatchedArray& h_values);

// Number of numeric factorizations and substitution passes since the last
// reset, across sparse and dense paths.
struct Counters {
  std::uint64_t factorizations = 0;
  std::uint64_t solves = 0;
};
Counters counters() noexcept;
void reset_counters() noexcept;
void count_factorization() noexcept;
void count_solve() noexcept;

// Extra consistency checks (stale factors). On by default in debug builds.
void set_debug_checks(bool on) noexcept;
bool debug_checks() noexcept;

}  // namespace dnls::sparse
