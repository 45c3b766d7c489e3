// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <variant>
#include <vector>

#include "dnls/core/objective.hpp"
#include "dnls/sparse/cholesky.hpp"
#include "dnls/sparse/dense.hpp"
#include "dnls/sparse/pattern.hpp"
#include "dnls/sparse/symbolic.hpp"
#include "dnls/tensor/tape.hpp"

namespace dnls::sparse {

enum class DampingStyle {
  None,
  Marquardt,  // H + lambda diag(H)
  Additive,   // H + lambda I
};

struct Damping {
  DampingStyle style = DampingStyle::None;
  BatchedArray lambda;  // (B, 1) or (1, 1)
};

// H values on the pattern (B, nnz) and b = sum J^T r (B, n).
struct LinearSystem {
  BatchedArray h;
  BatchedArray b;
  Damping damping;
};

LinearSystem assemble_system(const Objective& obj, const BlockPattern& pattern, const Terms<BatchedArray>& terms,
                             const Damping& damping = {});
BatchedArray apply_damping(const BlockPattern& pattern, const BatchedArray& h, const Damping& damping);

struct VarSystem {
  Var h;
  Var b;
};
// Records assemble_H and assemble_b nodes over the linearization on a tape.
// The damping factor is a constant of the recorded graph.
VarSystem assemble_system(const Objective& obj, const BlockPattern& pattern, const Terms<Var>& terms,
                          const Damping& damping = {});

// y = H x on the pattern, (B, n).
BatchedArray matvec(const BlockPattern& pattern, const BatchedArray& h, const BatchedArray& x);
Var matvec(const BlockPattern& pattern, const Var& h, const Var& x);

enum class SolverKind { Sparse, Dense };

struct SolverOptions {
  SolverKind kind = SolverKind::Sparse;
  SymbolicOptions symbolic;
  FactorOptions factor;
};

// A computed factorization from either path, kept for later solves.
class Factorization {
 public:
  explicit Factorization(NumericFactor f) : f_(std::move(f)) {}
  explicit Factorization(DenseFactor f) : f_(std::move(f)) {}

  const std::vector<std::uint8_t>& failed() const;
  bool any_failed() const;
  std::uint64_t checksum() const;
  BatchedArray solve(const BatchedArray& b, bool zero_failed = false) const;

  const NumericFactor* sparse() const { return std::get_if<NumericFactor>(&f_); }
  const DenseFactor* dense() const { return std::get_if<DenseFactor>(&f_); }

 private:
  std::variant<NumericFactor, DenseFactor> f_;
};

using FactorPtr = std::shared_ptr<const Factorization>;

// Pattern plus (for the sparse path) its symbolic analysis, computed once.
class LinearSolver {
 public:
  LinearSolver() = default;
  LinearSolver(BlockPattern pattern, const SolverOptions& opts);
  static LinearSolver for_objective(const Objective& obj, const SolverOptions& opts = {});

  SolverKind kind() const noexcept { return opts_.kind; }
  const SolverOptions& options() const noexcept { return opts_; }
  const BlockPattern& pattern() const noexcept { return pattern_; }
  const SymbolicPtr& symbolic() const noexcept { return sym_; }

  FactorPtr factorize(const BatchedArray& h) const;
  // Factorize and solve in one call.
  BatchedArray solve(const LinearSystem& sys, bool zero_failed = false) const;

 private:
  BlockPattern pattern_;
  SolverOptions opts_;
  SymbolicPtr sym_;
};

struct SolveGrads {
  BatchedArray grad_b;  // (B, n)
  BatchedArray grad_h;  // (B, nnz)
};

// Gradients of f(y), y = H^{-1} b, from dL/dy using the cached factor: one
// substitution pass for grad_b = H^{-1} dL/dy, then grad_H = -grad_b y^T
// restricted to the stored entries ((G + G^T) / 2 when `symmetrize`).
// When debug checks are on and `h_check` is given, a factor computed from
// other values raises FactorizationError.
SolveGrads linear_solve_backward(const Factorization& f, const BlockPattern& pattern, const BatchedArray& y,
                                 const BatchedArray& grad_y, const BatchedArray* h_check = nullptr,
                                 bool symmetrize = true);

struct VarSolve {
  Var delta;
  FactorPtr factor;
};
// Records a solve node. Failed batch elements yield delta = 0 (and zero
// gradients) unless zero_failed is false, in which case the solve throws.
VarSolve solve_system(const LinearSolver& solver, const Var& h, const Var& b, bool zero_failed = true);

}  // namespace dnls::sparse
