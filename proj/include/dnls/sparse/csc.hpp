// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dnls/sparse/cholesky.hpp"
#include "dnls/sparse/pattern.hpp"
#include "dnls/sparse/symbolic.hpp"

namespace dnls::sparse {

// Square compressed-column matrix, row indices sorted within each column.
struct CscMatrix {
  std::int64_t n = 0;
  std::vector<std::int64_t> colptr;
  std::vector<std::int64_t> rowidx;
  std::vector<double> values;

  std::int64_t nnz() const noexcept { return static_cast<std::int64_t>(rowidx.size()); }
  static CscMatrix from_triplets(std::int64_t n, const std::vector<std::int64_t>& rows,
                                 const std::vector<std::int64_t>& cols, const std::vector<double>& vals);
  static CscMatrix from_dense(std::int64_t n, const std::vector<double>& row_major);
  std::vector<double> to_dense() const;  // row-major
};

// Coordinate "real general" or "real symmetric" files; symmetric files hold the
// lower triangle.
CscMatrix read_matrix_market(std::istream& in);
CscMatrix read_matrix_market_file(const std::string& path);
void write_matrix_market(std::ostream& out, const CscMatrix& a, bool symmetric);

// Cholesky of a symmetric matrix given by its lower triangle (entries above
// the diagonal are ignored). Each scalar is its own block.
class SparseCholesky {
 public:
  explicit SparseCholesky(const CscMatrix& a, const SymbolicOptions& sopts = {}, const FactorOptions& fopts = {});

  // New values on the same pattern; reuses the symbolic analysis.
  void refactor(const CscMatrix& a);
  bool failed() const { return factor_.any_failed(); }
  std::vector<double> solve(const std::vector<double>& b) const;

  const BlockPattern& pattern() const noexcept { return pattern_; }
  const SymbolicFactorization& symbolic() const noexcept { return *sym_; }
  const NumericFactor& factor() const noexcept { return factor_; }
  // H values on the pattern, (1, nnz).
  BatchedArray values_of(const CscMatrix& a) const;

 private:
  BlockPattern pattern_;
  SymbolicPtr sym_;
  FactorOptions fopts_;
  NumericFactor factor_;
  std::vector<std::int64_t> lower_colptr_;
  std::vector<std::int64_t> lower_rowidx_;
};

}  // namespace dnls::sparse
