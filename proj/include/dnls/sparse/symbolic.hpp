// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dnls/sparse/pattern.hpp"

namespace dnls::sparse {

enum class Ordering {
  MinDegree,  // minimum (scalar) degree on the block graph, lowest index on ties
  Identity,
};

struct SymbolicOptions {
  Ordering ordering = Ordering::MinDegree;
  // Merge block column k into its parent k + 1 when the scalar structure of
  // column k covers at least this fraction of the parent's. <= 0 disables the
  // relative test (always merge chains), > 1 disables merging.
  double merge_threshold = 0.8;
  bool merge = true;
};

// Dense panel of consecutive L columns sharing one row structure. The panel
// is stored column-major with `rows.size()` rows; the first `width` rows are
// the panel's own columns.
struct Supernode {
  int first_block = 0;
  int end_block = 0;
  std::int64_t col0 = 0;
  std::int64_t width = 0;
  std::vector<std::int64_t> rows;  // permuted scalar indices
  std::int64_t offset = 0;         // first entry in the panel value array
};

// Rows [row_begin, row_end) of supernode `source` fall into the columns of the
// supernode that lists this update.
struct PanelUpdate {
  int source = 0;
  std::int64_t row_begin = 0;
  std::int64_t row_end = 0;
};

struct SymbolicFactorization {
  // Block level; position k of the elimination holds original block perm[k].
  std::vector<int> perm;
  std::vector<int> iperm;
  std::vector<int> parent;                // block elimination tree, -1 for roots
  std::vector<std::vector<int>> lblocks;  // sorted block rows below the diagonal of L column k
  std::vector<std::int64_t> pdim;         // permuted block dims
  std::vector<std::int64_t> poff;         // permuted block offsets

  // Scalar level, permuted indices.
  std::int64_t n = 0;
  std::vector<std::int64_t> scalar_perm;   // permuted -> original scalar index
  std::vector<std::int64_t> scalar_iperm;  // original -> permuted
  std::vector<std::int64_t> sparent;       // scalar elimination tree
  std::vector<std::int64_t> Lp;            // column pointers of L, diagonal first
  std::vector<std::int64_t> Li;
  std::vector<std::int64_t> col_counts;

  // Upper triangle of C = P H P^T by column (rows <= col), for the up-looking
  // factorization, and the lower triangle (rows >= col) for panel loading.
  // Cv holds the H value index.
  std::vector<std::int64_t> Up, Ui, Uv;
  std::vector<std::int64_t> Cp, Ci, Cv;

  std::vector<Supernode> supernodes;
  std::vector<int> col_super;  // permuted scalar column -> supernode
  std::vector<std::vector<PanelUpdate>> updates;
  std::int64_t panel_size = 0;

  std::int64_t nnz_h = 0;  // stored entries of the full symmetric H
  std::int64_t dim() const noexcept { return n; }
  std::int64_t nnz_l() const noexcept { return static_cast<std::int64_t>(Li.size()); }
  // Structural entries of L that are absent from the lower triangle of P H P^T.
  std::int64_t fill_in = 0;
  std::uint64_t pattern_hash = 0;
};

using SymbolicPtr = std::shared_ptr<const SymbolicFactorization>;

// Fill-reducing block order (perm[k] = original block).
std::vector<int> min_degree_order(const BlockPattern& pattern);

SymbolicPtr symbolic_analyze(const BlockPattern& pattern, const SymbolicOptions& opts = {});
// Same with a caller-supplied block order.
SymbolicPtr symbolic_analyze(const BlockPattern& pattern, const std::vector<int>& block_perm,
                             const SymbolicOptions& opts = {});

std::uint64_t pattern_hash(const BlockPattern& pattern);

}  // namespace dnls::sparse
