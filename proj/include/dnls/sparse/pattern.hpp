// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace dnls {
class Objective;
}

namespace dnls::sparse {

// Block sparsity of H = sum J^T J. Every optimization variable owns one block
// row/column of its tangent dimension; cost i couples all of its variables.
//
// Values live in a scalar compressed-column layout of the full symmetric
// matrix (both triangles stored). Within a column the rows of one block are
// contiguous, so entry (block rb, block cb, i, j) sits at
//   colptr[offset[cb] + j] + block_pos(rb, cb) + i.
class BlockPattern {
 public:
  BlockPattern() = default;

  static BlockPattern from_blocks(std::vector<std::int64_t> block_dims, const std::vector<std::pair<int, int>>& edges);
  static BlockPattern from_objective(const Objective& obj);

  std::int64_t num_blocks() const noexcept { return static_cast<std::int64_t>(dims_.size()); }
  std::int64_t dim() const noexcept { return dim_; }
  std::int64_t nnz() const noexcept { return static_cast<std::int64_t>(rowidx_.size()); }
  std::int64_t block_dim(int b) const { return dims_.at(static_cast<std::size_t>(b)); }
  std::int64_t block_offset(int b) const { return offsets_.at(static_cast<std::size_t>(b)); }
  const std::vector<std::int64_t>& block_dims() const noexcept { return dims_; }
  // Sorted block rows of block column c, including c.
  const std::vector<int>& adjacency(int c) const { return adj_.at(static_cast<std::size_t>(c)); }

  const std::vector<std::int64_t>& colptr() const noexcept { return colptr_; }
  const std::vector<std::int64_t>& rowidx() const noexcept { return rowidx_; }

  bool has_block(int rb, int cb) const;
  // Row offset of block rb inside each scalar column of block cb; throws if
  // the block is not in the pattern.
  std::int64_t block_pos(int rb, int cb) const;
  std::int64_t entry(int rb, int cb, std::int64_t i, std::int64_t j) const {
    return colptr_[static_cast<std::size_t>(offsets_[static_cast<std::size_t>(cb)] + j)] + block_pos(rb, cb) + i;
  }
  // Value index of scalar (i, j) or -1.
  std::int64_t find(std::int64_t i, std::int64_t j) const;
  // Value indices of the scalar diagonal, in order.
  const std::vector<std::int64_t>& diagonal() const noexcept { return diag_; }

  bool operator==(const BlockPattern& o) const {
    return dims_ == o.dims_ && colptr_ == o.colptr_ && rowidx_ == o.rowidx_;
  }

 private:
  void build();

  std::vector<std::int64_t> dims_;
  std::vector<std::int64_t> offsets_;
  std::int64_t dim_ = 0;
  std::vector<std::vector<int>> adj_;
  std::vector<std::vector<std::int64_t>> adj_pos_;
  std::vector<std::int64_t> colptr_;
  std::vector<std::int64_t> rowidx_;
  std::vector<std::int64_t> diag_;
  std::vector<int> block_of_;  // scalar index -> block
};

}  // namespace dnls::sparse
