// SPDX-License-Identifier: Apache-2.0
#include "dnls/sparse/pattern.hpp"

#include <algorithm>
#include <string>

#include "dnls/core/objective.hpp"
#include "dnls/error.hpp"

namespace dnls::sparse {

BlockPattern BlockPattern::from_blocks(std::vector<std::int64_t> block_dims,
                                       const std::vector<std::pair<int, int>>& edges) {
  BlockPattern p;
  p.dims_ = std::move(block_dims);
  const int n = static_cast<int>(p.dims_.size());
  for (std::int64_t d : p.dims_) {
    if (d <= 0) throw Error("BlockPattern: block dimensions must be positive");
  }
  p.adj_.assign(static_cast<std::size_t>(n), {});
  for (int c = 0; c < n; ++c) p.adj_[static_cast<std::size_t>(c)].push_back(c);
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) {
      throw Error("BlockPattern: edge (" + std::to_string(a) + ", " + std::to_string(b) + ") out of range");
    }
    p.adj_[static_cast<std::size_t>(a)].push_back(b);
    p.adj_[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& a : p.adj_) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  p.build();
  return p;
}

BlockPattern BlockPattern::from_objective(const Objective& obj) {
  std::vector<std::int64_t> dims;
  for (const auto& v : obj.optim_vars()) dims.push_back(v->tangent_dim());
  std::vector<std::pair<int, int>> edges;
  for (std::size_t i = 0; i < obj.num_costs(); ++i) {
    const auto& s = obj.slots(i).optim;
    for (std::size_t a = 0; a < s.size(); ++a) {
      for (std::size_t b = a + 1; b < s.size(); ++b) edges.emplace_back(s[a], s[b]);
    }
  }
  return from_blocks(std::move(dims), edges);
}

void BlockPattern::build() {
  const std::size_t n = dims_.size();
  offsets_.assign(n, 0);
  dim_ = 0;
  for (std::size_t b = 0; b < n; ++b) {
    offsets_[b] = dim_;
    dim_ += dims_[b];
  }
  block_of_.assign(static_cast<std::size_t>(dim_), 0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < dims_[b]; ++i) block_of_[static_cast<std::size_t>(offsets_[b] + i)] = static_cast<int>(b);
  }
  adj_pos_.assign(n, {});
  colptr_.assign(static_cast<std::size_t>(dim_) + 1, 0);
  rowidx_.clear();
  for (std::size_t c = 0; c < n; ++c) {
    std::int64_t pos = 0;
    for (int r : adj_[c]) {
      adj_pos_[c].push_back(pos);
      pos += dims_[static_cast<std::size_t>(r)];
    }
    for (std::int64_t j = 0; j < dims_[c]; ++j) {
      for (int r : adj_[c]) {
        for (std::int64_t i = 0; i < dims_[static_cast<std::size_t>(r)]; ++i) {
          rowidx_.push_back(offsets_[static_cast<std::size_t>(r)] + i);
        }
      }
      colptr_[static_cast<std::size_t>(offsets_[c] + j) + 1] = static_cast<std::int64_t>(rowidx_.size());
    }
  }
  diag_.assign(static_cast<std::size_t>(dim_), 0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < dims_[b]; ++i) diag_[static_cast<std::size_t>(offsets_[b] + i)] = entry(static_cast<int>(b), static_cast<int>(b), i, i);
  }
}

bool BlockPattern::has_block(int rb, int cb) const {
  const auto& a = adj_.at(static_cast<std::size_t>(cb));
  return std::binary_search(a.begin(), a.end(), rb);
}

std::int64_t BlockPattern::block_pos(int rb, int cb) const {
  const auto& a = adj_.at(static_cast<std::size_t>(cb));
  auto it = std::lower_bound(a.begin(), a.end(), rb);
  if (it == a.end() || *it != rb) {
    throw Error("BlockPattern: block (" + std::to_string(rb) + ", " + std::to_string(cb) + ") is not in the pattern");
  }
  return adj_pos_[static_cast<std::size_t>(cb)][static_cast<std::size_t>(it - a.begin())];
}

std::int64_t BlockPattern::find(std::int64_t i, std::int64_t j) const {
  if (i < 0 || j < 0 || i >= dim_ || j >= dim_) return -1;
  const int rb = block_of_[static_cast<std::size_t>(i)];
  const int cb = block_of_[static_cast<std::size_t>(j)];
  if (!has_block(rb, cb)) return -1;
  return entry(rb, cb, i - offsets_[static_cast<std::size_t>(rb)], j - offsets_[static_cast<std::size_t>(cb)]);
}

}  // namespace dnls::sparse
