// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dnls/error.hpp"
#include "dnls/tensor/dual.hpp"

namespace dnls {

// Seed for coordinate i of a Euclidean input: the i-th unit vector of the
// flattened item, as a batch-1 constant.
template <class A>
A euclidean_seed(const A& x, std::int64_t i) {
  const BatchedArray& v = value(x);
  BatchedArray e(Shape([&] {
    Shape s = v.shape();
    s[0] = 1;
    return s;
  }()));
  e[i] = 1.0;
  return constant_like(x, std::move(e));
}

// Per-sample Jacobians of `fn` by forward-mode seeding, one seed per tangent
// coordinate of every input listed in `wrt`.
//
//   fn(std::vector<Dual<A>>) -> Dual<A> of shape (B, m)
//   seed(input_index, coordinate) -> tangent direction shaped like the input
//
// Returns one (B, m, tangent_dims[k]) block per entry of `wrt`; the primal
// output is written to `out` when non-null.
template <class A, class Fn, class SeedFn>
std::vector<A> jacobian_forward(Fn&& fn, const std::vector<A>& inputs, const std::vector<std::int64_t>& tangent_dims,
                                const std::vector<std::size_t>& wrt, SeedFn&& seed, A* out = nullptr) {
  if (tangent_dims.size() != inputs.size()) throw Error("jacobian_forward: tangent_dims size mismatch");
  std::vector<std::size_t> first(wrt.size());
  std::size_t total = 0;
  for (std::size_t w = 0; w < wrt.size(); ++w) {
    if (wrt[w] >= inputs.size()) throw Error("jacobian_forward: wrt index out of range");
    first[w] = total;
    total += static_cast<std::size_t>(tangent_dims[wrt[w]]);
  }
  std::vector<Dual<A>> duals;
  duals.reserve(inputs.size());
  for (const auto& x : inputs) duals.push_back(Dual<A>{x, {}});
  for (std::size_t w = 0; w < wrt.size(); ++w) {
    auto& d = duals[wrt[w]];
    d.tangents.resize(total);
    for (std::int64_t i = 0; i < tangent_dims[wrt[w]]; ++i) {
      d.tangents[first[w] + static_cast<std::size_t>(i)] = seed(wrt[w], i);
    }
  }
  Dual<A> r = fn(duals);
  const BatchedArray& rv = value(r.primal);
  if (rv.rank() != 2) throw ShapeError("jacobian_forward: residual must be (B, m), got " + rv.shape_string());
  const std::int64_t m = rv.dim(1);
  const A zero = zeros_of(r.primal);

  std::vector<A> blocks;
  blocks.reserve(wrt.size());
  for (std::size_t w = 0; w < wrt.size(); ++w) {
    std::vector<A> cols;
    for (std::int64_t i = 0; i < tangent_dims[wrt[w]]; ++i) {
      const auto& t = dual_detail::tangent(r, first[w] + static_cast<std::size_t>(i));
      A col = !t ? zero : (value(*t).batch() == rv.batch() ? *t : add(*t, zero));
      cols.push_back(reshape(col, Shape{m, 1}));
    }
    blocks.push_back(cols.size() == 1 ? cols[0] : concat(cols, 2));
  }
  if (out != nullptr) *out = r.primal;
  return blocks;
}

// Finite-difference input description: the point, its tangent dimension, and
// how to move along a tangent (plain addition for Euclidean inputs).
struct LeafSpec {
  BatchedArray value;
  std::int64_t tangent_dim = 0;
  std::function<BatchedArray(const BatchedArray& x, const BatchedArray& delta)> retract;
};

LeafSpec euclidean_leaf(BatchedArray v);

using PlainFn = std::function<BatchedArray(const std::vector<BatchedArray>&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h along every tangent
// coordinate; all batch rows are perturbed together. Output is flattened per
// row: one (B, m, tangent_dim) block per `wrt` input.
std::vector<BatchedArray> finite_diff_jacobian(const PlainFn& fn, const std::vector<LeafSpec>& inputs,
                                               const std::vector<std::size_t>& wrt, double h = 1e-5);

// Relative error max|a - b| / max(max|b|, floor).
double rel_error(const BatchedArray& a, const BatchedArray& b, double floor = 1e-12);

}  // namespace dnls
