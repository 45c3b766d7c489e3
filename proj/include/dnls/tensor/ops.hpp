// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dnls/tensor/batched_array.hpp"

// Primitive operations on BatchedArray. The same names are overloaded for the
// tape type `Var` (tape.hpp) and for forward-mode `Dual<A>` (dual.hpp), so
// generic code written against these calls runs in all three modes.
//
// Broadcasting: an operand with batch 1 broadcasts against batch B; any other
// mismatch throws ShapeError naming the op.
namespace dnls {

// One flag per batch row; produced from primal values only.
using Mask = std::vector<std::uint8_t>;

BatchedArray add(const BatchedArray& a, const BatchedArray& b);
BatchedArray sub(const BatchedArray& a, const BatchedArray& b);
BatchedArray mul(const BatchedArray& a, const BatchedArray& b);
BatchedArray div(const BatchedArray& a, const BatchedArray& b);
BatchedArray neg(const BatchedArray& a);
BatchedArray exp(const BatchedArray& a);
BatchedArray log(const BatchedArray& a);
BatchedArray sin(const BatchedArray& a);
BatchedArray cos(const BatchedArray& a);
BatchedArray sqrt(const BatchedArray& a);
BatchedArray atan2(const BatchedArray& y, const BatchedArray& x);

BatchedArray scale(const BatchedArray& a, double s);
BatchedArray add_scalar(const BatchedArray& a, double s);
// Multiply every row of `a` by the matching per-row scalar in `s` (item size 1).
BatchedArray scale(const BatchedArray& a, const BatchedArray& s);

// Batched matrix product (B, m, k) x (B, k, n) -> (B, m, n).
BatchedArray matmul(const BatchedArray& a, const BatchedArray& b);
// (B, m, n) -> (B, n, m)
BatchedArray transpose(const BatchedArray& a);

// Row reductions to shape (B, 1).
BatchedArray sum(const BatchedArray& a);
BatchedArray squared_norm(const BatchedArray& a);

// `axis` counts the batch axis as 0 and must be >= 1.
BatchedArray slice(const BatchedArray& a, int axis, std::int64_t start, std::int64_t len);
BatchedArray concat(const std::vector<BatchedArray>& parts, int axis);
BatchedArray reshape(const BatchedArray& a, const Shape& item_shape);

// Stack arrays with identical item shape along the batch axis.
BatchedArray concat_batch(const std::vector<BatchedArray>& parts);
BatchedArray slice_rows(const BatchedArray& a, std::int64_t start, std::int64_t count);
// Row m*B + b summed over m, giving B rows; `groups` is M.
BatchedArray fold_batch(const BatchedArray& a, std::int64_t groups);

// Row-wise choice: row r of the result is a's row if mask[r], else b's.
BatchedArray select(const Mask& mask, const BatchedArray& a, const BatchedArray& b);
// mask[r] = a(r) < threshold for an item-size-1 array.
Mask less_than(const BatchedArray& a, double threshold);

inline const BatchedArray& value(const BatchedArray& a) { return a; }
inline BatchedArray constant_like(const BatchedArray& /*proto*/, BatchedArray c) { return c; }

// Sum a broadcast gradient back down to `batch` rows (1 or the same batch).
BatchedArray reduce_to_batch(const BatchedArray& g, std::int64_t batch);
// Row count after broadcasting two operands; throws on mismatch.
std::int64_t broadcast_batch(const char* op, const BatchedArray& a, const BatchedArray& b);

}  // namespace dnls
