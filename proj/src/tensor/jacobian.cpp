// SPDX-License-Identifier: Apache-2.0
#include "dnls/tensor/jacobian.hpp"

#include <algorithm>
#include <cmath>

namespace dnls {

LeafSpec euclidean_leaf(BatchedArray v) {
  LeafSpec s;
  s.tangent_dim = v.item_size();
  s.value = std::move(v);
  s.retract = [](const BatchedArray& x, const BatchedArray& delta) {
    return add(x, reshape(delta, x.item_shape()));
  };
  return s;
}

std::vector<BatchedArray> finite_diff_jacobian(const PlainFn& fn, const std::vector<LeafSpec>& inputs,
                                               const std::vector<std::size_t>& wrt, double h) {
  std::vector<BatchedArray> base;
  base.reserve(inputs.size());
  for (const auto& in : inputs) base.push_back(in.value);

  std::vector<BatchedArray> blocks;
  for (std::size_t k : wrt) {
    if (k >= inputs.size()) throw Error("finite_diff_jacobian: wrt index out of range");
    const LeafSpec& spec = inputs[k];
    const std::int64_t rows = spec.value.batch();
    const std::int64_t td = spec.tangent_dim;
    BatchedArray block;
    std::int64_t m = 0;
    for (std::int64_t i = 0; i < td; ++i) {
      BatchedArray delta({rows, td});
      for (std::int64_t r = 0; r < rows; ++r) delta.at(r, i) = h;
      std::vector<BatchedArray> plus = base, minus = base;
      plus[k] = spec.retract(spec.value, delta);
      minus[k] = spec.retract(spec.value, neg(delta));
      BatchedArray fp = fn(plus);
      BatchedArray fm = fn(minus);
      if (i == 0) {
        m = fp.item_size();
        block = BatchedArray({fp.batch(), m, td});
      }
      for (std::int64_t r = 0; r < fp.batch(); ++r) {
        for (std::int64_t j = 0; j < m; ++j) {
          block.at(r, j * td + i) = (fp.at(r, j) - fm.at(r, j)) / (2.0 * h);
        }
      }
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

double rel_error(const BatchedArray& a, const BatchedArray& b, double floor) {
  return max_abs_diff(a, b) / std::max(max_abs(b), floor);
}

}  // namespace dnls
