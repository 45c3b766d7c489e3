// SPDX-License-Identifier: Apache-2.0
#include "dnls/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dnls/error.hpp"
#include "dnls/tensor/kernels.hpp"

namespace dnls {

std::int64_t broadcast_batch(const char* op, const BatchedArray& a, const BatchedArray& b) {
  if (a.empty() || b.empty()) throw ShapeError(std::string(op) + ": empty operand");
  if (a.item_shape() != b.item_shape() ||
      (a.batch() != b.batch() && a.batch() != 1 && b.batch() != 1)) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }
  return std::max(a.batch(), b.batch());
}

namespace {

using BinaryKernel = void (*)(const double*, const double*, double*, std::size_t);

BatchedArray binary(const char* name, const BatchedArray& a, const BatchedArray& b, BinaryKernel k) {
  const std::int64_t rows = broadcast_batch(name, a, b);
  Shape s = a.shape();
  s[0] = rows;
  BatchedArray out(s);
  const auto n = static_cast<std::size_t>(a.item_size());
  if (a.batch() == b.batch()) {
    k(a.data(), b.data(), out.data(), static_cast<std::size_t>(out.numel()));
  } else {
    for (std::int64_t r = 0; r < rows; ++r) {
      k(a.item(a.batch() == 1 ? 0 : r), b.item(b.batch() == 1 ? 0 : r), out.item(r), n);
    }
  }
  return out;
}

template <class F>
BatchedArray unary(const BatchedArray& a, F f) {
  BatchedArray out(a.shape());
  const double* src = a.data();
  double* dst = out.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) dst[i] = f(src[i]);
  return out;
}

void check_axis(const char* op, const BatchedArray& a, int axis) {
  if (axis < 1 || axis >= a.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                     a.shape_string());
  }
}

// Split an item shape around `axis` into (outer, dim, inner) extents.
void split_axis(const Shape& shape, int axis, std::int64_t& outer, std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 1; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace

BatchedArray add(const BatchedArray& a, const BatchedArray& b) {
  return binary("add", a, b, kernels::active().add);
}
BatchedArray sub(const BatchedArray& a, const BatchedArray& b) {
  return binary("sub", a, b, kernels::active().sub);
}
BatchedArray mul(const BatchedArray& a, const BatchedArray& b) {
  return binary("mul", a, b, kernels::active().mul);
}
BatchedArray div(const BatchedArray& a, const BatchedArray& b) {
  return binary("div", a, b, kernels::active().div);
}

BatchedArray neg(const BatchedArray& a) { return scale(a, -1.0); }
BatchedArray exp(const BatchedArray& a) { return unary(a, [](double x) { return std::exp(x); }); }
BatchedArray log(const BatchedArray& a) { return unary(a, [](double x) { return std::log(x); }); }
BatchedArray sin(const BatchedArray& a) { return unary(a, [](double x) { return std::sin(x); }); }
BatchedArray cos(const BatchedArray& a) { return unary(a, [](double x) { return std::cos(x); }); }
BatchedArray sqrt(const BatchedArray& a) { return unary(a, [](double x) { return std::sqrt(x); }); }

BatchedArray atan2(const BatchedArray& y, const BatchedArray& x) {
  const std::int64_t rows = broadcast_batch("atan2", y, x);
  Shape s = y.shape();
  s[0] = rows;
  BatchedArray out(s);
  const std::int64_t n = y.item_size();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* py = y.item(y.batch() == 1 ? 0 : r);
    const double* px = x.item(x.batch() == 1 ? 0 : r);
    double* po = out.item(r);
    for (std::int64_t i = 0; i < n; ++i) po[i] = std::atan2(py[i], px[i]);
  }
  return out;
}

BatchedArray scale(const BatchedArray& a, double s) {
  BatchedArray out(a.shape());
  kernels::active().scale(a.data(), s, out.data(), static_cast<std::size_t>(a.numel()));
  return out;
}

BatchedArray add_scalar(const BatchedArray& a, double s) {
  return unary(a, [s](double x) { return x + s; });
}

BatchedArray scale(const BatchedArray& a, const BatchedArray& s) {
  if (s.item_size() != 1 || (s.batch() != a.batch() && s.batch() != 1 && a.batch() != 1)) {
    throw ShapeError("scale: per-row scalar " + s.shape_string() + " does not match " + a.shape_string());
  }
  const std::int64_t rows = std::max(a.batch(), s.batch());
  Shape shape = a.shape();
  shape[0] = rows;
  BatchedArray out(shape);
  const auto& k = kernels::active();
  const auto n = static_cast<std::size_t>(a.item_size());
  for (std::int64_t r = 0; r < rows; ++r) {
    k.scale(a.item(a.batch() == 1 ? 0 : r), s[s.batch() == 1 ? 0 : r], out.item(r), n);
  }
  return out;
}

BatchedArray matmul(const BatchedArray& a, const BatchedArray& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(2) != b.dim(1) ||
      (a.batch() != b.batch() && a.batch() != 1 && b.batch() != 1)) {
    throw ShapeError("matmul: incompatible shapes " + a.shape_string() + " and " + b.shape_string());
  }
  const std::int64_t rows = std::max(a.batch(), b.batch());
  const std::int64_t m = a.dim(1), k = a.dim(2), n = b.dim(2);
  BatchedArray out({rows, m, n});
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* pa = a.item(a.batch() == 1 ? 0 : r);
    const double* pb = b.item(b.batch() == 1 ? 0 : r);
    double* po = out.item(r);
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t t = 0; t < k; ++t) acc += pa[i * k + t] * pb[t * n + j];
        po[i * n + j] = acc;
      }
    }
  }
  return out;
}

BatchedArray transpose(const BatchedArray& a) {
  if (a.rank() != 3) throw ShapeError("transpose: expected (B, m, n), got " + a.shape_string());
  const std::int64_t m = a.dim(1), n = a.dim(2);
  BatchedArray out({a.batch(), n, m});
  for (std::int64_t r = 0; r < a.batch(); ++r) {
    const double* pa = a.item(r);
    double* po = out.item(r);
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    }
  }
  return out;
}

BatchedArray sum(const BatchedArray& a) {
  BatchedArray out({a.batch(), 1});
  const std::int64_t n = a.item_size();
  for (std::int64_t r = 0; r < a.batch(); ++r) {
    const double* p = a.item(r);
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += p[i];
    out[r] = acc;
  }
  return out;
}

BatchedArray squared_norm(const BatchedArray& a) {
  BatchedArray out({a.batch(), 1});
  const std::int64_t n = a.item_size();
  for (std::int64_t r = 0; r < a.batch(); ++r) {
    const double* p = a.item(r);
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += p[i] * p[i];
    out[r] = acc;
  }
  return out;
}

BatchedArray slice(const BatchedArray& a, int axis, std::int64_t start, std::int64_t len) {
  check_axis("slice", a, axis);
  const std::int64_t d = a.dim(axis);
  if (start < 0 || len < 0 || start + len > d) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of bounds for axis " + std::to_string(axis) + " of " + a.shape_string());
  }
  std::int64_t outer = 0, inner = 0;
  split_axis(a.shape(), axis, outer, inner);
  Shape s = a.shape();
  s[static_cast<std::size_t>(axis)] = len;
  BatchedArray out(s);
  for (std::int64_t r = 0; r < a.batch(); ++r) {
    const double* src = a.item(r);
    double* dst = out.item(r);
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* from = src + (o * d + start) * inner;
      std::copy(from, from + len * inner, dst + o * len * inner);
    }
  }
  return out;
}

BatchedArray concat(const std::vector<BatchedArray>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  check_axis("concat", parts[0], axis);
  std::int64_t rows = 1;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch " + p.shape_string());
    for (int i = 1; i < p.rank(); ++i) {
      if (i != axis && p.dim(i) != parts[0].dim(i)) {
        throw ShapeError("concat: shape " + p.shape_string() + " incompatible with " +
                         parts[0].shape_string() + " along axis " + std::to_string(axis));
      }
    }
    if (p.batch() != 1) {
      if (rows != 1 && rows != p.batch()) {
        throw ShapeError("concat: batch mismatch " + p.shape_string() + " vs batch " + std::to_string(rows));
      }
      rows = p.batch();
    }
    total += p.dim(axis);
  }
  std::int64_t outer = 0, inner = 0;
  split_axis(parts[0].shape(), axis, outer, inner);
  Shape s = parts[0].shape();
  s[0] = rows;
  s[static_cast<std::size_t>(axis)] = total;
  BatchedArray out(s);
  for (std::int64_t r = 0; r < rows; ++r) {
    double* dst = out.item(r);
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      const std::int64_t d = p.dim(axis);
      const double* src = p.item(p.batch() == 1 ? 0 : r);
      for (std::int64_t o = 0; o < outer; ++o) {
        std::copy(src + o * d * inner, src + (o + 1) * d * inner, dst + (o * total + offset) * inner);
      }
      offset += d;
    }
  }
  return out;
}

BatchedArray reshape(const BatchedArray& a, const Shape& item_shape) { return a.reshaped(item_shape); }

BatchedArray concat_batch(const std::vector<BatchedArray>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no operands");
  std::int64_t rows = 0;
  for (const auto& p : parts) {
    if (p.item_shape() != parts[0].item_shape()) {
      throw ShapeError("concat_batch: item shape " + p.shape_string() + " differs from " +
                       parts[0].shape_string());
    }
    rows += p.batch();
  }
  Shape s = parts[0].shape();
  s[0] = rows;
  BatchedArray out(s);
  double* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.numel(), dst);
  return out;
}

BatchedArray slice_rows(const BatchedArray& a, std::int64_t start, std::int64_t count) {
  if (start < 0 || count < 1 || start + count > a.batch()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + a.shape_string());
  }
  Shape s = a.shape();
  s[0] = count;
  return BatchedArray(s, std::span<const double>(a.item(start), static_cast<std::size_t>(count * a.item_size())));
}

BatchedArray fold_batch(const BatchedArray& a, std::int64_t groups) {
  if (groups < 1 || a.batch() % groups != 0) {
    throw ShapeError("fold_batch: cannot fold " + a.shape_string() + " into " + std::to_string(groups) +
                     " groups");
  }
  const std::int64_t rows = a.batch() / groups;
  Shape s = a.shape();
  s[0] = rows;
  BatchedArray out(s);
  const auto n = static_cast<std::size_t>(rows * a.item_size());
  std::copy(a.data(), a.data() + n, out.data());
  const auto& k = kernels::active();
  for (std::int64_t m = 1; m < groups; ++m) k.add(out.data(), a.data() + m * n, out.data(), n);
  return out;
}

BatchedArray select(const Mask& mask, const BatchedArray& a, const BatchedArray& b) {
  const std::int64_t rows = broadcast_batch("select", a, b);
  if (static_cast<std::int64_t>(mask.size()) != rows) {
    throw ShapeError("select: mask of " + std::to_string(mask.size()) + " rows for operands " +
                     a.shape_string() + ", " + b.shape_string());
  }
  Shape s = a.shape();
  s[0] = rows;
  BatchedArray out(s);
  const std::int64_t n = a.item_size();
  for (std::int64_t r = 0; r < rows; ++r) {
    const BatchedArray& src = mask[static_cast<std::size_t>(r)] ? a : b;
    const double* p = src.item(src.batch() == 1 ? 0 : r);
    std::copy(p, p + n, out.item(r));
  }
  return out;
}

Mask less_than(const BatchedArray& a, double threshold) {
  if (a.item_size() != 1) throw ShapeError("less_than: expected item size 1, got " + a.shape_string());
  Mask m(static_cast<std::size_t>(a.batch()));
  for (std::int64_t r = 0; r < a.batch(); ++r) m[static_cast<std::size_t>(r)] = a[r] < threshold ? 1 : 0;
  return m;
}

BatchedArray reduce_to_batch(const BatchedArray& g, std::int64_t batch) {
  if (g.batch() == batch) return g;
  if (batch != 1) {
    throw ShapeError("reduce_to_batch: cannot reduce " + g.shape_string() + " to batch " + std::to_string(batch));
  }
  return fold_batch(g, g.batch());
}

}  // namespace dnls
