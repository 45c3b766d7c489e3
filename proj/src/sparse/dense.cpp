// SPDX-License-Identifier: Apache-2.0
#include "dnls/sparse/dense.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dnls/error.hpp"
#include "dnls/sparse/cholesky.hpp"

extern "C" {
void dpotrf_(const char* uplo, const int* n, double* a, const int* lda, int* info);
void dpotrs_(const char* uplo, const int* n, const int* nrhs, const double* a, const int* lda, double* b,
             const int* ldb, int* info);
}

namespace dnls::sparse {

namespace {
using I = std::int64_t;
template <class V>
std::size_t sz(V v) {
  return static_cast<std::size_t>(v);
}

void check_values(const BlockPattern& p, const BatchedArray& h) {
  if (h.rank() != 2 || h.dim(1) != p.nnz()) {
    throw ShapeError("dense path: H values have shape " + h.shape_string() + ", pattern expects (B, " +
                     std::to_string(p.nnz()) + ")");
  }
}

// Column-major scatter of one batch element.
void scatter(const BlockPattern& p, const double* hv, double* a) {
  const I n = p.dim();
  std::fill(a, a + n * n, 0.0);
  const auto& cp = p.colptr();
  const auto& ri = p.rowidx();
  for (I j = 0; j < n; ++j) {
    for (I q = cp[sz(j)]; q < cp[sz(j) + 1]; ++q) a[j * n + ri[sz(q)]] = hv[q];
  }
}
}  // namespace

bool DenseFactor::any_failed() const {
  return std::any_of(failed.begin(), failed.end(), [](std::uint8_t v) { return v != 0; });
}

BatchedArray densify(const BlockPattern& p, const BatchedArray& h) {
  check_values(p, h);
  const I n = p.dim();
  BatchedArray out(Shape{h.batch(), n, n});
  Buffer tmp(sz(n * n));
  for (I b = 0; b < h.batch(); ++b) {
    scatter(p, h.item(b), tmp.data());
    double* o = out.item(b);
    for (I j = 0; j < n; ++j) {
      for (I i = 0; i < n; ++i) o[i * n + j] = tmp[sz(j * n + i)];
    }
  }
  return out;
}

DenseFactor dense_factorize(const BlockPattern& p, const BatchedArray& h, double pivot_tol) {
  check_values(p, h);
  DenseFactor f;
  f.n = p.dim();
  f.lanes = h.batch();
  f.failed.assign(sz(f.lanes), 0);
  f.checksum = values_checksum(h);
  const I n = f.n;
  f.values.assign(sz(f.lanes * n * n), 0.0);
  const int ni = static_cast<int>(n);
  for (I b = 0; b < f.lanes; ++b) {
    double* a = f.values.data() + b * n * n;
    scatter(p, h.item(b), a);
    double dmax = 0.0;
    for (I j = 0; j < n; ++j) dmax = std::max(dmax, std::abs(a[j * n + j]));
    int info = 0;
    dpotrf_("L", &ni, a, &ni, &info);
    bool bad = info != 0;
    for (I j = 0; j < n && !bad; ++j) {
      const double l = a[j * n + j];
      if (!(l * l > pivot_tol * dmax) || !std::isfinite(l)) bad = true;
    }
    if (bad) {
      f.failed[sz(b)] = 1;
      // Keep the factor well defined for lanes that are skipped later.
      std::fill(a, a + n * n, 0.0);
      for (I j = 0; j < n; ++j) a[j * n + j] = 1.0;
    }
  }
  count_factorization();
  return f;
}

BatchedArray dense_solve(const DenseFactor& f, const BatchedArray& b, bool zero_failed) {
  const I n = f.n;
  if (b.rank() != 2 || b.dim(1) != n || b.batch() != f.lanes) {
    throw ShapeError("dense_solve: right-hand side has shape " + b.shape_string());
  }
  BatchedArray x = b;
  const int ni = static_cast<int>(n);
  const int one = 1;
  for (I l = 0; l < f.lanes; ++l) {
    if (f.failed[sz(l)]) {
      if (!zero_failed) {
        throw FactorizationError("dense_solve: batch element " + std::to_string(l) + " is not positive definite");
      }
      std::fill(x.item(l), x.item(l) + n, 0.0);
      continue;
    }
    int info = 0;
    dpotrs_("L", &ni, &one, f.values.data() + l * n * n, &ni, x.item(l), &ni, &info);
    if (info != 0) throw FactorizationError("dense_solve: LAPACK solve failed");
  }
  count_solve();
  return x;
}

BatchedArray dense_solve(const BlockPattern& p, const BatchedArray& h, const BatchedArray& b) {
  return dense_solve(dense_factorize(p, h), b, false);
}

}  // namespace dnls::sparse
