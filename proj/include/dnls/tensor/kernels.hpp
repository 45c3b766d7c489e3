// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace dnls::kernels {

enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa) noexcept;

// Inner loops shared by the array ops and the batched factorizations.
//
// "Lane" kernels operate on `lanes` contiguous values, one per batch
// element; the batched Cholesky stores every factor entry as a lane vector so
// that all batch elements advance through the same instruction stream.
//
// Every SIMD variant performs exactly the scalar operation sequence per
// element (no FMA, no reassociation) except `dot`, whose reduction order
// differs and is only equivalent to rounding.
struct KernelTable {
  Isa isa;
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*div)(const double* a, const double* b, double* out, std::size_t n);
  void (*scale)(const double* a, double s, double* out, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);

  // c -= a * b
  void (*lane_sub_mul)(const double* a, const double* b, double* c, std::size_t lanes);
  // c -= sum_k a[k * a_stride] * b[k * b_stride], accumulated in k order
  void (*lane_sub_dot)(const double* a, std::size_t a_stride, const double* b, std::size_t b_stride,
                       std::size_t k, double* c, std::size_t lanes);
  // out = a / d
  void (*lane_div)(const double* a, const double* d, double* out, std::size_t lanes);
  // out = sqrt(a)
  void (*lane_sqrt)(const double* a, double* out, std::size_t lanes);
};

const KernelTable& scalar_kernels() noexcept;
// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_kernels() noexcept;

// The table used by the library. Defaults to the widest supported ISA;
// DNLS_FORCE_SCALAR=1 in the environment pins the scalar reference.
const KernelTable& active() noexcept;
// Returns false (and leaves the selection unchanged) if `isa` is unsupported.
bool select(Isa isa) noexcept;

}  // namespace dnls::kernels
