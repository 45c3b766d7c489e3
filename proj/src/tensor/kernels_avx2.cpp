// SPDX-License-Identifier: Apache-2.0
// Compiled with -mavx2 (and without -mfma); only reached after a runtime
// CPU check in kernels_scalar.cpp.
#include <cmath>

#include "dnls/tensor/kernels.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace dnls::kernels::detail {

#if defined(__AVX2__)
namespace {

template <class Op>
inline void binary(const double* a, const double* b, double* out, std::size_t n, Op op) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, op(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) {
    __m128d r = _mm256_castpd256_pd128(op(_mm256_set1_pd(a[i]), _mm256_set1_pd(b[i])));
    out[i] = _mm_cvtsd_f64(r);
  }
}

void add_avx2(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); });
}
void sub_avx2(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_sub_pd(x, y); });
}
void mul_avx2(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); });
}
void div_avx2(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_div_pd(x, y); });
}

void scale_avx2(const double* a, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void lane_sub_mul_avx2(const double* a, const double* b, double* c, std::size_t lanes) {
  std::size_t l = 0;
  for (; l + 4 <= lanes; l += 4) {
    __m256d vc = _mm256_loadu_pd(c + l);
    vc = _mm256_sub_pd(vc, _mm256_mul_pd(_mm256_loadu_pd(a + l), _mm256_loadu_pd(b + l)));
    _mm256_storeu_pd(c + l, vc);
  }
  for (; l < lanes; ++l) c[l] = c[l] - a[l] * b[l];
}

void lane_sub_dot_avx2(const double* a, std::size_t as, const double* b, std::size_t bs,
                       std::size_t k, double* c, std::size_t lanes) {
  std::size_t l = 0;
  for (; l + 4 <= lanes; l += 4) {
    __m256d acc = _mm256_loadu_pd(c + l);
    for (std::size_t j = 0; j < k; ++j) {
      acc = _mm256_sub_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + j * as + l), _mm256_loadu_pd(b + j * bs + l)));
    }
    _mm256_storeu_pd(c + l, acc);
  }
  for (; l < lanes; ++l) {
    double acc = c[l];
    for (std::size_t j = 0; j < k; ++j) acc = acc - a[j * as + l] * b[j * bs + l];
    c[l] = acc;
  }
}

void lane_div_avx2(const double* a, const double* d, double* out, std::size_t lanes) {
  div_avx2(a, d, out, lanes);
}

void lane_sqrt_avx2(const double* a, double* out, std::size_t lanes) {
  std::size_t l = 0;
  for (; l + 4 <= lanes; l += 4) _mm256_storeu_pd(out + l, _mm256_sqrt_pd(_mm256_loadu_pd(a + l)));
  for (; l < lanes; ++l) out[l] = std::sqrt(a[l]);
}

const KernelTable kAvx2{Isa::Avx2,        add_avx2,          sub_avx2,       mul_avx2,
                        div_avx2,         scale_avx2,        axpy_avx2,      dot_avx2,
                        lane_sub_mul_avx2, lane_sub_dot_avx2, lane_div_avx2, lane_sqrt_avx2};

}  // namespace

const KernelTable* avx2_table_if_compiled() noexcept { return &kAvx2; }

#else

const KernelTable* avx2_table_if_compiled() noexcept { return nullptr; }

#endif

}  // namespace dnls::kernels::detail
