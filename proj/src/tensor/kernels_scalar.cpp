// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdlib>

#include "dnls/tensor/kernels.hpp"

namespace dnls::kernels {

namespace detail {
const KernelTable* avx2_table_if_compiled() noexcept;
}

namespace {

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void div_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}
void scale_scalar(const double* a, double s, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}
double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}
void lane_sub_mul_scalar(const double* a, const double* b, double* c, std::size_t lanes) {
  for (std::size_t l = 0; l < lanes; ++l) c[l] = c[l] - a[l] * b[l];
}
void lane_sub_dot_scalar(const double* a, std::size_t as, const double* b, std::size_t bs,
                         std::size_t k, double* c, std::size_t lanes) {
  for (std::size_t l = 0; l < lanes; ++l) {
    double acc = c[l];
    for (std::size_t j = 0; j < k; ++j) acc = acc - a[j * as + l] * b[j * bs + l];
    c[l] = acc;
  }
}
void lane_div_scalar(const double* a, const double* d, double* out, std::size_t lanes) {
  for (std::size_t l = 0; l < lanes; ++l) out[l] = a[l] / d[l];
}
void lane_sqrt_scalar(const double* a, double* out, std::size_t lanes) {
  for (std::size_t l = 0; l < lanes; ++l) out[l] = std::sqrt(a[l]);
}

const KernelTable kScalar{Isa::Scalar,       add_scalar,          sub_scalar,
                          mul_scalar,        div_scalar,          scale_scalar,
                          axpy_scalar,       dot_scalar,          lane_sub_mul_scalar,
                          lane_sub_dot_scalar, lane_div_scalar,   lane_sqrt_scalar};

const KernelTable* g_active = nullptr;

const KernelTable* initial_table() noexcept {
  const char* force = std::getenv("DNLS_FORCE_SCALAR");
  if (force != nullptr && force[0] == '1') return &kScalar;
  if (const KernelTable* t = avx2_kernels()) return t;
  return &kScalar;
}

}  // namespace

const char* isa_name(Isa isa) noexcept { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

const KernelTable& scalar_kernels() noexcept { return kScalar; }

const KernelTable* avx2_kernels() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  static const bool supported = __builtin_cpu_supports("avx2");
  if (!supported) return nullptr;
  return detail::avx2_table_if_compiled();
#else
  return nullptr;
#endif
}

const KernelTable& active() noexcept {
  if (g_active == nullptr) g_active = initial_table();
  return *g_active;
}

bool select(Isa isa) noexcept {
  if (isa == Isa::Scalar) {
    g_active = &kScalar;
    return true;
  }
  const KernelTable* t = avx2_kernels();
  if (t == nullptr) return false;
  g_active = t;
  return true;
}

}  // namespace dnls::kernels
