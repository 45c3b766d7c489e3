// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "dnls/core/variable.hpp"
#include "dnls/tensor/dual.hpp"

namespace dnls {

// Per-cost weight w in r = w c. Scale holds one value per batch row (B, 1);
// Diagonal holds one value per residual entry (B, dim). Both are auxiliary
// variables and therefore learnable.
class CostWeight {
 public:
  enum class Kind { None, Scale, Diagonal };

  CostWeight() = default;
  static CostWeight scale(VariablePtr w);
  static CostWeight diagonal(VariablePtr w);

  Kind kind() const noexcept { return kind_; }
  const VariablePtr& variable() const noexcept { return var_; }

 private:
  Kind kind_ = Kind::None;
  VariablePtr var_;
};

const char* weight_kind_name(CostWeight::Kind k) noexcept;

// Robust loss rho(s) of the squared weighted residual norm s. None is
// rho = s / 2. The radius k is an auxiliary variable of shape (B, 1).
//   Huber:  rho = s/2 for s <= k^2, else k sqrt(s) - k^2/2
//   Welsch: rho = (k^2/2) (1 - exp(-s/k^2))
class RobustKernel {
 public:
  enum class Kind { None, Huber, Welsch };

  RobustKernel() = default;
  static RobustKernel huber(VariablePtr radius);
  static RobustKernel welsch(VariablePtr radius);

  Kind kind() const noexcept { return kind_; }
  const VariablePtr& radius() const noexcept { return radius_; }

 private:
  Kind kind_ = Kind::None;
  VariablePtr radius_;
};

const char* kernel_kind_name(RobustKernel::Kind k) noexcept;

// w c for c of shape (N, dim), or W J for J of shape (N, dim, td).
template <class T>
T apply_weight(CostWeight::Kind kind, const T& w, const T& x) {
  switch (kind) {
    case CostWeight::Kind::None:
      return x;
    case CostWeight::Kind::Scale:
      return scale(x, w);
    case CostWeight::Kind::Diagonal: {
      const BatchedArray& xv = value(x);
      if (xv.rank() == 2) return mul(x, w);
      const std::int64_t dim = xv.dim(1), td = xv.dim(2);
      const T ones = constant_like(w, BatchedArray({1, 1, td}, 1.0));
      return mul(x, matmul(reshape(w, Shape{dim, 1}), ones));
    }
  }
  throw Error("apply_weight: unknown kind");
}

template <class T>
struct KernelEval {
  T rho;    // robust loss, (N, 1)
  T kappa;  // sqrt(2 rho / s): reported residual is kappa w c
  T irls;   // sqrt(2 rho'(s)): linearized residual and Jacobian factor
  T dkappa;  // d kappa / d s
};

namespace kernel_detail {

// Horner evaluation of sum_n c[n] x^n.
template <class T, std::size_t N>
T horner(const T& x, const double (&c)[N]) {
  T r = add_scalar(scale(x, c[N - 1]), c[N - 2]);
  for (std::size_t i = N - 2; i-- > 0;) r = add_scalar(mul(r, x), c[i]);
  return r;
}

// q(x) = (1 - e^-x) / x and q'(x); closed forms cancel near 0, so a series
// takes over below x = 0.1.
inline constexpr double kWelschSeries = 0.1;
inline constexpr double kQ[] = {1.0,          -1.0 / 2,        1.0 / 6,         -1.0 / 24,        1.0 / 120,
                                -1.0 / 720,   1.0 / 5040,      -1.0 / 40320,    1.0 / 362880,     -1.0 / 3628800};
inline constexpr double kDQ[] = {-1.0 / 2,        2.0 / 6,        -3.0 / 24,         4.0 / 120,        -5.0 / 720,
                                 6.0 / 5040,      -7.0 / 40320,   8.0 / 362880,      -9.0 / 3628800,   10.0 / 39916800};

}  // namespace kernel_detail

// s and k are (N, 1); k must be positive.
template <class T>
KernelEval<T> robust_eval(RobustKernel::Kind kind, const T& s, const T& k) {
  using namespace kernel_detail;
  KernelEval<T> out;
  switch (kind) {
    case RobustKernel::Kind::None: {
      const T one = add_scalar(scale(s, 0.0), 1.0);
      out.rho = scale(s, 0.5);
      out.kappa = one;
      out.irls = one;
      out.dkappa = scale(s, 0.0);
      return out;
    }
    case RobustKernel::Kind::Welsch: {
      const T k2 = mul(k, k);
      const T x = div(s, k2);
      const Mask small = less_than(value(x), kWelschSeries);
      const T xs = select(small, add_scalar(scale(x, 0.0), 1.0), x);
      const T ex = exp(neg(xs));
      const T q = select(small, horner(x, kQ), div(sub(constant_like(xs, BatchedArray({1, 1}, {1.0})), ex), xs));
      const T dq = select(small, horner(x, kDQ),
                          div(add_scalar(mul(ex, add_scalar(xs, 1.0)), -1.0), mul(xs, xs)));
      out.rho = scale(mul(q, s), 0.5);
      out.kappa = sqrt(q);
      out.irls = exp(scale(x, -0.5));
      out.dkappa = div(dq, scale(mul(out.kappa, k2), 2.0));
      return out;
    }
    case RobustKernel::Kind::Huber: {
      const T k2 = mul(k, k);
      const Mask quad = less_than(value(sub(s, k2)), 0.0);
      const T ss = select(quad, k2, s);
      const T rs = sqrt(ss);
      const T one = add_scalar(scale(s, 0.0), 1.0);
      const T rho_lin = sub(mul(k, rs), scale(k2, 0.5));
      out.rho = select(quad, scale(s, 0.5), rho_lin);
      // kappa^2 = 2 k / sqrt(s) - k^2 / s
      const T kap2 = sub(div(scale(k, 2.0), rs), div(k2, ss));
      const T kap = sqrt(kap2);
      out.kappa = select(quad, one, kap);
      out.irls = select(quad, one, sqrt(div(k, rs)));
      const T dk2 = sub(div(k2, mul(ss, ss)), div(k, mul(ss, rs)));
      out.dkappa = select(quad, scale(s, 0.0), div(dk2, scale(kap, 2.0)));
      return out;
    }
  }
  throw Error("robust_eval: unknown kernel");
}

// Plain-value entry point: kappa and d kappa / d s for squared norms s.
struct RobustRescale {
  BatchedArray kappa;
  BatchedArray dkappa_ds;
  BatchedArray rho;
};
RobustRescale robust_rescale(RobustKernel::Kind kind, const BatchedArray& s, const BatchedArray& radius);
void check_radius(const BatchedArray& radius, const std::string& where);

}  // namespace dnls
