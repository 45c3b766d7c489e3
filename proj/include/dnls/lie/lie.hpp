// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dnls/error.hpp"
#include "dnls/tensor/batched_array.hpp"
#include "dnls/tensor/jacobian.hpp"
#include "dnls/tensor/ops.hpp"

// Batched matrix Lie groups SO(2), SE(2), SO(3), SE(3).
//
// Storage is the matrix embedding without the homogeneous row:
//   SO2 (B,2,2)   SE2 (B,2,3) = [R | t]   SO3 (B,3,3)   SE3 (B,3,4) = [R | t]
// Tangent coordinates: SO2 (w), SE2 (vx, vy, w), SO3 (w1, w2, w3),
// SE3 (v1, v2, v3, w1, w2, w3). Increments act on the right: g * exp(d).
//
// Every map below is a template over the array type T (BatchedArray, Var,
// Dual<...>) so values, recorded values and forward-mode derivatives share a
// single implementation.
namespace dnls::lie {

enum class Group { SO2, SE2, SO3, SE3 };

const char* group_name(Group g) noexcept;
std::int64_t tangent_dim(Group g) noexcept;
// Item shape of the embedding, e.g. {3, 4} for SE3.
Shape item_shape(Group g);
// Size n of the rotation block.
inline std::int64_t rot_dim(Group g) noexcept { return (g == Group::SO2 || g == Group::SE2) ? 2 : 3; }
inline bool has_translation(Group g) noexcept { return g == Group::SE2 || g == Group::SE3; }

// Exact-branch threshold on theta^2 for the maps themselves.
inline constexpr double kSmallAngle2 = 1e-12;
// Wider window (theta^2) for coefficients whose closed forms cancel badly.
inline constexpr double kSeriesAngle2 = 1e-2;
// log is undefined on the cut at pi; angles within this margin are rejected.
inline constexpr double kBranchMargin = 1e-7;

// ---------------------------------------------------------------------------
// A batched group element with validated data.
class LieGroupElement {
 public:
  LieGroupElement() = default;
  // Validates shape and that every rotation block is orthonormal with
  // determinant +1 to `tol`.
  LieGroupElement(Group kind, BatchedArray data, double tol = 1e-9);

  static LieGroupElement identity(Group kind, std::int64_t batch);

  Group kind() const noexcept { return kind_; }
  const BatchedArray& data() const noexcept { return data_; }
  std::int64_t batch() const noexcept { return data_.batch(); }

 private:
  Group kind_ = Group::SO2;
  BatchedArray data_;
};

// Max over the batch of |R^T R - I|_inf and |det R - 1|.
double orthonormality_error(Group kind, const BatchedArray& data);
// Explicitly re-project rotation blocks to SO(n) (Gram-Schmidt on columns).
BatchedArray orthonormalize(Group kind, const BatchedArray& data);

void check_shape(Group kind, const BatchedArray& g, const char* op);
void check_tangent(Group kind, const BatchedArray& xi, const char* op);
// Throws BranchCutError if any rotation is within kBranchMargin of pi.
void check_branch(Group kind, const BatchedArray& g);

// ---------------------------------------------------------------------------
namespace detail {

template <class T>
T cst(const T& proto, double v) {
  return constant_like(proto, BatchedArray({1, 1}, {v}));
}

template <class T>
T eye(const T& proto, std::int64_t n) {
  return constant_like(proto, BatchedArray::identity(1, n));
}

template <class T>
T zeros(const T& proto, const Shape& item) {
  Shape s{1};
  s.insert(s.end(), item.begin(), item.end());
  return constant_like(proto, BatchedArray(s));
}

// Column k of a (B, d) array as (B, 1).
template <class T>
T col(const T& v, std::int64_t k) {
  return slice(v, 1, k, 1);
}

// Per-row coefficient: closed form away from zero, series below `thr`
// (compared against the primal theta^2). The closed form never sees a
// zero argument.
template <class T, class Exact, class Series>
T coef(const T& t2, double thr, Exact exact, Series series) {
  const Mask small = less_than(value(t2), thr);
  const T safe = select(small, cst(t2, 1.0), t2);
  return select(small, series(t2), exact(safe));
}

// (B,3) -> (B,3,3) skew matrix.
template <class T>
T hat3(const T& w) {
  const T x = col(w, 0), y = col(w, 1), z = col(w, 2);
  const T o = zeros_of(x);
  return reshape(concat(std::vector<T>{o, neg(z), y, z, o, neg(x), neg(y), x, o}, 1), Shape{3, 3});
}

// (B,3,3) -> (B,3) axial vector of the skew part, vee((M - M^T) / 2).
template <class T>
T vee_skew3(const T& m) {
  const T f = reshape(m, Shape{9});
  return scale(concat(std::vector<T>{sub(col(f, 7), col(f, 5)), sub(col(f, 2), col(f, 6)), sub(col(f, 3), col(f, 1))},
                      1),
               0.5);
}

template <class T>
T rot(const T& g, std::int64_t n) {
  return slice(g, 2, 0, n);
}

template <class T>
T trans(const T& g, std::int64_t n) {
  return slice(g, 2, n, 1);
}

template <class T>
T join(const T& r, const T& t) {
  return concat(std::vector<T>{r, t}, 2);
}

// 2x2 block matrix [[a, b], [c, d]] from (B, m, n) blocks.
template <class T>
T blocks(const T& a, const T& b, const T& c, const T& d) {
  return concat(std::vector<T>{concat(std::vector<T>{a, b}, 2), concat(std::vector<T>{c, d}, 2)}, 1);
}

template <class T>
T as_col(const T& v, std::int64_t n) {
  return reshape(v, Shape{n, 1});
}

template <class T>
T as_vec(const T& v, std::int64_t n) {
  return reshape(v, Shape{n});
}

// SO(3) coefficient families, all functions of theta^2.
template <class T>
T so3_A(const T& t2) {  // sin t / t
  return coef(
      t2, kSmallAngle2, [](const T& s) { const T th = sqrt(s); return div(sin(th), th); },
      [](const T& s) { return add_scalar(scale(s, -1.0 / 6.0), 1.0); });
}

template <class T>
T so3_B(const T& t2) {  // (1 - cos t) / t^2, as 2 sin^2(t/2) / t^2
  return coef(
      t2, kSmallAngle2,
      [](const T& s) {
        const T h = sin(scale(sqrt(s), 0.5));
        return div(scale(mul(h, h), 2.0), s);
      },
      [](const T& s) { return add_scalar(scale(s, -1.0 / 24.0), 0.5); });
}

template <class T>
T so3_C(const T& t2) {  // (t - sin t) / t^3
  return coef(
      t2, kSeriesAngle2,
      [](const T& s) {
        const T th = sqrt(s);
        return div(sub(th, sin(th)), mul(s, th));
      },
      [](const T& s) { return add_scalar(mul(add_scalar(mul(add_scalar(scale(s, -1.0 / 362880.0), 1.0 / 5040.0), s), -1.0 / 120.0), s), 1.0 / 6.0); });
}

template <class T>
T so3_D(const T& t2) {  // 1/t^2 - cos(t/2) / (2 t sin(t/2))
  return coef(
      t2, kSeriesAngle2,
      [](const T& s) {
        const T th = sqrt(s);
        const T h = scale(th, 0.5);
        return sub(div(cst(s, 1.0), s), div(cos(h), scale(mul(th, sin(h)), 2.0)));
      },
      [](const T& s) { return add_scalar(mul(add_scalar(mul(add_scalar(scale(s, 1.0 / 1209600.0), 1.0 / 30240.0), s), 1.0 / 720.0), s), 1.0 / 12.0); });
}

template <class T>
T se3_c2(const T& t2) {  // (t^2 + 2 cos t - 2) / (2 t^4)
  return coef(
      t2, kSeriesAngle2,
      [](const T& s) {
        const T th = sqrt(s);
        return div(add_scalar(add(s, scale(cos(th), 2.0)), -2.0), scale(mul(s, s), 2.0));
      },
      [](const T& s) { return add_scalar(mul(add_scalar(mul(add_scalar(scale(s, -1.0 / 3628800.0), 1.0 / 40320.0), s), -1.0 / 720.0), s), 1.0 / 24.0); });
}

template <class T>
T se3_c3(const T& t2) {  // (2t - 3 sin t + t cos t) / (2 t^5)
  return coef(
      t2, kSeriesAngle2,
      [](const T& s) {
        const T th = sqrt(s);
        const T num = add(sub(scale(th, 2.0), scale(sin(th), 3.0)), mul(th, cos(th)));
        return div(num, scale(mul(mul(s, s), th), 2.0));
      },
      [](const T& s) {
        return add_scalar(mul(add_scalar(mul(add_scalar(scale(s, -1.0 / 9979200.0), 1.0 / 120960.0), s), -1.0 / 2520.0), s), 1.0 / 120.0);
      });
}

// SO(3) left Jacobian translation coupling Q(rho, phi) for SE(3).
template <class T>
T se3_Ql(const T& rho, const T& phi) {
  const T P = hat3(rho);
  const T F = hat3(phi);
  const T t2 = squared_norm(phi);
  const T FP = matmul(F, P), PF = matmul(P, F), FPF = matmul(FP, F);
  const T FFP = matmul(F, FP), PFF = matmul(PF, F);
  const T FPFF = matmul(FPF, F), FFPF = matmul(F, FPF);
  T q = scale(P, 0.5);
  q = add(q, scale(add(add(FP, PF), FPF), so3_C(t2)));
  q = add(q, scale(sub(add(FFP, PFF), scale(FPF, 3.0)), se3_c2(t2)));
  q = add(q, scale(add(FPFF, FFPF), se3_c3(t2)));
  return q;
}

// SE(2) coefficients of the angle w (not squared): a = sin w / w, b = (1 - cos w) / w.
template <class T>
void se2_ab(const T& w, T& a, T& b) {
  const T t2 = mul(w, w);
  const Mask small = less_than(value(t2), kSmallAngle2);
  const T safe = select(small, cst(w, 1.0), w);
  a = select(small, add_scalar(scale(t2, -1.0 / 6.0), 1.0), div(sin(safe), safe));
  const T h = sin(scale(safe, 0.5));
  b = select(small, mul(w, add_scalar(scale(t2, -1.0 / 24.0), 0.5)), div(scale(mul(h, h), 2.0), safe));
}

// SE(2) Jacobian coefficients e = (w - sin w) / w^2, f = (1 - cos w) / w^2.
template <class T>
void se2_ef(const T& w, T& e, T& f) {
  const T t2 = mul(w, w);
  const Mask small = less_than(value(t2), kSeriesAngle2);
  const T safe = select(small, cst(w, 1.0), w);
  const T s2 = mul(safe, safe);
  e = select(small,
             mul(w, add_scalar(mul(add_scalar(mul(add_scalar(scale(t2, -1.0 / 362880.0), 1.0 / 5040.0), t2), -1.0 / 120.0), t2), 1.0 / 6.0)),
             div(sub(safe, sin(safe)), s2));
  const T h = sin(scale(safe, 0.5));
  f = select(small, add_scalar(mul(add_scalar(mul(add_scalar(scale(t2, -1.0 / 40320.0), 1.0 / 720.0), t2), -1.0 / 24.0), t2), 0.5),
             div(scale(mul(h, h), 2.0), s2));
}

template <class T>
T rot2(const T& c, const T& s) {
  return reshape(concat(std::vector<T>{c, neg(s), s, c}, 1), Shape{2, 2});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Group maps

template <class T>
T exp_map(Group kind, const T& xi) {
  using namespace detail;
  check_tangent(kind, value(xi), "exp_map");
  switch (kind) {
    case Group::SO2:
      return rot2(cos(xi), sin(xi));
    case Group::SE2: {
      const T vx = col(xi, 0), vy = col(xi, 1), w = col(xi, 2);
      T a, b;
      se2_ab(w, a, b);
      const T tx = sub(mul(a, vx), mul(b, vy));
      const T ty = add(mul(b, vx), mul(a, vy));
      const T c = cos(w), s = sin(w);
      return reshape(concat(std::vector<T>{c, neg(s), tx, s, c, ty}, 1), Shape{2, 3});
    }
    case Group::SO3: {
      const T t2 = squared_norm(xi);
      const T W = hat3(xi);
      return add(add(eye(xi, 3), scale(W, so3_A(t2))), scale(matmul(W, W), so3_B(t2)));
    }
    case Group::SE3: {
      const T v = slice(xi, 1, 0, 3), w = slice(xi, 1, 3, 3);
      const T t2 = squared_norm(w);
      const T W = hat3(w);
      const T W2 = matmul(W, W);
      const T B = so3_B(t2);
      const T R = add(add(eye(xi, 3), scale(W, so3_A(t2))), scale(W2, B));
      const T V = add(add(eye(xi, 3), scale(W, B)), scale(W2, so3_C(t2)));
      return join(R, matmul(V, as_col(v, 3)));
    }
  }
  throw Error("exp_map: unknown group");
}

template <class T>
T log_map(Group kind, const T& g) {
  using namespace detail;
  check_shape(kind, value(g), "log_map");
  switch (kind) {
    case Group::SO2: {
      const T f = reshape(g, Shape{4});
      return atan2(col(f, 2), col(f, 0));
    }
    case Group::SE2: {
      const T f = reshape(g, Shape{6});
      const T w = atan2(col(f, 3), col(f, 0));
      const T tx = col(f, 2), ty = col(f, 5);
      T a, b;
      se2_ab(w, a, b);
      const T den = add(mul(a, a), mul(b, b));
      const T vx = div(add(mul(a, tx), mul(b, ty)), den);
      const T vy = div(sub(mul(a, ty), mul(b, tx)), den);
      return concat(std::vector<T>{vx, vy, w}, 1);
    }
    case Group::SO3:
    case Group::SE3: {
      check_branch(kind, value(g));
      const T R = kind == Group::SO3 ? g : rot(g, 3);
      const T f = reshape(R, Shape{9});
      const T s = vee_skew3(R);
      const T c = scale(add_scalar(add(add(col(f, 0), col(f, 4)), col(f, 8)), -1.0), 0.5);
      const T n2 = squared_norm(s);
      // theta / sin(theta) with sin(theta) = |s|; the series branch is only
      // valid near the identity (cos theta > 0).
      Mask small = less_than(value(n2), kSmallAngle2);
      const BatchedArray& cv = value(c);
      for (std::size_t r = 0; r < small.size(); ++r) small[r] = small[r] && cv[static_cast<std::int64_t>(r)] > 0.0;
      const T safe = select(small, cst(n2, 1.0), n2);
      const T n = sqrt(safe);
      const T factor = select(small, add_scalar(scale(n2, 1.0 / 6.0), 1.0), div(atan2(n, c), n));
      const T w = scale(s, factor);
      if (kind == Group::SO3) return w;
      const T t2 = squared_norm(w);
      const T W = hat3(w);
      const T Vinv = add(sub(eye(w, 3), scale(W, 0.5)), scale(matmul(W, W), so3_D(t2)));
      const T v = as_vec(matmul(Vinv, trans(g, 3)), 3);
      return concat(std::vector<T>{v, w}, 1);
    }
  }
  throw Error("log_map: unknown group");
}

template <class T>
T compose(Group kind, const T& a, const T& b) {
  using namespace detail;
  check_shape(kind, value(a), "compose");
  check_shape(kind, value(b), "compose");
  if (!has_translation(kind)) return matmul(a, b);
  const std::int64_t n = rot_dim(kind);
  const T Ra = rot(a, n);
  return join(matmul(Ra, rot(b, n)), add(matmul(Ra, trans(b, n)), trans(a, n)));
}

template <class T>
T inverse(Group kind, const T& g) {
  using namespace detail;
  check_shape(kind, value(g), "inverse");
  if (!has_translation(kind)) return transpose(g);
  const std::int64_t n = rot_dim(kind);
  const T Rt = transpose(rot(g, n));
  return join(Rt, neg(matmul(Rt, trans(g, n))));
}

template <class T>
T retract(Group kind, const T& g, const T& delta) {
  return compose(kind, g, exp_map(kind, delta));
}

template <class T>
T local(Group kind, const T& a, const T& b) {
  return log_map(kind, compose(kind, inverse(kind, a), b));
}


// ---------------------------------------------------------------------------
// Analytic tangent-space derivatives, each (B, d, d). With the right
// convention the derivative of f at x is the map between right increments:
// f(x exp(d)) = f(x) exp(J d) to first order.

template <class T>
T adjoint(Group kind, const T& g) {
  using namespace detail;
  switch (kind) {
    case Group::SO2:
      return add_scalar(scale(reshape(slice(reshape(g, Shape{4}), 1, 0, 1), Shape{1, 1}), 0.0), 1.0);
    case Group::SO3:
      return g;
    case Group::SE2: {
      const T f = reshape(g, Shape{6});
      const T o = zeros_of(col(f, 0));
      const T one = add_scalar(o, 1.0);
      return reshape(concat(std::vector<T>{col(f, 0), col(f, 1), col(f, 5), col(f, 3), col(f, 4), neg(col(f, 2)), o, o, one},
                            1),
                     Shape{3, 3});
    }
    case Group::SE3: {
      const T R = rot(g, 3);
      const T tR = matmul(hat3(as_vec(trans(g, 3), 3)), R);
      return blocks(R, tR, zeros(g, Shape{3, 3}), R);
    }
  }
  throw Error("adjoint: unknown group");
}

template <class T>
T right_jacobian(Group kind, const T& xi) {
  using namespace detail;
  switch (kind) {
    case Group::SO2:
      return add_scalar(scale(reshape(xi, Shape{1, 1}), 0.0), 1.0);
    case Group::SO3: {
      const T t2 = squared_norm(xi);
      const T W = hat3(xi);
      return add(sub(eye(xi, 3), scale(W, so3_B(t2))), scale(matmul(W, W), so3_C(t2)));
    }
    case Group::SE2: {
      const T vx = col(xi, 0), vy = col(xi, 1), w = col(xi, 2);
      T a, b, e, f;
      se2_ab(w, a, b);
      se2_ef(w, e, f);
      const T p = sub(mul(vx, e), mul(vy, f));
      const T q = add(mul(vx, f), mul(vy, e));
      const T o = zeros_of(w);
      return reshape(concat(std::vector<T>{a, b, p, neg(b), a, q, o, o, add_scalar(o, 1.0)}, 1), Shape{3, 3});
    }
    case Group::SE3: {
      const T v = slice(xi, 1, 0, 3), w = slice(xi, 1, 3, 3);
      const T J = right_jacobian(Group::SO3, w);
      const T Q = se3_Ql(neg(v), neg(w));
      return blocks(J, Q, zeros(xi, Shape{3, 3}), J);
    }
  }
  throw Error("right_jacobian: unknown group");
}

template <class T>
T right_jacobian_inv(Group kind, const T& xi) {
  using namespace detail;
  switch (kind) {
    case Group::SO2:
      return right_jacobian(kind, xi);
    case Group::SO3: {
      const T t2 = squared_norm(xi);
      const T W = hat3(xi);
      return add(add(eye(xi, 3), scale(W, 0.5)), scale(matmul(W, W), so3_D(t2)));
    }
    case Group::SE2: {
      const T vx = col(xi, 0), vy = col(xi, 1), w = col(xi, 2);
      T a, b, e, f;
      se2_ab(w, a, b);
      se2_ef(w, e, f);
      const T p = sub(mul(vx, e), mul(vy, f));
      const T q = add(mul(vx, f), mul(vy, e));
      const T den = add(mul(a, a), mul(b, b));
      const T ia = div(a, den), ib = div(b, den);
      // [[ia, -ib], [ib, ia]] is M^-1; last column is -M^-1 (p, q).
      const T pp = neg(sub(mul(ia, p), mul(ib, q)));
      const T qq = neg(add(mul(ib, p), mul(ia, q)));
      const T o = zeros_of(w);
      return reshape(concat(std::vector<T>{ia, neg(ib), pp, ib, ia, qq, o, o, add_scalar(o, 1.0)}, 1), Shape{3, 3});
    }
    case Group::SE3: {
      const T v = slice(xi, 1, 0, 3), w = slice(xi, 1, 3, 3);
      const T Ji = right_jacobian_inv(Group::SO3, w);
      const T Q = se3_Ql(neg(v), neg(w));
      return blocks(Ji, neg(matmul(matmul(Ji, Q), Ji)), zeros(xi, Shape{3, 3}), Ji);
    }
  }
  throw Error("right_jacobian_inv: unknown group");
}

// d exp(xi) / d xi
template <class T>
T jacobian_exp(Group kind, const T& xi) {
  return right_jacobian(kind, xi);
}

// d log(g) / d g
template <class T>
T jacobian_log(Group kind, const T& g) {
  return right_jacobian_inv(kind, log_map(kind, g));
}

// d compose(a, b) / d a and / d b.
template <class T>
void jacobian_compose(Group kind, const T& a, const T& b, T* ja, T* jb) {
  (void)a;
  if (ja != nullptr) *ja = adjoint(kind, inverse(kind, b));
  if (jb != nullptr) *jb = detail::eye(b, tangent_dim(kind));
}

// d inverse(g) / d g
template <class T>
T jacobian_inverse(Group kind, const T& g) {
  return neg(adjoint(kind, g));
}

// d retract(g, delta) / d g and / d delta.
template <class T>
void jacobian_retract(Group kind, const T& g, const T& delta, T* jg, T* jd) {
  (void)g;
  if (jg != nullptr) *jg = adjoint(kind, inverse(kind, exp_map(kind, delta)));
  if (jd != nullptr) *jd = right_jacobian(kind, delta);
}

// d local(a, b) / d a and / d b. Also returns the value when `out` is set.
template <class T>
void jacobian_local(Group kind, const T& a, const T& b, T* ja, T* jb, T* out = nullptr) {
  const T rel = compose(kind, inverse(kind, a), b);
  const T r = log_map(kind, rel);
  const T Ji = right_jacobian_inv(kind, r);
  if (ja != nullptr) *ja = neg(matmul(Ji, adjoint(kind, inverse(kind, rel))));
  if (jb != nullptr) *jb = Ji;
  if (out != nullptr) *out = r;
}

// ---------------------------------------------------------------------------
// Tangent directions and gradient projection.

// Generator G_i of the algebra as a (1, k, k) constant, k = n for SO(n) and
// n + 1 for SE(n) (homogeneous form, last row zero).
const BatchedArray& generator(Group kind, std::int64_t i);
// <G_i, G_i> restricted to the stored rows: 2 for rotational, 1 for
// translational generators.
double generator_norm2(Group kind, std::int64_t i);

// Embedding-space direction of the curve g exp(s e_i) at s = 0, i.e. g G_i.
template <class T>
T tangent_direction(Group kind, const T& g, std::int64_t i) {
  return matmul(g, constant_like(g, generator(kind, i)));
}

// Coordinates <E, g G_i>: converts a gradient with respect to the matrix
// entries of g into the tangent gradient.
BatchedArray project_gradient(Group kind, const BatchedArray& g, const BatchedArray& euclidean_grad);
// Embedding-space gradient whose projection is `tangent_grad`, supported on
// the span of the g G_i.
BatchedArray lift_gradient(Group kind, const BatchedArray& g, const BatchedArray& tangent_grad);

// Finite-difference leaf that moves along right increments.
LeafSpec leaf_spec(Group kind, BatchedArray g);

// Rotation angle per row, (B, 1).
BatchedArray rotation_angle(Group kind, const BatchedArray& g);

// Element-level convenience wrappers with kind checking.
LieGroupElement exp_element(Group kind, const BatchedArray& xi);
LieGroupElement compose(const LieGroupElement& a, const LieGroupElement& b);
LieGroupElement inverse(const LieGroupElement& g);
LieGroupElement retract(const LieGroupElement& g, const BatchedArray& delta);
BatchedArray log_map(const LieGroupElement& g);
BatchedArray local(const LieGroupElement& a, const LieGroupElement& b);

}  // namespace dnls::lie
