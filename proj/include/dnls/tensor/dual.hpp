// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "dnls/tensor/ops.hpp"

namespace dnls {

// Forward-mode value: a primal plus one tangent per seed direction. A missing
// tangent is an exact zero, so constants cost nothing. `A` is BatchedArray or
// Var; with Var every tangent operation is itself recorded, which is how
// Jacobians become differentiable inside unrolled solves.
template <class A>
struct Dual {
  A primal;
  std::vector<std::optional<A>> tangents;

  std::size_t seeds() const noexcept { return tangents.size(); }
};

template <class A>
const BatchedArray& value(const Dual<A>& d) {
  return value(d.primal);
}

template <class A>
Dual<A> constant_like(const Dual<A>& proto, BatchedArray c) {
  return Dual<A>{constant_like(proto.primal, std::move(c)), {}};
}

template <class A>
A zeros_of(const A& proto) {
  return constant_like(proto, BatchedArray(value(proto).shape()));
}

namespace dual_detail {

template <class A>
const std::optional<A>& tangent(const Dual<A>& d, std::size_t i) {
  static const std::optional<A> none;
  return i < d.tangents.size() ? d.tangents[i] : none;
}

template <class A>
std::size_t width(const Dual<A>& a, const Dual<A>& b) {
  return std::max(a.tangents.size(), b.tangents.size());
}

// Tangent-wise map for unary ops.
template <class A, class F>
Dual<A> map1(A primal, const Dual<A>& a, F f) {
  Dual<A> out{std::move(primal), {}};
  out.tangents.resize(a.tangents.size());
  for (std::size_t i = 0; i < a.tangents.size(); ++i) {
    if (a.tangents[i]) out.tangents[i] = f(*a.tangents[i]);
  }
  return out;
}

}  // namespace dual_detail

template <class A>
Dual<A> add(const Dual<A>& a, const Dual<A>& b) {
  using namespace dual_detail;
  Dual<A> out{add(a.primal, b.primal), {}};
  out.tangents.resize(width(a, b));
  for (std::size_t i = 0; i < out.tangents.size(); ++i) {
    const auto& ta = tangent(a, i);
    const auto& tb = tangent(b, i);
    if (ta && tb) out.tangents[i] = add(*ta, *tb);
    else if (ta) out.tangents[i] = *ta;
    else if (tb) out.tangents[i] = *tb;
  }
  return out;
}

template <class A>
Dual<A> sub(const Dual<A>& a, const Dual<A>& b) {
  using namespace dual_detail;
  Dual<A> out{sub(a.primal, b.primal), {}};
  out.tangents.resize(width(a, b));
  for (std::size_t i = 0; i < out.tangents.size(); ++i) {
    const auto& ta = tangent(a, i);
    const auto& tb = tangent(b, i);
    if (ta && tb) out.tangents[i] = sub(*ta, *tb);
    else if (ta) out.tangents[i] = *ta;
    else if (tb) out.tangents[i] = neg(*tb);
  }
  return out;
}

template <class A>
Dual<A> mul(const Dual<A>& a, const Dual<A>& b) {
  using namespace dual_detail;
  Dual<A> out{mul(a.primal, b.primal), {}};
  out.tangents.resize(width(a, b));
  for (std::size_t i = 0; i < out.tangents.size(); ++i) {
    const auto& ta = tangent(a, i);
    const auto& tb = tangent(b, i);
    if (ta && tb) out.tangents[i] = add(mul(*ta, b.primal), mul(a.primal, *tb));
    else if (ta) out.tangents[i] = mul(*ta, b.primal);
    else if (tb) out.tangents[i] = mul(a.primal, *tb);
  }
  return out;
}

template <class A>
Dual<A> div(const Dual<A>& a, const Dual<A>& b) {
  using namespace dual_detail;
  A q = div(a.primal, b.primal);
  Dual<A> out{q, {}};
  out.tangents.resize(width(a, b));
  for (std::size_t i = 0; i < out.tangents.size(); ++i) {
    const auto& ta = tangent(a, i);
    const auto& tb = tangent(b, i);
    if (ta && tb) out.tangents[i] = div(sub(*ta, mul(q, *tb)), b.primal);
    else if (ta) out.tangents[i] = div(*ta, b.primal);
    else if (tb) out.tangents[i] = neg(div(mul(q, *tb), b.primal));
  }
  return out;
}

template <class A>
Dual<A> neg(const Dual<A>& a) {
  return dual_detail::map1(neg(a.primal), a, [](const A& t) { return neg(t); });
}

template <class A>
Dual<A> exp(const Dual<A>& a) {
  A e = exp(a.primal);
  return dual_detail::map1(e, a, [&](const A& t) { return mul(t, e); });
}

template <class A>
Dual<A> log(const Dual<A>& a) {
  return dual_detail::map1(log(a.primal), a, [&](const A& t) { return div(t, a.primal); });
}

template <class A>
Dual<A> sin(const Dual<A>& a) {
  A c = cos(a.primal);
  return dual_detail::map1(sin(a.primal), a, [&](const A& t) { return mul(t, c); });
}

template <class A>
Dual<A> cos(const Dual<A>& a) {
  A s = sin(a.primal);
  return dual_detail::map1(cos(a.primal), a, [&](const A& t) { return neg(mul(t, s)); });
}

template <class A>
Dual<A> sqrt(const Dual<A>& a) {
  A r = sqrt(a.primal);
  return dual_detail::map1(r, a, [&](const A& t) { return scale(div(t, r), 0.5); });
}

template <class A>
Dual<A> atan2(const Dual<A>& y, const Dual<A>& x) {
  using namespace dual_detail;
  Dual<A> out{atan2(y.primal, x.primal), {}};
  out.tangents.resize(width(y, x));
  if (out.tangents.empty()) return out;
  A r2 = add(mul(x.primal, x.primal), mul(y.primal, y.primal));
  for (std::size_t i = 0; i < out.tangents.size(); ++i) {
    const auto& ty = tangent(y, i);
    const auto& tx = tangent(x, i);
    if (ty && tx) out.tangents[i] = div(sub(mul(x.primal, *ty), mul(y.primal, *tx)), r2);
    else if (ty) out.tangents[i] = div(mul(x.primal, *ty), r2);
    else if (tx) out.tangents[i] = neg(div(mul(y.primal, *tx), r2));
  }
  return out;
}

template <class A>
Dual<A> scale(const Dual<A>& a, double s) {
  return dual_detail::map1(scale(a.primal, s), a, [s](const A& t) { return scale(t, s); });
}

template <class A>
Dual<A> add_scalar(const Dual<A>& a, double s) {
  return dual_detail::map1(add_scalar(a.primal, s), a, [](const A& t) { return t; });
}

template <class A>
Dual<A> scale(const Dual<A>& a, const Dual<A>& s) {
  using namespace dual_detail;
  Dual<A> out{scale(a.primal, s.primal), {}};
  out.tangents.resize(width(a, s));
  for (std::size_t i = 0; i < out.tangents.size(); ++i) {
    const auto& ta = tangent(a, i);
    const auto& ts = tangent(s, i);
    if (ta && ts) out.tangents[i] = add(scale(*ta, s.primal), scale(a.primal, *ts));
    else if (ta) out.tangents[i] = scale(*ta, s.primal);
    else if (ts) out.tangents[i] = scale(a.primal, *ts);
  }
  return out;
}

template <class A>
Dual<A> matmul(const Dual<A>& a, const Dual<A>& b) {
  using namespace dual_detail;
  Dual<A> out{matmul(a.primal, b.primal), {}};
  out.tangents.resize(width(a, b));
  for (std::size_t i = 0; i < out.tangents.size(); ++i) {
    const auto& ta = tangent(a, i);
    const auto& tb = tangent(b, i);
    if (ta && tb) out.tangents[i] = add(matmul(*ta, b.primal), matmul(a.primal, *tb));
    else if (ta) out.tangents[i] = matmul(*ta, b.primal);
    else if (tb) out.tangents[i] = matmul(a.primal, *tb);
  }
  return out;
}

template <class A>
Dual<A> transpose(const Dual<A>& a) {
  return dual_detail::map1(transpose(a.primal), a, [](const A& t) { return transpose(t); });
}

template <class A>
Dual<A> sum(const Dual<A>& a) {
  return dual_detail::map1(sum(a.primal), a, [](const A& t) { return sum(t); });
}

template <class A>
Dual<A> squared_norm(const Dual<A>& a) {
  return dual_detail::map1(squared_norm(a.primal), a,
                           [&](const A& t) { return scale(sum(mul(a.primal, t)), 2.0); });
}

template <class A>
Dual<A> slice(const Dual<A>& a, int axis, std::int64_t start, std::int64_t len) {
  return dual_detail::map1(slice(a.primal, axis, start, len), a,
                           [&](const A& t) { return slice(t, axis, start, len); });
}

template <class A>
Dual<A> reshape(const Dual<A>& a, const Shape& item_shape) {
  return dual_detail::map1(reshape(a.primal, item_shape), a, [&](const A& t) { return reshape(t, item_shape); });
}

template <class A>
Dual<A> slice_rows(const Dual<A>& a, std::int64_t start, std::int64_t count) {
  // Tangents of batch-1 leaves stay batch 1 and are shared by every row.
  return dual_detail::map1(slice_rows(a.primal, start, count), a, [&](const A& t) {
    return value(t).batch() == 1 ? t : slice_rows(t, start, count);
  });
}

template <class A>
Dual<A> fold_batch(const Dual<A>& a, std::int64_t groups) {
  return dual_detail::map1(fold_batch(a.primal, groups), a, [&](const A& t) {
    return value(t).batch() == 1 ? scale(t, static_cast<double>(groups)) : fold_batch(t, groups);
  });
}

namespace dual_detail {

// Joins several duals with `join`, filling absent tangents with zeros shaped
// like the matching primal (broadcast to the primal's batch).
template <class A, class Join>
Dual<A> join_all(const std::vector<Dual<A>>& parts, Join join) {
  std::vector<A> primals;
  primals.reserve(parts.size());
  std::size_t w = 0;
  for (const auto& p : parts) {
    primals.push_back(p.primal);
    w = std::max(w, p.tangents.size());
  }
  Dual<A> out{join(primals), {}};
  out.tangents.resize(w);
  for (std::size_t i = 0; i < w; ++i) {
    bool any = false;
    for (const auto& p : parts) any = any || tangent(p, i).has_value();
    if (!any) continue;
    std::vector<A> ts;
    ts.reserve(parts.size());
    for (const auto& p : parts) {
      const auto& t = tangent(p, i);
      const std::int64_t rows = value(p.primal).batch();
      if (t && value(*t).batch() == rows) {
        ts.push_back(*t);
      } else if (t) {
        ts.push_back(add(*t, zeros_of(p.primal)));
      } else {
        ts.push_back(zeros_of(p.primal));
      }
    }
    out.tangents[i] = join(ts);
  }
  return out;
}

}  // namespace dual_detail

template <class A>
Dual<A> concat(const std::vector<Dual<A>>& parts, int axis) {
  return dual_detail::join_all(parts, [axis](const std::vector<A>& v) { return concat(v, axis); });
}

template <class A>
Dual<A> concat_batch(const std::vector<Dual<A>>& parts) {
  return dual_detail::join_all(parts, [](const std::vector<A>& v) { return concat_batch(v); });
}

template <class A>
Dual<A> select(const Mask& mask, const Dual<A>& a, const Dual<A>& b) {
  using namespace dual_detail;
  Dual<A> out{select(mask, a.primal, b.primal), {}};
  out.tangents.resize(width(a, b));
  for (std::size_t i = 0; i < out.tangents.size(); ++i) {
    const auto& ta = tangent(a, i);
    const auto& tb = tangent(b, i);
    if (!ta && !tb) continue;
    out.tangents[i] = select(mask, ta ? *ta : zeros_of(a.primal), tb ? *tb : zeros_of(b.primal));
  }
  return out;
}

}  // namespace dnls
