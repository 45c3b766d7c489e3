// SPDX-License-Identifier: Apache-2.0
#include "dnls/sparse/cholesky.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <string>
#include <string_view>

#include "dnls/error.hpp"
#include "dnls/tensor/kernels.hpp"

namespace dnls::sparse {

namespace {

using I = std::int64_t;

std::atomic<std::uint64_t> g_factorizations{0};
std::atomic<std::uint64_t> g_solves{0};
#ifdef NDEBUG
std::atomic<bool> g_debug{false};
#else
std::atomic<bool> g_debug{true};
#endif

template <class V>
std::size_t sz(V v) {
  return static_cast<std::size_t>(v);
}

// Per-lane pivot thresholds from the largest diagonal entry of H.
std::vector<double> pivot_thresholds(const SymbolicFactorization& s, const BatchedArray& h, double tol) {
  const I B = h.batch();
  const I nnz = h.item_size();
  std::vector<double> t(sz(B), 0.0);
  for (I b = 0; b < B; ++b) {
    double m = 0.0;
    for (I j = 0; j < s.n; ++j) {
      // First entry of each lower column of C is its diagonal.
      m = std::max(m, std::abs(h[b * nnz + s.Cv[sz(s.Cp[sz(j)])]]));
    }
    t[sz(b)] = tol * m;
  }
  return t;
}

// d <- sqrt(d), marking lanes whose pivot is too small (their pivot becomes 1
// so the remaining arithmetic stays finite).
void take_pivot(double* d, const std::vector<double>& thr, std::vector<std::uint8_t>& failed,
                const kernels::KernelTable& K) {
  const std::size_t B = thr.size();
  for (std::size_t l = 0; l < B; ++l) {
    if (!(d[l] > thr[l]) || !std::isfinite(d[l])) {
      failed[l] = 1;
      d[l] = 1.0;
    }
  }
  K.lane_sqrt(d, d, B);
}

void factor_simplicial(const SymbolicFactorization& s, const BatchedArray& h, NumericFactor& f,
                       const std::vector<double>& thr) {
  const auto& K = kernels::active();
  const I n = s.n;
  const I B = f.lanes;
  const I nnz = h.item_size();
  f.values.assign(sz(s.nnz_l() * B), 0.0);
  double* Lx = f.values.data();
  Buffer x(sz(n * B), 0.0);
  std::vector<double> lki(sz(B));
  std::vector<I> next(s.Lp.begin(), s.Lp.end() - 1);
  std::vector<I> mark(sz(n), -1);
  std::vector<I> stack(sz(n));
  for (I k = 0; k < n; ++k) {
    I top = n;
    mark[sz(k)] = k;
    for (I p = s.Up[sz(k)]; p < s.Up[sz(k) + 1]; ++p) {
      I i = s.Ui[sz(p)];
      double* xi = x.data() + i * B;
      for (I l = 0; l < B; ++l) xi[l] = h[l * nnz + s.Uv[sz(p)]];
      I len = 0;
      for (; mark[sz(i)] != k; i = s.sparent[sz(i)]) {
        stack[sz(len++)] = i;
        mark[sz(i)] = k;
      }
      while (len > 0) stack[sz(--top)] = stack[sz(--len)];
    }
    double* d = x.data() + k * B;
    std::vector<double> dk(d, d + B);
    std::fill(d, d + B, 0.0);
    for (I t = top; t < n; ++t) {
      const I i = stack[sz(t)];
      double* xi = x.data() + i * B;
      K.lane_div(xi, Lx + s.Lp[sz(i)] * B, lki.data(), sz(B));
      std::fill(xi, xi + B, 0.0);
      for (I p = s.Lp[sz(i)] + 1; p < next[sz(i)]; ++p) {
        K.lane_sub_mul(Lx + p * B, lki.data(), x.data() + s.Li[sz(p)] * B, sz(B));
      }
      K.lane_sub_mul(lki.data(), lki.data(), dk.data(), sz(B));
      const I p = next[sz(i)]++;
      if (s.Li[sz(p)] != k) throw Error("numeric_factorize: symbolic structure does not match elimination");
      std::copy(lki.begin(), lki.end(), Lx + p * B);
    }
    take_pivot(dk.data(), thr, f.failed, K);
    const I p = next[sz(k)]++;
    std::copy(dk.begin(), dk.end(), Lx + p * B);
  }
}

void factor_supernodal(const SymbolicFactorization& s, const BatchedArray& h, NumericFactor& f,
                       const std::vector<double>& thr) {
  const auto& K = kernels::active();
  const I B = f.lanes;
  const I nnz = h.item_size();
  f.values.assign(sz(s.panel_size * B), 0.0);
  double* V = f.values.data();
  std::vector<I> rel(sz(s.n), -1);
  for (std::size_t si = 0; si < s.supernodes.size(); ++si) {
    const Supernode& sn = s.supernodes[si];
    const I nr = static_cast<I>(sn.rows.size());
    const I w = sn.width;
    double* P = V + sn.offset * B;
    auto at = [&](I r, I c) { return P + (c * nr + r) * B; };
    for (I r = 0; r < nr; ++r) rel[sz(sn.rows[sz(r)])] = r;

    for (I c = 0; c < w; ++c) {
      const I j = sn.col0 + c;
      for (I p = s.Cp[sz(j)]; p < s.Cp[sz(j) + 1]; ++p) {
        double* dst = at(rel[sz(s.Ci[sz(p)])], c);
        for (I l = 0; l < B; ++l) dst[l] = h[l * nnz + s.Cv[sz(p)]];
      }
    }

    for (const PanelUpdate& u : s.updates[si]) {
      const Supernode& st = s.supernodes[sz(u.source)];
      const I nrt = static_cast<I>(st.rows.size());
      const double* T = V + st.offset * B;
      const std::size_t stride = sz(nrt * B);
      for (I jj = u.row_begin; jj < u.row_end; ++jj) {
        const I c = st.rows[sz(jj)] - sn.col0;
        for (I ii = jj; ii < nrt; ++ii) {
          K.lane_sub_dot(T + ii * B, stride, T + jj * B, stride, sz(st.width), at(rel[sz(st.rows[sz(ii)])], c),
                         sz(B));
        }
      }
    }

    const std::size_t stride = sz(nr * B);
    for (I c = 0; c < w; ++c) {
      if (c > 0) {
        for (I r = c; r < nr; ++r) K.lane_sub_dot(at(r, 0), stride, at(c, 0), stride, sz(c), at(r, c), sz(B));
      }
      take_pivot(at(c, c), thr, f.failed, K);
      for (I r = c + 1; r < nr; ++r) K.lane_div(at(r, c), at(c, c), at(r, c), sz(B));
    }
  }
}

I panel_row(const Supernode& sn, I i) {
  auto it = std::lower_bound(sn.rows.begin(), sn.rows.end(), i);
  if (it == sn.rows.end() || *it != i) return -1;
  return static_cast<I>(it - sn.rows.begin());
}

}  // namespace

Counters counters() noexcept { return {g_factorizations.load(), g_solves.load()}; }
void reset_counters() noexcept {
  g_factorizations = 0;
  g_solves = 0;
}
void count_factorization() noexcept { ++g_factorizations; }
void count_solve() noexcept { ++g_solves; }
void set_debug_checks(bool on) noexcept { g_debug = on; }
bool debug_checks() noexcept { return g_debug.load(); }

std::uint64_t values_checksum(const BatchedArray& h) {
  const std::string_view bytes(reinterpret_cast<const char*>(h.data()), sz(h.numel()) * sizeof(double));
  return std::hash<std::string_view>{}(bytes) ^ static_cast<std::uint64_t>(h.numel());
}

bool NumericFactor::any_failed() const {
  return std::any_of(failed.begin(), failed.end(), [](std::uint8_t v) { return v != 0; });
}

std::int64_t NumericFactor::num_failed() const {
  return std::count_if(failed.begin(), failed.end(), [](std::uint8_t v) { return v != 0; });
}

double NumericFactor::l_entry(std::int64_t b, std::int64_t i, std::int64_t j) const {
  const auto& s = *symbolic;
  if (i < j) return 0.0;
  if (method == FactorMethod::Simplicial) {
    auto first = s.Li.begin() + s.Lp[sz(j)];
    auto last = s.Li.begin() + s.Lp[sz(j) + 1];
    auto it = std::lower_bound(first, last, i);
    if (it == last || *it != i) return 0.0;
    return values[sz((it - s.Li.begin()) * lanes + b)];
  }
  const Supernode& sn = s.supernodes[sz(s.col_super[sz(j)])];
  const I r = panel_row(sn, i);
  if (r < 0) return 0.0;
  const I nr = static_cast<I>(sn.rows.size());
  return values[sz((sn.offset + (j - sn.col0) * nr + r) * lanes + b)];
}

BatchedArray NumericFactor::l_values() const {
  const auto& s = *symbolic;
  BatchedArray out(Shape{lanes, s.nnz_l()});
  for (I j = 0; j < s.n; ++j) {
    for (I p = s.Lp[sz(j)]; p < s.Lp[sz(j) + 1]; ++p) {
      for (I b = 0; b < lanes; ++b) out.at(b, p) = l_entry(b, s.Li[sz(p)], j);
    }
  }
  return out;
}

BatchedArray NumericFactor::diagonal() const {
  const auto& s = *symbolic;
  BatchedArray out(Shape{lanes, s.n});
  for (I j = 0; j < s.n; ++j) {
    for (I b = 0; b < lanes; ++b) out.at(b, j) = l_entry(b, j, j);
  }
  return out;
}

NumericFactor numeric_factorize(const SymbolicPtr& sym, const BatchedArray& h, const FactorOptions& opts) {
  if (!sym) throw Error("numeric_factorize: missing symbolic factorization");
  const auto& s = *sym;
  if (h.rank() != 2 || h.dim(1) != s.nnz_h) {
    throw ShapeError("numeric_factorize: H values have shape " + h.shape_string() + ", pattern expects (B, " +
                     std::to_string(s.nnz_h) + ")");
  }
  NumericFactor f;
  f.symbolic = sym;
  f.method = opts.method;
  f.lanes = h.batch();
  f.failed.assign(sz(f.lanes), 0);
  f.checksum = values_checksum(h);
  const std::vector<double> thr = pivot_thresholds(s, h, opts.pivot_tol);
  if (opts.method == FactorMethod::Simplicial) {
    factor_simplicial(s, h, f, thr);
  } else {
    factor_supernodal(s, h, f, thr);
  }
  count_factorization();
  return f;
}

BatchedArray solve(const NumericFactor& f, const BatchedArray& b, const SolveOptions& opts) {
  const auto& s = *f.symbolic;
  const I n = s.n;
  const I B = f.lanes;
  if (b.rank() != 2 || b.dim(1) != n || b.batch() != B) {
    throw ShapeError("solve: right-hand side has shape " + b.shape_string() + ", factor expects (" +
                     std::to_string(B) + ", " + std::to_string(n) + ")");
  }
  if (!opts.zero_failed && f.any_failed()) {
    for (I l = 0; l < B; ++l) {
      if (f.failed[sz(l)]) {
        throw FactorizationError("solve: factorization of batch element " + std::to_string(l) +
                                 " failed (matrix not positive definite)");
      }
    }
  }
  const auto& K = kernels::active();
  Buffer y(sz(n * B));
  for (I i = 0; i < n; ++i) {
    for (I l = 0; l < B; ++l) y[sz(i * B + l)] = b.at(l, s.scalar_perm[sz(i)]);
  }
  double* Y = y.data();
  const double* V = f.values.data();
  if (f.method == FactorMethod::Simplicial) {
    for (I j = 0; j < n; ++j) {
      double* yj = Y + j * B;
      K.lane_div(yj, V + s.Lp[sz(j)] * B, yj, sz(B));
      for (I p = s.Lp[sz(j)] + 1; p < s.Lp[sz(j) + 1]; ++p) K.lane_sub_mul(V + p * B, yj, Y + s.Li[sz(p)] * B, sz(B));
    }
    for (I j = n - 1; j >= 0; --j) {
      double* yj = Y + j * B;
      for (I p = s.Lp[sz(j)] + 1; p < s.Lp[sz(j) + 1]; ++p) K.lane_sub_mul(V + p * B, Y + s.Li[sz(p)] * B, yj, sz(B));
      K.lane_div(yj, V + s.Lp[sz(j)] * B, yj, sz(B));
    }
  } else {
    for (const Supernode& sn : s.supernodes) {
      const I nr = static_cast<I>(sn.rows.size());
      const double* P = V + sn.offset * B;
      for (I c = 0; c < sn.width; ++c) {
        double* yj = Y + (sn.col0 + c) * B;
        const double* col = P + c * nr * B;
        K.lane_div(yj, col + c * B, yj, sz(B));
        for (I r = c + 1; r < nr; ++r) K.lane_sub_mul(col + r * B, yj, Y + sn.rows[sz(r)] * B, sz(B));
      }
    }
    for (auto it = s.supernodes.rbegin(); it != s.supernodes.rend(); ++it) {
      const Supernode& sn = *it;
      const I nr = static_cast<I>(sn.rows.size());
      const double* P = V + sn.offset * B;
      for (I c = sn.width - 1; c >= 0; --c) {
        double* yj = Y + (sn.col0 + c) * B;
        const double* col = P + c * nr * B;
        for (I r = c + 1; r < nr; ++r) K.lane_sub_mul(col + r * B, Y + sn.rows[sz(r)] * B, yj, sz(B));
        K.lane_div(yj, col + c * B, yj, sz(B));
      }
    }
  }
  BatchedArray x(Shape{B, n});
  for (I i = 0; i < n; ++i) {
    for (I l = 0; l < B; ++l) x.at(l, s.scalar_perm[sz(i)]) = f.failed[sz(l)] ? 0.0 : y[sz(i * B + l)];
  }
  count_solve();
  return x;
}

}  // namespace dnls::sparse
