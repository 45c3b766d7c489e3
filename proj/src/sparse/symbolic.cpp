// SPDX-License-Identifier: Apache-2.0
#include "dnls/sparse/symbolic.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <tuple>

#include "dnls/error.hpp"

namespace dnls::sparse {

namespace {

using I = std::int64_t;

template <class V>
std::size_t sz(V v) {
  return static_cast<std::size_t>(v);
}

void fnv(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 1099511628211ull;
  }
}

struct BlockTree {
  std::vector<int> parent;
  std::vector<std::vector<int>> lblocks;
};

BlockTree block_tree(const BlockPattern& p, const std::vector<int>& perm, const std::vector<int>& iperm) {
  const int nb = static_cast<int>(perm.size());
  BlockTree t;
  t.parent.assign(sz(nb), -1);
  t.lblocks.assign(sz(nb), {});
  std::vector<std::vector<int>> children(sz(nb));
  for (int k = 0; k < nb; ++k) {
    std::vector<int> s;
    for (int r : p.adjacency(perm[sz(k)])) {
      const int kk = iperm[sz(r)];
      if (kk > k) s.push_back(kk);
    }
    for (int c : children[sz(k)]) {
      for (int r : t.lblocks[sz(c)]) {
        if (r != k) s.push_back(r);
      }
    }
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (!s.empty()) {
      t.parent[sz(k)] = s.front();
      children[sz(s.front())].push_back(k);
    }
    t.lblocks[sz(k)] = std::move(s);
  }
  return t;
}

// Children visited in increasing order, roots in increasing order.
std::vector<int> postorder(const std::vector<int>& parent) {
  const int n = static_cast<int>(parent.size());
  std::vector<std::vector<int>> children(sz(n));
  std::vector<int> roots;
  for (int k = 0; k < n; ++k) {
    if (parent[sz(k)] < 0) {
      roots.push_back(k);
    } else {
      children[sz(parent[sz(k)])].push_back(k);
    }
  }
  std::vector<int> post;
  post.reserve(sz(n));
  std::vector<std::pair<int, std::size_t>> stack;
  for (int r : roots) {
    stack.emplace_back(r, 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < children[sz(node)].size()) {
        const int c = children[sz(node)][next++];
        stack.emplace_back(c, 0);
      } else {
        post.push_back(node);
        stack.pop_back();
      }
    }
  }
  return post;
}

}  // namespace

std::uint64_t pattern_hash(const BlockPattern& p) {
  std::uint64_t h = 1469598103934665603ull;
  for (I d : p.block_dims()) fnv(h, static_cast<std::uint64_t>(d));
  fnv(h, 0xfeedu);
  for (I c : p.colptr()) fnv(h, static_cast<std::uint64_t>(c));
  for (I r : p.rowidx()) fnv(h, static_cast<std::uint64_t>(r));
  return h;
}

std::vector<int> min_degree_order(const BlockPattern& p) {
  const int nb = static_cast<int>(p.num_blocks());
  std::vector<std::set<int>> g(sz(nb));
  for (int c = 0; c < nb; ++c) {
    for (int r : p.adjacency(c)) {
      if (r != c) g[sz(c)].insert(r);
    }
  }
  std::vector<I> deg(sz(nb), 0);
  std::set<std::pair<I, int>> queue;
  auto degree = [&](int v) {
    I d = 0;
    for (int u : g[sz(v)]) d += p.block_dim(u);
    return d;
  };
  for (int v = 0; v < nb; ++v) {
    deg[sz(v)] = degree(v);
    queue.emplace(deg[sz(v)], v);
  }
  // One node per step; equal degrees go to the lowest index.
  std::vector<int> order;
  order.reserve(sz(nb));
  while (!queue.empty()) {
    const int v = queue.begin()->second;
    queue.erase(queue.begin());
    order.push_back(v);
    std::vector<int> nbrs(g[sz(v)].begin(), g[sz(v)].end());
    for (int a : nbrs) {
      queue.erase({deg[sz(a)], a});
      g[sz(a)].erase(v);
    }
    for (std::size_t i = 0; i < nbrs.size(); ++i) {
      for (std::size_t j = i + 1; j < nbrs.size(); ++j) {
        g[sz(nbrs[i])].insert(nbrs[j]);
        g[sz(nbrs[j])].insert(nbrs[i]);
      }
    }
    for (int a : nbrs) {
      deg[sz(a)] = degree(a);
      queue.emplace(deg[sz(a)], a);
    }
    g[sz(v)].clear();
  }
  return order;
}

SymbolicPtr symbolic_analyze(const BlockPattern& pattern, const SymbolicOptions& opts) {
  const int nb = static_cast<int>(pattern.num_blocks());
  std::vector<int> perm(sz(nb));
  if (opts.ordering == Ordering::Identity) {
    for (int k = 0; k < nb; ++k) perm[sz(k)] = k;
    return symbolic_analyze(pattern, perm, opts);
  }
  perm = min_degree_order(pattern);
  // A postorder of the elimination tree has the same fill and keeps subtrees
  // contiguous, which is what supernode detection needs.
  std::vector<int> iperm(sz(nb));
  for (int k = 0; k < nb; ++k) iperm[sz(perm[sz(k)])] = k;
  const BlockTree t = block_tree(pattern, perm, iperm);
  const std::vector<int> post = postorder(t.parent);
  std::vector<int> perm2(sz(nb));
  for (int k = 0; k < nb; ++k) perm2[sz(k)] = perm[sz(post[sz(k)])];
  return symbolic_analyze(pattern, perm2, opts);
}

SymbolicPtr symbolic_analyze(const BlockPattern& pattern, const std::vector<int>& block_perm,
                             const SymbolicOptions& opts) {
  const int nb = static_cast<int>(pattern.num_blocks());
  if (static_cast<int>(block_perm.size()) != nb) throw Error("symbolic_analyze: permutation has wrong length");
  auto s = std::make_shared<SymbolicFactorization>();
  s->perm = block_perm;
  s->iperm.assign(sz(nb), -1);
  for (int k = 0; k < nb; ++k) {
    const int b = block_perm[sz(k)];
    if (b < 0 || b >= nb || s->iperm[sz(b)] != -1) throw Error("symbolic_analyze: block order is not a permutation");
    s->iperm[sz(b)] = k;
  }
  for (int b = 0; b < nb; ++b) {
    if (!pattern.has_block(b, b)) {
      throw Error("symbolic_analyze: structurally singular pattern (empty diagonal block " + std::to_string(b) + ")");
    }
  }

  BlockTree t = block_tree(pattern, s->perm, s->iperm);
  s->parent = std::move(t.parent);
  s->lblocks = std::move(t.lblocks);

  s->n = pattern.dim();
  s->nnz_h = pattern.nnz();
  s->pdim.resize(sz(nb));
  s->poff.resize(sz(nb));
  I off = 0;
  for (int k = 0; k < nb; ++k) {
    s->pdim[sz(k)] = pattern.block_dim(s->perm[sz(k)]);
    s->poff[sz(k)] = off;
    off += s->pdim[sz(k)];
  }
  const I n = s->n;
  s->scalar_perm.resize(sz(n));
  s->scalar_iperm.resize(sz(n));
  for (int k = 0; k < nb; ++k) {
    const I o = pattern.block_offset(s->perm[sz(k)]);
    for (I a = 0; a < s->pdim[sz(k)]; ++a) {
      s->scalar_perm[sz(s->poff[sz(k)] + a)] = o + a;
      s->scalar_iperm[sz(o + a)] = s->poff[sz(k)] + a;
    }
  }

  // Scalar structure of L: the rest of the diagonal block plus every row of
  // each block listed in lblocks.
  s->Lp.assign(sz(n) + 1, 0);
  s->col_counts.assign(sz(n), 0);
  s->sparent.assign(sz(n), -1);
  for (int k = 0; k < nb; ++k) {
    for (I a = 0; a < s->pdim[sz(k)]; ++a) {
      const I j = s->poff[sz(k)] + a;
      for (I r = a; r < s->pdim[sz(k)]; ++r) s->Li.push_back(s->poff[sz(k)] + r);
      for (int rb : s->lblocks[sz(k)]) {
        for (I r = 0; r < s->pdim[sz(rb)]; ++r) s->Li.push_back(s->poff[sz(rb)] + r);
      }
      s->Lp[sz(j) + 1] = static_cast<I>(s->Li.size());
      s->col_counts[sz(j)] = s->Lp[sz(j) + 1] - s->Lp[sz(j)];
      if (s->col_counts[sz(j)] > 1) s->sparent[sz(j)] = s->Li[sz(s->Lp[sz(j)] + 1)];
    }
  }

  // Triangles of C = P H P^T with the H value index of every entry.
  {
    std::vector<std::tuple<I, I, I>> up, lo;
    const auto& cp = pattern.colptr();
    const auto& ri = pattern.rowidx();
    for (I q = 0; q < n; ++q) {
      const I jc = s->scalar_iperm[sz(q)];
      for (I p = cp[sz(q)]; p < cp[sz(q) + 1]; ++p) {
        const I i = s->scalar_iperm[sz(ri[sz(p)])];
        if (i <= jc) up.emplace_back(jc, i, p);
        if (i >= jc) lo.emplace_back(jc, i, p);
      }
    }
    std::sort(up.begin(), up.end());
    std::sort(lo.begin(), lo.end());
    auto fill = [n](const std::vector<std::tuple<I, I, I>>& v, std::vector<I>& P, std::vector<I>& R,
                    std::vector<I>& X) {
      P.assign(sz(n) + 1, 0);
      R.resize(v.size());
      X.resize(v.size());
      for (std::size_t e = 0; e < v.size(); ++e) {
        const auto& [c, r, x] = v[e];
        ++P[sz(c) + 1];
        R[e] = r;
        X[e] = x;
      }
      for (I c = 0; c < n; ++c) P[sz(c) + 1] += P[sz(c)];
    };
    fill(up, s->Up, s->Ui, s->Uv);
    fill(lo, s->Cp, s->Ci, s->Cv);
  }
  s->fill_in = s->nnz_l() - static_cast<I>(s->Ci.size());

  // Supernodes.
  auto below = [&](int k) {
    I c = 0;
    for (int rb : s->lblocks[sz(k)]) c += s->pdim[sz(rb)];
    return c;
  };
  int k = 0;
  while (k < nb) {
    Supernode sn;
    sn.first_block = k;
    int last = k;
    while (opts.merge && last + 1 < nb && s->parent[sz(last)] == last + 1) {
      const I denom = below(last + 1);
      const I num = below(last) - s->pdim[sz(last + 1)];
      const double overlap = denom == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(denom);
      if (opts.merge_threshold > 1.0 || overlap < opts.merge_threshold) break;
      ++last;
    }
    sn.end_block = last + 1;
    sn.col0 = s->poff[sz(k)];
    sn.width = s->poff[sz(last)] + s->pdim[sz(last)] - sn.col0;
    std::vector<int> rb;
    for (int b = k; b <= last; ++b) {
      for (int r : s->lblocks[sz(b)]) {
        if (r > last) rb.push_back(r);
      }
    }
    std::sort(rb.begin(), rb.end());
    rb.erase(std::unique(rb.begin(), rb.end()), rb.end());
    for (I c = 0; c < sn.width; ++c) sn.rows.push_back(sn.col0 + c);
    for (int r : rb) {
      for (I i = 0; i < s->pdim[sz(r)]; ++i) sn.rows.push_back(s->poff[sz(r)] + i);
    }
    sn.offset = s->panel_size;
    s->panel_size += static_cast<I>(sn.rows.size()) * sn.width;
    s->supernodes.push_back(std::move(sn));
    k = last + 1;
  }
  s->col_super.assign(sz(n), 0);
  for (std::size_t si = 0; si < s->supernodes.size(); ++si) {
    const auto& sn = s->supernodes[si];
    for (I c = 0; c < sn.width; ++c) s->col_super[sz(sn.col0 + c)] = static_cast<int>(si);
  }
  s->updates.assign(s->supernodes.size(), {});
  for (std::size_t ti = 0; ti < s->supernodes.size(); ++ti) {
    const auto& sn = s->supernodes[ti];
    const I nr = static_cast<I>(sn.rows.size());
    I i = sn.width;
    while (i < nr) {
      const int target = s->col_super[sz(sn.rows[sz(i)])];
      I e = i;
      while (e < nr && s->col_super[sz(sn.rows[sz(e)])] == target) ++e;
      s->updates[sz(target)].push_back({static_cast<int>(ti), i, e});
      i = e;
    }
  }
  s->pattern_hash = pattern_hash(pattern);
  return s;
}

}  // namespace dnls::sparse
