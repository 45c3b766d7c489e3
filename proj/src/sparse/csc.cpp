// SPDX-License-Identifier: Apache-2.0
#include "dnls/sparse/csc.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "dnls/error.hpp"

namespace dnls::sparse {

namespace {
using I = std::int64_t;
template <class V>
std::size_t sz(V v) {
  return static_cast<std::size_t>(v);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}
}  // namespace

CscMatrix CscMatrix::from_triplets(I n, const std::vector<I>& rows, const std::vector<I>& cols,
                                   const std::vector<double>& vals) {
  if (rows.size() != cols.size() || rows.size() != vals.size()) throw Error("CscMatrix: triplet arrays differ in length");
  std::map<std::pair<I, I>, double> acc;  // (col, row), duplicates summed
  for (std::size_t e = 0; e < rows.size(); ++e) {
    if (rows[e] < 0 || rows[e] >= n || cols[e] < 0 || cols[e] >= n) throw Error("CscMatrix: index out of range");
    acc[{cols[e], rows[e]}] += vals[e];
  }
  CscMatrix m;
  m.n = n;
  m.colptr.assign(sz(n) + 1, 0);
  for (const auto& [k, v] : acc) {
    ++m.colptr[sz(k.first) + 1];
    m.rowidx.push_back(k.second);
    m.values.push_back(v);
  }
  for (I j = 0; j < n; ++j) m.colptr[sz(j) + 1] += m.colptr[sz(j)];
  return m;
}

CscMatrix CscMatrix::from_dense(I n, const std::vector<double>& a) {
  if (static_cast<I>(a.size()) != n * n) throw Error("CscMatrix: dense array has wrong size");
  std::vector<I> r, c;
  std::vector<double> v;
  for (I j = 0; j < n; ++j) {
    for (I i = 0; i < n; ++i) {
      if (a[sz(i * n + j)] != 0.0) {
        r.push_back(i);
        c.push_back(j);
        v.push_back(a[sz(i * n + j)]);
      }
    }
  }
  return from_triplets(n, r, c, v);
}

std::vector<double> CscMatrix::to_dense() const {
  std::vector<double> a(sz(n * n), 0.0);
  for (I j = 0; j < n; ++j) {
    for (I p = colptr[sz(j)]; p < colptr[sz(j) + 1]; ++p) a[sz(rowidx[sz(p)] * n + j)] = values[sz(p)];
  }
  return a;
}

CscMatrix read_matrix_market(std::istream& in) {
  std::string line;
  int ln = 0;
  if (!std::getline(in, line)) throw ParseError("empty Matrix Market stream", 1);
  ++ln;
  std::istringstream hdr(line);
  std::string banner, object, format, field, symmetry;
  hdr >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket" || lower(object) != "matrix" || lower(format) != "coordinate") {
    throw ParseError("expected a '%%MatrixMarket matrix coordinate' header", ln);
  }
  if (lower(field) != "real" && lower(field) != "integer") throw ParseError("unsupported field '" + field + "'", ln);
  const std::string sym = lower(symmetry);
  if (sym != "general" && sym != "symmetric") throw ParseError("unsupported symmetry '" + symmetry + "'", ln);
  I nr = -1, nc = -1, nz = -1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty() || line[0] == '%') continue;
    std::istringstream s(line);
    if (!(s >> nr >> nc >> nz) || nr <= 0 || nc != nr || nz < 0) throw ParseError("bad size line (square matrix expected)", ln);
    break;
  }
  if (nr < 0) throw ParseError("missing size line", ln);
  std::vector<I> r, c;
  std::vector<double> v;
  I read = 0;
  while (read < nz && std::getline(in, line)) {
    ++ln;
    if (line.empty() || line[0] == '%') continue;
    std::istringstream s(line);
    I i = 0, j = 0;
    double x = 0.0;
    if (!(s >> i >> j >> x)) throw ParseError("bad entry line", ln);
    if (i < 1 || j < 1 || i > nr || j > nc) throw ParseError("entry index out of range", ln);
    if (sym == "symmetric" && i < j) throw ParseError("symmetric file has an entry above the diagonal", ln);
    ++read;
    r.push_back(i - 1);
    c.push_back(j - 1);
    v.push_back(x);
    if (sym == "symmetric" && i != j) {
      r.push_back(j - 1);
      c.push_back(i - 1);
      v.push_back(x);
    }
  }
  if (read < nz) throw ParseError("file ends before all entries were read", ln);
  return CscMatrix::from_triplets(nr, r, c, v);
}

CscMatrix read_matrix_market_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  return read_matrix_market(f);
}

void write_matrix_market(std::ostream& out, const CscMatrix& a, bool symmetric) {
  I count = 0;
  for (I j = 0; j < a.n; ++j) {
    for (I p = a.colptr[sz(j)]; p < a.colptr[sz(j) + 1]; ++p) {
      if (!symmetric || a.rowidx[sz(p)] >= j) ++count;
    }
  }
  out << "%%MatrixMarket matrix coordinate real " << (symmetric ? "symmetric" : "general") << "\n";
  out << a.n << " " << a.n << " " << count << "\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (I j = 0; j < a.n; ++j) {
    for (I p = a.colptr[sz(j)]; p < a.colptr[sz(j) + 1]; ++p) {
      const I i = a.rowidx[sz(p)];
      if (symmetric && i < j) continue;
      out << i + 1 << " " << j + 1 << " " << a.values[sz(p)] << "\n";
    }
  }
}

SparseCholesky::SparseCholesky(const CscMatrix& a, const SymbolicOptions& sopts, const FactorOptions& fopts)
    : fopts_(fopts) {
  if (static_cast<I>(a.colptr.size()) != a.n + 1) throw Error("SparseCholesky: malformed column pointers");
  std::vector<std::pair<int, int>> edges;
  lower_colptr_.assign(sz(a.n) + 1, 0);
  for (I j = 0; j < a.n; ++j) {
    bool diag = false;
    for (I p = a.colptr[sz(j)]; p < a.colptr[sz(j) + 1]; ++p) {
      const I i = a.rowidx[sz(p)];
      if (i < j) continue;
      if (i == j) diag = true;
      if (i > j) edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
      lower_rowidx_.push_back(i);
    }
    lower_colptr_[sz(j) + 1] = static_cast<I>(lower_rowidx_.size());
    if (!diag) throw Error("SparseCholesky: structurally singular matrix (no diagonal entry in column " + std::to_string(j) + ")");
  }
  pattern_ = BlockPattern::from_blocks(std::vector<I>(sz(a.n), 1), edges);
  sym_ = symbolic_analyze(pattern_, sopts);
  refactor(a);
}

BatchedArray SparseCholesky::values_of(const CscMatrix& a) const {
  if (a.n != pattern_.dim()) throw Error("SparseCholesky: matrix size changed");
  BatchedArray h(Shape{1, pattern_.nnz()});
  I k = 0;
  for (I j = 0; j < a.n; ++j) {
    for (I p = a.colptr[sz(j)]; p < a.colptr[sz(j) + 1]; ++p) {
      const I i = a.rowidx[sz(p)];
      if (i < j) continue;
      if (k >= static_cast<I>(lower_rowidx_.size()) || lower_rowidx_[sz(k)] != i) {
        throw Error("SparseCholesky: matrix pattern differs from the analyzed one");
      }
      ++k;
      h[pattern_.find(i, j)] = a.values[sz(p)];
      h[pattern_.find(j, i)] = a.values[sz(p)];
    }
    if (k != lower_colptr_[sz(j) + 1]) throw Error("SparseCholesky: matrix pattern differs from the analyzed one");
  }
  if (k != static_cast<I>(lower_rowidx_.size())) throw Error("SparseCholesky: matrix pattern differs from the analyzed one");
  return h;
}

void SparseCholesky::refactor(const CscMatrix& a) { factor_ = numeric_factorize(sym_, values_of(a), fopts_); }

std::vector<double> SparseCholesky::solve(const std::vector<double>& b) const {
  if (static_cast<I>(b.size()) != pattern_.dim()) throw Error("SparseCholesky: right-hand side has wrong length");
  BatchedArray x = sparse::solve(factor_, BatchedArray(Shape{1, pattern_.dim()}, b));
  return {x.data(), x.data() + x.numel()};
}

}  // namespace dnls::sparse
