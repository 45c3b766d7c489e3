// SPDX-License-Identifier: Apache-2.0
#include "dnls/lie/lie.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dnls::lie {

const char* group_name(Group g) noexcept {
  switch (g) {
    case Group::SO2: return "SO2";
    case Group::SE2: return "SE2";
    case Group::SO3: return "SO3";
    case Group::SE3: return "SE3";
  }
  return "?";
}

std::int64_t tangent_dim(Group g) noexcept {
  switch (g) {
    case Group::SO2: return 1;
    case Group::SE2: return 3;
    case Group::SO3: return 3;
    case Group::SE3: return 6;
  }
  return 0;
}

Shape item_shape(Group g) {
  const std::int64_t n = rot_dim(g);
  return has_translation(g) ? Shape{n, n + 1} : Shape{n, n};
}

void check_shape(Group kind, const BatchedArray& g, const char* op) {
  const Shape want = item_shape(kind);
  if (g.item_shape() != want) {
    throw ShapeError(std::string(op) + ": " + group_name(kind) + " element must have item shape " +
                     shape_string(want) + ", got " + g.shape_string());
  }
}

void check_tangent(Group kind, const BatchedArray& xi, const char* op) {
  if (xi.rank() != 2 || xi.dim(1) != tangent_dim(kind)) {
    throw ShapeError(std::string(op) + ": " + group_name(kind) + " tangent must be (B, " +
                     std::to_string(tangent_dim(kind)) + "), got " + xi.shape_string());
  }
}

namespace {

// Row-major n x n rotation block of row r.
void rotation_block(Group kind, const BatchedArray& g, std::int64_t r, double* R) {
  const std::int64_t n = rot_dim(kind);
  const std::int64_t cols = has_translation(kind) ? n + 1 : n;
  const double* p = g.item(r);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) R[i * n + j] = p[i * cols + j];
  }
}

double det(const double* R, std::int64_t n) {
  if (n == 2) return R[0] * R[3] - R[1] * R[2];
  return R[0] * (R[4] * R[8] - R[5] * R[7]) - R[1] * (R[3] * R[8] - R[5] * R[6]) +
         R[2] * (R[3] * R[7] - R[4] * R[6]);
}

}  // namespace

BatchedArray rotation_angle(Group kind, const BatchedArray& g) {
  check_shape(kind, g, "rotation_angle");
  BatchedArray out({g.batch(), 1});
  double R[9];
  for (std::int64_t r = 0; r < g.batch(); ++r) {
    rotation_block(kind, g, r, R);
    if (rot_dim(kind) == 2) {
      out[r] = std::atan2(R[2], R[0]);
    } else {
      const double sx = 0.5 * (R[7] - R[5]), sy = 0.5 * (R[2] - R[6]), sz = 0.5 * (R[3] - R[1]);
      const double c = 0.5 * (R[0] + R[4] + R[8] - 1.0);
      out[r] = std::atan2(std::sqrt(sx * sx + sy * sy + sz * sz), c);
    }
  }
  return out;
}

void check_branch(Group kind, const BatchedArray& g) {
  if (rot_dim(kind) != 3) return;
  const BatchedArray th = rotation_angle(kind, g);
  for (std::int64_t r = 0; r < th.batch(); ++r) {
    if (!(th[r] < std::numbers::pi - kBranchMargin)) {
      throw BranchCutError(std::string("log_map: ") + group_name(kind) + " rotation angle " + std::to_string(th[r]) +
                           " at row " + std::to_string(r) + " is on the branch cut at pi");
    }
  }
}

double orthonormality_error(Group kind, const BatchedArray& data) {
  check_shape(kind, data, "orthonormality_error");
  const std::int64_t n = rot_dim(kind);
  double worst = 0.0;
  double R[9];
  for (std::int64_t r = 0; r < data.batch(); ++r) {
    rotation_block(kind, data, r, R);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < n; ++k) acc += R[k * n + i] * R[k * n + j];
        worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
      }
    }
    worst = std::max(worst, std::abs(det(R, n) - 1.0));
  }
  return worst;
}

BatchedArray orthonormalize(Group kind, const BatchedArray& data) {
  check_shape(kind, data, "orthonormalize");
  const std::int64_t n = rot_dim(kind);
  const std::int64_t cols = has_translation(kind) ? n + 1 : n;
  BatchedArray out = data;
  for (std::int64_t r = 0; r < out.batch(); ++r) {
    double* p = out.item(r);
    // Modified Gram-Schmidt on the columns; for n = 3 the last column is
    // rebuilt as a cross product so the determinant stays +1.
    for (std::int64_t j = 0; j < n; ++j) {
      if (n == 3 && j == 2) {
        p[0 * cols + 2] = p[1 * cols + 0] * p[2 * cols + 1] - p[2 * cols + 0] * p[1 * cols + 1];
        p[1 * cols + 2] = p[2 * cols + 0] * p[0 * cols + 1] - p[0 * cols + 0] * p[2 * cols + 1];
        p[2 * cols + 2] = p[0 * cols + 0] * p[1 * cols + 1] - p[1 * cols + 0] * p[0 * cols + 1];
        break;
      }
      for (std::int64_t k = 0; k < j; ++k) {
        double d = 0.0;
        for (std::int64_t i = 0; i < n; ++i) d += p[i * cols + j] * p[i * cols + k];
        for (std::int64_t i = 0; i < n; ++i) p[i * cols + j] -= d * p[i * cols + k];
      }
      double nrm = 0.0;
      for (std::int64_t i = 0; i < n; ++i) nrm += p[i * cols + j] * p[i * cols + j];
      nrm = std::sqrt(nrm);
      if (!(nrm > 0.0)) throw Error("orthonormalize: degenerate rotation block at row " + std::to_string(r));
      for (std::int64_t i = 0; i < n; ++i) p[i * cols + j] /= nrm;
    }
    if (n == 2) {
      // Second column is the +90 degree rotation of the first.
      p[0 * cols + 1] = -p[1 * cols + 0];
      p[1 * cols + 1] = p[0 * cols + 0];
    }
  }
  return out;
}

LieGroupElement::LieGroupElement(Group kind, BatchedArray data, double tol) : kind_(kind), data_(std::move(data)) {
  check_shape(kind_, data_, "LieGroupElement");
  if (!data_.all_finite()) throw NonFiniteError("LieGroupElement: non-finite entries");
  const double err = orthonormality_error(kind_, data_);
  if (!(err <= tol)) {
    throw Error(std::string("LieGroupElement: ") + group_name(kind_) + " rotation block is not orthonormal with det +1 (error " +
                std::to_string(err) + ")");
  }
}

LieGroupElement LieGroupElement::identity(Group kind, std::int64_t batch) {
  Shape s{batch};
  const Shape item = item_shape(kind);
  s.insert(s.end(), item.begin(), item.end());
  BatchedArray d(s);
  const std::int64_t n = rot_dim(kind), cols = item[1];
  for (std::int64_t r = 0; r < batch; ++r) {
    for (std::int64_t i = 0; i < n; ++i) d.item(r)[i * cols + i] = 1.0;
  }
  return LieGroupElement(kind, std::move(d));
}

namespace {

struct GeneratorSet {
  std::vector<BatchedArray> g;
  std::vector<double> norm2;
};

GeneratorSet make_generators(Group kind) {
  GeneratorSet s;
  const std::int64_t n = rot_dim(kind);
  const std::int64_t k = has_translation(kind) ? n + 1 : n;
  auto blank = [&] { return BatchedArray({1, k, k}); };
  auto set = [&](BatchedArray& m, std::int64_t i, std::int64_t j, double v) { m[i * k + j] = v; };
  auto rot_gen = [&](int axis) {
    BatchedArray m = blank();
    if (n == 2) {
      set(m, 0, 1, -1.0);
      set(m, 1, 0, 1.0);
    } else {
      // hat(e_axis)
      const int a = (axis + 1) % 3, b = (axis + 2) % 3;
      set(m, b, a, 1.0);
      set(m, a, b, -1.0);
    }
    return m;
  };
  if (has_translation(kind)) {
    for (std::int64_t i = 0; i < n; ++i) {
      BatchedArray m = blank();
      set(m, i, n, 1.0);
      s.g.push_back(m);
      s.norm2.push_back(1.0);
    }
  }
  const int nrot = n == 2 ? 1 : 3;
  for (int a = 0; a < nrot; ++a) {
    s.g.push_back(rot_gen(a));
    s.norm2.push_back(2.0);
  }
  return s;
}

const GeneratorSet& generators(Group kind) {
  static const GeneratorSet sets[4] = {make_generators(Group::SO2), make_generators(Group::SE2),
                                       make_generators(Group::SO3), make_generators(Group::SE3)};
  return sets[static_cast<int>(kind)];
}

}  // namespace

const BatchedArray& generator(Group kind, std::int64_t i) {
  const auto& s = generators(kind);
  if (i < 0 || i >= static_cast<std::int64_t>(s.g.size())) throw Error("generator: index out of range");
  return s.g[static_cast<std::size_t>(i)];
}

double generator_norm2(Group kind, std::int64_t i) {
  (void)generator(kind, i);
  return generators(kind).norm2[static_cast<std::size_t>(i)];
}

BatchedArray project_gradient(Group kind, const BatchedArray& g, const BatchedArray& euclidean_grad) {
  check_shape(kind, g, "project_gradient");
  if (euclidean_grad.item_shape() != g.item_shape() ||
      (euclidean_grad.batch() != g.batch() && euclidean_grad.batch() != 1)) {
    throw ShapeError("project_gradient: gradient " + euclidean_grad.shape_string() + " does not match element " +
                     g.shape_string());
  }
  const std::int64_t d = tangent_dim(kind);
  const std::int64_t sz = g.item_size();
  BatchedArray out({g.batch(), d});
  for (std::int64_t i = 0; i < d; ++i) {
    const BatchedArray dir = tangent_direction(kind, g, i);
    for (std::int64_t r = 0; r < g.batch(); ++r) {
      const double* e = euclidean_grad.item(euclidean_grad.batch() == 1 ? 0 : r);
      const double* p = dir.item(r);
      double acc = 0.0;
      for (std::int64_t j = 0; j < sz; ++j) acc += e[j] * p[j];
      out.at(r, i) = acc;
    }
  }
  return out;
}

BatchedArray lift_gradient(Group kind, const BatchedArray& g, const BatchedArray& tangent_grad) {
  check_shape(kind, g, "lift_gradient");
  check_tangent(kind, tangent_grad, "lift_gradient");
  BatchedArray out(g.shape());
  for (std::int64_t i = 0; i < tangent_dim(kind); ++i) {
    const BatchedArray w = scale(slice(tangent_grad, 1, i, 1), 1.0 / generator_norm2(kind, i));
    out = add(out, scale(tangent_direction(kind, g, i), w));
  }
  return out;
}

LeafSpec leaf_spec(Group kind, BatchedArray g) {
  check_shape(kind, g, "leaf_spec");
  LeafSpec s;
  s.tangent_dim = tangent_dim(kind);
  s.value = std::move(g);
  s.retract = [kind](const BatchedArray& x, const BatchedArray& delta) { return retract(kind, x, delta); };
  return s;
}

namespace {
void same_kind(const LieGroupElement& a, const LieGroupElement& b, const char* op) {
  if (a.kind() != b.kind()) {
    throw Error(std::string(op) + ": kind mismatch " + group_name(a.kind()) + " vs " + group_name(b.kind()));
  }
}
// Closed-form outputs only carry rounding drift, so validation is loose.
LieGroupElement wrap(Group kind, BatchedArray d) { return LieGroupElement(kind, std::move(d), 1e-6); }
}  // namespace

LieGroupElement exp_element(Group kind, const BatchedArray& xi) { return wrap(kind, exp_map(kind, xi)); }

LieGroupElement compose(const LieGroupElement& a, const LieGroupElement& b) {
  same_kind(a, b, "compose");
  return wrap(a.kind(), compose(a.kind(), a.data(), b.data()));
}

LieGroupElement inverse(const LieGroupElement& g) { return wrap(g.kind(), inverse(g.kind(), g.data())); }

LieGroupElement retract(const LieGroupElement& g, const BatchedArray& delta) {
  return wrap(g.kind(), retract(g.kind(), g.data(), delta));
}

BatchedArray log_map(const LieGroupElement& g) { return log_map(g.kind(), g.data()); }

BatchedArray local(const LieGroupElement& a, const LieGroupElement& b) {
  same_kind(a, b, "local");
  return local(a.kind(), a.data(), b.data());
}

}  // namespace dnls::lie
