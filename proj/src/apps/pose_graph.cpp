// SPDX-License-Identifier: Apache-2.0
#include "dnls/apps/pose_graph.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "dnls/core/cost.hpp"

namespace dnls::apps {

namespace {

Shape pose_shape(lie::Group k, std::int64_t batch) {
  const Shape item = lie::item_shape(k);
  return Shape{batch, item[0], item[1]};
}

Manifold manifold(lie::Group k) { return manifold_of(k); }

}  // namespace

// ---------------------------------------------------------------------------

std::size_t information_size(lie::Group kind) {
  const std::size_t d = static_cast<std::size_t>(lie::tangent_dim(kind));
  return d * (d + 1) / 2;
}

std::vector<double> information_diagonal(lie::Group kind, const std::vector<double>& upper) {
  const std::size_t d = static_cast<std::size_t>(lie::tangent_dim(kind));
  if (upper.size() != information_size(kind)) throw Error("information: expected " + std::to_string(information_size(kind)) + " entries");
  std::vector<double> diag;
  std::size_t at = 0;
  for (std::size_t r = 0; r < d; ++r) {
    diag.push_back(upper[at]);
    at += d - r;
  }
  return diag;
}

std::vector<double> diagonal_information(const std::vector<double>& diag) {
  const std::size_t d = diag.size();
  std::vector<double> upper;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = r; c < d; ++c) upper.push_back(r == c ? diag[r] : 0.0);
  }
  return upper;
}

void PoseGraph::validate() const {
  if (kind != lie::Group::SE2 && kind != lie::Group::SE3) throw Error("pose graph: poses must be SE2 or SE3");
  if (batch < 1) throw Error("pose graph: batch must be positive");
  const Shape ps = pose_shape(kind, batch);
  if (ids.size() != poses.size()) throw Error("pose graph: one id per pose required");
  for (const auto& p : poses) {
    if (p.shape() != ps) throw Error("pose graph: pose payload " + p.shape_string() + ", expected " + shape_string(ps));
  }
  if (!ground_truth.empty() && ground_truth.size() != poses.size()) throw Error("pose graph: ground truth size mismatch");
  for (const auto& p : ground_truth) {
    if (p.shape() != ps) throw Error("pose graph: ground truth payload " + p.shape_string());
  }
  const auto n = static_cast<int>(poses.size());
  for (const auto& e : edges) {
    if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n || e.i == e.j) {
      throw Error("pose graph: edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) + ") out of range");
    }
    if (e.measurement.shape() != ps) throw Error("pose graph: measurement payload " + e.measurement.shape_string());
    if (e.information.size() != information_size(kind)) throw Error("pose graph: information size");
    if (!e.outlier.empty() && static_cast<std::int64_t>(e.outlier.size()) != batch) {
      throw Error("pose graph: outlier flags must have one entry per element");
    }
  }
}

// ---------------------------------------------------------------------------
// Payload helpers

BatchedArray se2_pose(double x, double y, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return BatchedArray({1, 2, 3}, {c, -s, x, s, c, y});
}

BatchedArray se3_pose(const double t[3], const double q[4]) {
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (!(std::abs(n - 1.0) <= kQuaternionTolerance)) {
    throw Error("quaternion norm " + std::to_string(n) + " is not 1 within tolerance");
  }
  const double x = q[0] / n, y = q[1] / n, z = q[2] / n, w = q[3] / n;
  return BatchedArray({1, 3, 4}, {1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w), t[0],
                                  2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w), t[1],
                                  2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y), t[2]});
}

void se3_quaternion(const double* m, double q[4]) {
  auto R = [m](int r, int c) { return m[r * 4 + c]; };
  const double tr = R(0, 0) + R(1, 1) + R(2, 2);
  double x, y, z, w;
  if (tr > 0) {
    const double s = 2 * std::sqrt(tr + 1);
    w = s / 4;
    x = (R(2, 1) - R(1, 2)) / s;
    y = (R(0, 2) - R(2, 0)) / s;
    z = (R(1, 0) - R(0, 1)) / s;
  } else if (R(0, 0) > R(1, 1) && R(0, 0) > R(2, 2)) {
    const double s = 2 * std::sqrt(1 + R(0, 0) - R(1, 1) - R(2, 2));
    w = (R(2, 1) - R(1, 2)) / s;
    x = s / 4;
    y = (R(0, 1) + R(1, 0)) / s;
    z = (R(0, 2) + R(2, 0)) / s;
  } else if (R(1, 1) > R(2, 2)) {
    const double s = 2 * std::sqrt(1 + R(1, 1) - R(0, 0) - R(2, 2));
    w = (R(0, 2) - R(2, 0)) / s;
    x = (R(0, 1) + R(1, 0)) / s;
    y = s / 4;
    z = (R(1, 2) + R(2, 1)) / s;
  } else {
    const double s = 2 * std::sqrt(1 + R(2, 2) - R(0, 0) - R(1, 1));
    w = (R(1, 0) - R(0, 1)) / s;
    x = (R(0, 2) + R(2, 0)) / s;
    y = (R(1, 2) + R(2, 1)) / s;
    z = s / 4;
  }
  if (w < 0) {
    x = -x;
    y = -y;
    z = -z;
    w = -w;
  }
  const double n = std::sqrt(x * x + y * y + z * z + w * w);
  q[0] = x / n;
  q[1] = y / n;
  q[2] = z / n;
  q[3] = w / n;
}

// ---------------------------------------------------------------------------
// Cube generator

void CubeConfig::validate() const {
  if (num_poses < 2) throw Error("cube: num_poses must be at least 2");
  if (batch < 1) throw Error("cube: batch must be positive");
  if (!(loop_closure_prob >= 0 && loop_closure_prob <= 1)) throw Error("cube: loop_closure_prob must be in [0, 1]");
  if (!(outlier_ratio >= 0 && outlier_ratio <= 1)) throw Error("cube: outlier_ratio must be in [0, 1]");
  if (!(noise_rot >= 0) || !(noise_trans >= 0) || !(heading_noise >= 0)) throw Error("cube: noise must be non-negative");
  if (!(proximity > 0)) throw Error("cube: proximity must be positive");
}

namespace {

using Vec3 = std::array<double, 3>;

// Attitude whose x axis points along the unit axis direction d.
BatchedArray heading_pose(int dir, const Vec3& p) {
  static const int axes[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  const Vec3 d{double(axes[dir][0]), double(axes[dir][1]), double(axes[dir][2])};
  const Vec3 u = dir < 4 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  const Vec3 c{d[1] * u[2] - d[2] * u[1], d[2] * u[0] - d[0] * u[2], d[0] * u[1] - d[1] * u[0]};
  return BatchedArray({1, 3, 4}, {d[0], u[0], c[0], p[0], d[1], u[1], c[1], p[1], d[2], u[2], c[2], p[2]});
}

BatchedArray exp_se3(const std::array<double, 6>& xi) {
  return lie::exp_map(lie::Group::SE3, BatchedArray({1, 6}, {xi[0], xi[1], xi[2], xi[3], xi[4], xi[5]}));
}

void write_item(BatchedArray& dst, std::int64_t b, const BatchedArray& src) {
  std::copy(src.item(0), src.item(0) + src.item_size(), dst.item(b));
}

}  // namespace

PoseGraph generate_cube(const CubeConfig& cfg) {
  cfg.validate();
  const lie::Group G = lie::Group::SE3;
  const std::int64_t N = cfg.num_poses, B = cfg.batch;
  const auto side = static_cast<int>(std::max<double>(2.0, std::ceil(std::cbrt(static_cast<double>(N)))));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  static const int steps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};

  // Walk on the integer lattice of the cube, preferring to go straight.
  std::vector<std::array<int, 3>> cells{{0, 0, 0}};
  std::vector<int> dirs{0};
  auto inside = [&](const std::array<int, 3>& c) {
    return std::all_of(c.begin(), c.end(), [&](int v) { return v >= 0 && v < side; });
  };
  for (std::int64_t k = 1; k < N; ++k) {
    const auto& c = cells.back();
    const int cur = dirs.back();
    std::vector<int> options;
    for (int d = 0; d < 6; ++d) {
      if (d == (cur ^ 1)) continue;  // no immediate reversal
      const std::array<int, 3> n{c[0] + steps[d][0], c[1] + steps[d][1], c[2] + steps[d][2]};
      if (inside(n)) options.push_back(d);
    }
    if (options.empty()) options.push_back(cur ^ 1);
    int next = -1;
    const bool straight = std::find(options.begin(), options.end(), cur) != options.end();
    if (straight && uni(rng) < 0.6) {
      next = cur;
    } else {
      next = options[std::min(options.size() - 1, static_cast<std::size_t>(uni(rng) * options.size()))];
    }
    cells.push_back({c[0] + steps[next][0], c[1] + steps[next][1], c[2] + steps[next][2]});
    dirs.push_back(next);
  }

  std::vector<BatchedArray> truth1;  // batch 1
  for (std::int64_t k = 0; k < N; ++k) {
    const Vec3 p{double(cells[k][0]), double(cells[k][1]), double(cells[k][2])};
    BatchedArray pose = heading_pose(dirs[k], p);
    if (cfg.heading_noise > 0 && k > 0) {
      std::array<double, 6> xi{};
      for (int a = 3; a < 6; ++a) xi[a] = cfg.heading_noise * gauss(rng);
      pose = lie::compose(G, pose, exp_se3(xi));
    }
    truth1.push_back(pose);
  }

  // Topology: chain, then at most one loop closure per pose.
  std::vector<std::pair<int, int>> topo;
  std::vector<bool> closure;
  for (std::int64_t k = 0; k + 1 < N; ++k) {
    topo.emplace_back(static_cast<int>(k), static_cast<int>(k + 1));
    closure.push_back(false);
  }
  for (std::int64_t j = 2; j < N; ++j) {
    std::vector<int> cand;
    for (std::int64_t i = 0; i + 1 < j; ++i) {
      double d2 = 0;
      for (int a = 0; a < 3; ++a) d2 += std::pow(cells[i][a] - cells[j][a], 2);
      if (std::sqrt(d2) <= cfg.proximity) cand.push_back(static_cast<int>(i));
    }
    if (cand.empty()) continue;
    if (uni(rng) < cfg.loop_closure_prob) {
      const auto pick = static_cast<std::size_t>(uni(rng) * cand.size());
      topo.emplace_back(cand[std::min(pick, cand.size() - 1)], static_cast<int>(j));
      closure.push_back(true);
    }
  }

  PoseGraph g;
  g.kind = G;
  g.batch = B;
  const double it = cfg.noise_trans > 0 ? 1.0 / (cfg.noise_trans * cfg.noise_trans) : 1.0;
  const double ir = cfg.noise_rot > 0 ? 1.0 / (cfg.noise_rot * cfg.noise_rot) : 1.0;
  const std::vector<double> info = diagonal_information({it, it, it, ir, ir, ir});
  for (std::size_t e = 0; e < topo.size(); ++e) {
    const auto [i, j] = topo[e];
    PoseEdge edge;
    edge.i = i;
    edge.j = j;
    edge.information = info;
    edge.outlier.assign(static_cast<std::size_t>(B), 0);
    edge.measurement = BatchedArray(pose_shape(G, B));
    const BatchedArray rel = lie::compose(G, lie::inverse(G, truth1[i]), truth1[j]);
    for (std::int64_t b = 0; b < B; ++b) {
      BatchedArray z;
      if (closure[e] && cfg.outlier_ratio > 0 && uni(rng) < cfg.outlier_ratio) {
        const double t[3] = {side * (2 * uni(rng) - 1), side * (2 * uni(rng) - 1), side * (2 * uni(rng) - 1)};
        double q[4];
        double n = 0;
        do {
          n = 0;
          for (double& v : q) {
            v = gauss(rng);
            n += v * v;
          }
        } while (n < 1e-12);
        for (double& v : q) v /= std::sqrt(n);
        z = se3_pose(t, q);
        edge.outlier[static_cast<std::size_t>(b)] = 1;
      } else {
        std::array<double, 6> xi{};
        for (int a = 0; a < 3; ++a) xi[a] = cfg.noise_trans * gauss(rng);
        for (int a = 3; a < 6; ++a) xi[a] = cfg.noise_rot * gauss(rng);
        z = lie::compose(G, rel, exp_se3(xi));
      }
      write_item(edge.measurement, b, z);
    }
    g.edges.push_back(std::move(edge));
  }

  // Odometry initialization along the chain, pose 0 at the truth.
  for (std::int64_t k = 0; k < N; ++k) {
    g.ids.push_back(k);
    g.ground_truth.push_back(truth1[k].broadcast_to(B));
  }
  g.poses.push_back(g.ground_truth[0]);
  for (std::int64_t k = 0; k + 1 < N; ++k) {
    g.poses.push_back(lie::compose(G, g.poses.back(), g.edges[static_cast<std::size_t>(k)].measurement));
  }
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// g2o text format

namespace {

std::vector<std::string_view> tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t j = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > j) out.push_back(s.substr(j, i - j));
  }
  return out;
}

template <class V>
V parse_num(std::string_view tok, int line) {
  V v{};
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) {
    throw ParseError("cannot parse number '" + std::string(tok) + "'", line);
  }
  if constexpr (std::is_floating_point_v<V>) {
    if (!std::isfinite(v)) throw ParseError("non-finite value '" + std::string(tok) + "'", line);
  }
  return v;
}

struct RawEdge {
  std::int64_t a, b;
  BatchedArray z;
  std::vector<double> info;
  int line;
};

}  // namespace

PoseGraph load_g2o(std::istream& in) {
  std::optional<lie::Group> kind;
  std::map<std::int64_t, BatchedArray> vertices;
  std::vector<RawEdge> raw;
  std::string text;
  int line = 0;
  auto set_kind = [&](lie::Group k) {
    if (kind && *kind != k) throw ParseError("mixed SE2 and SE3 records", line);
    kind = k;
  };
  while (std::getline(in, text)) {
    ++line;
    const auto tok = tokens(text);
    if (tok.empty() || tok[0].front() == '#') continue;
    const std::string_view tag = tok[0];
    auto num = [&](std::size_t i) { return parse_num<double>(tok[i], line); };
    auto expect = [&](std::size_t n) {
      if (tok.size() != n) {
        throw ParseError(std::string(tag) + " expects " + std::to_string(n - 1) + " fields, got " +
                             std::to_string(tok.size() - 1),
                         line);
      }
    };
    auto quaternion_pose = [&](std::size_t at) {
      const double t[3] = {num(at), num(at + 1), num(at + 2)};
      const double q[4] = {num(at + 3), num(at + 4), num(at + 5), num(at + 6)};
      try {
        return se3_pose(t, q);
      } catch (const Error& e) {
        throw ParseError(e.what(), line);
      }
    };
    if (tag == "VERTEX_SE2" || tag == "VERTEX_SE3:QUAT") {
      const bool two = tag == "VERTEX_SE2";
      set_kind(two ? lie::Group::SE2 : lie::Group::SE3);
      expect(two ? 5 : 9);
      const auto id = parse_num<std::int64_t>(tok[1], line);
      if (vertices.count(id)) throw ParseError("duplicate vertex id " + std::to_string(id), line);
      vertices[id] = two ? se2_pose(num(2), num(3), num(4)) : quaternion_pose(2);
    } else if (tag == "EDGE_SE2" || tag == "EDGE_SE3:QUAT") {
      const bool two = tag == "EDGE_SE2";
      set_kind(two ? lie::Group::SE2 : lie::Group::SE3);
      const std::size_t np = two ? 3 : 7, ni = two ? 6 : 21;
      expect(3 + np + ni);
      RawEdge e;
      e.a = parse_num<std::int64_t>(tok[1], line);
      e.b = parse_num<std::int64_t>(tok[2], line);
      e.z = two ? se2_pose(num(3), num(4), num(5)) : quaternion_pose(3);
      for (std::size_t k = 0; k < ni; ++k) e.info.push_back(num(3 + np + k));
      e.line = line;
      raw.push_back(std::move(e));
    } else if (tag == "FIX") {
      continue;  // the anchor is always pose 0
    } else {
      throw ParseError("unknown record '" + std::string(tag) + "'", line);
    }
  }
  if (!kind || vertices.empty()) throw ParseError("no vertices", line);

  PoseGraph g;
  g.kind = *kind;
  g.batch = 1;
  std::map<std::int64_t, int> index;
  for (const auto& [id, pose] : vertices) {
    index[id] = static_cast<int>(g.poses.size());
    g.ids.push_back(id);
    g.poses.push_back(pose);
  }
  for (auto& e : raw) {
    const auto ia = index.find(e.a), ib = index.find(e.b);
    if (ia == index.end() || ib == index.end()) {
      throw ParseError("edge references unknown vertex " + std::to_string(ia == index.end() ? e.a : e.b), e.line);
    }
    if (e.a == e.b) throw ParseError("self edge", e.line);
    PoseEdge pe;
    pe.i = ia->second;
    pe.j = ib->second;
    pe.measurement = std::move(e.z);
    pe.information = std::move(e.info);
    g.edges.push_back(std::move(pe));
  }
  g.validate();
  return g;
}

PoseGraph load_g2o(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  return load_g2o(f);
}

namespace {

void write_pose(std::ostream& out, lie::Group kind, const double* m) {
  if (kind == lie::Group::SE2) {
    out << m[2] << ' ' << m[5] << ' ' << std::atan2(m[3], m[0]);
  } else {
    double q[4];
    se3_quaternion(m, q);
    out << m[3] << ' ' << m[7] << ' ' << m[11] << ' ' << q[0] << ' ' << q[1] << ' ' << q[2] << ' ' << q[3];
  }
}

}  // namespace

void save_g2o(const PoseGraph& g, std::ostream& out, std::int64_t element) {
  g.validate();
  if (element < 0 || element >= g.batch) throw Error("save_g2o: element out of range");
  const bool two = g.kind == lie::Group::SE2;
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(17);
  for (std::size_t k = 0; k < g.poses.size(); ++k) {
    out << (two ? "VERTEX_SE2 " : "VERTEX_SE3:QUAT ") << g.ids[k] << ' ';
    write_pose(out, g.kind, g.poses[k].item(element));
    out << '\n';
  }
  for (const auto& e : g.edges) {
    out << (two ? "EDGE_SE2 " : "EDGE_SE3:QUAT ") << g.ids[static_cast<std::size_t>(e.i)] << ' '
        << g.ids[static_cast<std::size_t>(e.j)] << ' ';
    write_pose(out, g.kind, e.measurement.item(element));
    for (double v : e.information) out << ' ' << v;
    out << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

void save_g2o(const PoseGraph& g, const std::string& path, std::int64_t element) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path + "'");
  save_g2o(g, f, element);
  if (!f) throw Error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Objective

void initialize_odometry(PoseGraph& g) {
  g.validate();
  std::vector<const PoseEdge*> chain(g.poses.size(), nullptr);
  for (const auto& e : g.edges) {
    if (e.j == e.i + 1 && !chain[static_cast<std::size_t>(e.i)]) chain[static_cast<std::size_t>(e.i)] = &e;
  }
  for (std::size_t k = 0; k + 1 < g.poses.size(); ++k) {
    if (!chain[k]) {
      throw Error("odometry initialization: no chain edge between vertices " + std::to_string(g.ids[k]) + " and " +
                  std::to_string(g.ids[k + 1]));
    }
    g.poses[k + 1] = lie::compose(g.kind, g.poses[k], chain[k]->measurement);
  }
}

std::string pose_name(std::size_t k) { return "x" + std::to_string(k); }

Objective build_pgo(const PoseGraph& g, const PgoOptions& opts) {
  g.validate();
  const Manifold m = manifold(g.kind);
  const std::int64_t td = g.tangent_dim();
  std::vector<VariablePtr> x;
  for (std::size_t k = 0; k < g.poses.size(); ++k) x.push_back(make_variable(pose_name(k), g.poses[k], m));
  VariablePtr radius;
  if (opts.welsch_radius) {
    if (!(*opts.welsch_radius > 0)) throw Error("build_pgo: Welsch radius must be positive");
    radius = make_variable(kRadiusName, BatchedArray({1, 1}, {*opts.welsch_radius}));
  }
  Objective obj;
  obj.set_vectorize(opts.vectorize);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const PoseEdge& edge = g.edges[e];
    auto z = make_variable("z" + std::to_string(e), edge.measurement, m);
    auto cost = std::make_shared<Between>("edge" + std::to_string(e), x[static_cast<std::size_t>(edge.i)],
                                          x[static_cast<std::size_t>(edge.j)], z);
    const std::vector<double> diag = information_diagonal(g.kind, edge.information);
    BatchedArray w({1, td});
    for (std::int64_t a = 0; a < td; ++a) {
      if (diag[static_cast<std::size_t>(a)] < 0) throw Error("build_pgo: negative information on edge " + std::to_string(e));
      w[a] = std::sqrt(diag[static_cast<std::size_t>(a)]);
    }
    cost->set_weight(CostWeight::diagonal(make_variable("w" + std::to_string(e), w)));
    if (radius) cost->set_kernel(RobustKernel::welsch(radius));
    obj.add_cost_function(cost);
  }
  auto anchor = std::make_shared<Prior>("anchor", x[0], make_variable("anchor_target", g.poses[0], m));
  anchor->set_weight(CostWeight::scale(make_variable("anchor_weight", BatchedArray({1, 1}, {opts.anchor_weight}))));
  obj.add_cost_function(anchor);
  return obj;
}

std::vector<BatchedArray> extract_poses(const Objective& obj, std::size_t num_poses) {
  std::vector<BatchedArray> out;
  for (std::size_t k = 0; k < num_poses; ++k) {
    auto v = obj.variable(pose_name(k));
    if (!v) throw Error("extract_poses: objective has no pose '" + pose_name(k) + "'");
    out.push_back(v->value());
  }
  return out;
}

PgoResult pgo_solve(const PoseGraph& g, const optim::OptimizerConfig& cfg, const PgoOptions& opts) {
  Objective obj = build_pgo(g, opts);
  optim::Optimizer opt(obj, cfg);
  PgoResult r;
  r.info = opt.optimize();
  r.graph = g;
  r.graph.poses = extract_poses(obj, g.poses.size());
  r.initial_objective = r.info.initial_objective;
  r.final_objective = r.info.final_objective;
  return r;
}

BatchedArray pose_error(lie::Group kind, const std::vector<BatchedArray>& poses,
                        const std::vector<BatchedArray>& truth) {
  if (poses.size() != truth.size() || poses.empty()) throw Error("pose_error: pose count mismatch");
  BatchedArray total;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const BatchedArray e = squared_norm(lie::local(kind, truth[k], poses[k]));
    total = k == 0 ? e : add(total, e);
  }
  return scale(total, 1.0 / static_cast<double>(poses.size()));
}

std::vector<BatchedArray> pose_error_grad(lie::Group kind, const std::vector<BatchedArray>& poses,
                                          const std::vector<BatchedArray>& truth) {
  if (poses.size() != truth.size() || poses.empty()) throw Error("pose_error_grad: pose count mismatch");
  const std::int64_t td = lie::tangent_dim(kind);
  const double c = 2.0 / static_cast<double>(poses[0].batch() * static_cast<std::int64_t>(poses.size()));
  std::vector<BatchedArray> out;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    BatchedArray jb, e;
    lie::jacobian_local(kind, truth[k], poses[k], static_cast<BatchedArray*>(nullptr), &jb, &e);
    out.push_back(scale(reshape(matmul(transpose(jb), reshape(e, Shape{td, 1})), Shape{td}), c));
  }
  return out;
}

}  // namespace dnls::apps
