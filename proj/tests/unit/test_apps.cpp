#include <cmath>
#include <sstream>

#include "doctest.h"
#include "dnls/apps/pose_graph.hpp"

using namespace dnls;
using namespace dnls::apps;

namespace {

double max_pose_diff(const std::vector<BatchedArray>& a, const std::vector<BatchedArray>& b) {
  double m = 0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, max_abs_diff(a[k], b[k]));
  return m;
}

BatchedArray objective_at(const PoseGraph& g, const std::vector<BatchedArray>& poses) {
  PoseGraph h = g;
  h.poses = poses;
  Objective obj = build_pgo(h);
  return evaluate_residuals(obj).objective;
}

}  // namespace

TEST_CASE("cube: determinism and counts") {
  CubeConfig cfg;
  cfg.num_poses = 40;
  cfg.batch = 3;
  cfg.outlier_ratio = 0.3;
  cfg.seed = 11;
  const PoseGraph a = generate_cube(cfg), b = generate_cube(cfg);
  REQUIRE(a.edges.size() == b.edges.size());
  std::ostringstream sa, sb;
  for (std::int64_t e = 0; e < cfg.batch; ++e) {
    save_g2o(a, sa, e);
    save_g2o(b, sb, e);
  }
  CHECK(sa.str() == sb.str());
  CHECK(max_pose_diff(a.poses, b.poses) == 0.0);

  cfg.num_poses = 8;
  cfg.loop_closure_prob = 0;
  const PoseGraph chain = generate_cube(cfg);
  CHECK(chain.edges.size() == 7);
  for (int k = 0; k < 7; ++k) {
    CHECK(chain.edges[k].i == k);
    CHECK(chain.edges[k].j == k + 1);
  }

  cfg.num_poses = 100;
  cfg.loop_closure_prob = 0.5;
  const PoseGraph lc = generate_cube(cfg);
  CHECK(lc.edges.size() > 99);
  for (std::size_t e = 99; e < lc.edges.size(); ++e) {
    CHECK(lc.edges[e].i < lc.edges[e].j - 1);
  }
  for (std::size_t e = 0; e < 99; ++e) {
    for (auto f : lc.edges[e].outlier) CHECK(f == 0);
  }
}

TEST_CASE("cube: zero noise is exact at the ground truth") {
  CubeConfig cfg;
  cfg.num_poses = 32;
  cfg.noise_rot = cfg.noise_trans = 0;
  cfg.batch = 2;
  const PoseGraph g = generate_cube(cfg);
  CHECK(max_abs(objective_at(g, g.ground_truth)) < 1e-20);
  // Odometry over exact measurements lands on the truth.
  CHECK(max_pose_diff(g.poses, g.ground_truth) < 1e-10);

  optim::OptimizerConfig oc;
  oc.method = optim::Method::LevenbergMarquardt;
  const PgoResult r = pgo_solve(g, oc);
  CHECK(max_abs(r.final_objective) < 1e-10);
}

TEST_CASE("pgo: noisy cube decreases the objective") {
  CubeConfig cfg;
  cfg.num_poses = 64;
  cfg.loop_closure_prob = 0.2;
  cfg.seed = 0;
  const PoseGraph g = generate_cube(cfg);
  optim::OptimizerConfig oc;
  oc.method = optim::Method::LevenbergMarquardt;
  oc.max_iterations = 20;
  const PgoResult r = pgo_solve(g, oc);
  CHECK(r.final_objective[0] < r.initial_objective[0]);
  for (std::int64_t k = 1; k < r.info.history.dim(1); ++k) {
    CHECK(r.info.history.at(0, k) <= r.info.history.at(0, k - 1));
  }
  CHECK(max_abs(pose_error(g.kind, r.graph.poses, g.ground_truth)) <
        max_abs(pose_error(g.kind, g.poses, g.ground_truth)));
}

TEST_CASE("g2o: parsing") {
  std::istringstream se2("VERTEX_SE2 0 1.0 2.0 0.5\nVERTEX_SE2 1 0 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0 1\n");
  const PoseGraph g = load_g2o(se2);
  CHECK(g.kind == lie::Group::SE2);
  const BatchedArray& p = g.poses[0];
  CHECK(p[2] == 1.0);
  CHECK(p[5] == 2.0);
  CHECK(std::abs(p[0] - std::cos(0.5)) < 1e-15);
  CHECK(std::abs(p[3] - std::sin(0.5)) < 1e-15);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].information.size() == 6);

  std::istringstream se3("VERTEX_SE3:QUAT 4 1 2 3 0 0 0 1\n");
  const PoseGraph h = load_g2o(se3);
  const double ident[12] = {1, 0, 0, 1, 0, 1, 0, 2, 0, 0, 1, 3};
  for (int i = 0; i < 12; ++i) CHECK(h.poses[0][i] == ident[i]);
  CHECK(h.ids[0] == 4);

  std::istringstream bad_q("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1.01\n");
  CHECK_THROWS_AS(load_g2o(bad_q), ParseError);
  std::istringstream near_q("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1.0000005\n");
  CHECK_NOTHROW(load_g2o(near_q));

  std::istringstream malformed("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 0 zero 0\n");
  try {
    load_g2o(malformed);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::istringstream short_edge("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 0 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0\n");
  CHECK_THROWS_AS(load_g2o(short_edge), ParseError);
  std::istringstream dangling("VERTEX_SE2 0 0 0 0\nEDGE_SE2 0 7 1 0 0 1 0 0 1 0 1\n");
  CHECK_THROWS_AS(load_g2o(dangling), ParseError);
}

TEST_CASE("g2o: round trip") {
  CubeConfig cfg;
  cfg.num_poses = 30;
  cfg.loop_closure_prob = 0.4;
  cfg.seed = 5;
  const PoseGraph g = generate_cube(cfg);
  std::stringstream s;
  save_g2o(g, s);
  const PoseGraph h = load_g2o(s);
  REQUIRE(h.poses.size() == g.poses.size());
  REQUIRE(h.edges.size() == g.edges.size());
  CHECK(max_pose_diff(h.poses, g.poses) < 1e-12);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    CHECK(h.edges[e].i == g.edges[e].i);
    CHECK(h.edges[e].j == g.edges[e].j);
    CHECK(max_abs_diff(h.edges[e].measurement, g.edges[e].measurement) < 1e-12);
    CHECK(h.edges[e].information == g.edges[e].information);
  }

  std::istringstream se2(
      "VERTEX_SE2 0 1.0 2.0 0.5\nVERTEX_SE2 3 -1 0.25 3.0\nEDGE_SE2 0 3 1 0.5 -0.2 500 0 0 500 0 1000\n");
  const PoseGraph a = load_g2o(se2);
  std::stringstream t;
  save_g2o(a, t);
  const PoseGraph b = load_g2o(t);
  CHECK(max_pose_diff(a.poses, b.poses) < 1e-12);
  CHECK(b.ids == a.ids);

  // Odometry initialization reproduces the generator's starting poses.
  PoseGraph re = h;
  initialize_odometry(re);
  CHECK(max_pose_diff(re.poses, g.poses) < 1e-9);
  PoseGraph broken = h;
  broken.edges.erase(broken.edges.begin() + 3);
  CHECK_THROWS_AS(initialize_odometry(broken), Error);
}

// ---------------------------------------------------------------------------

#include "dnls/apps/adam.hpp"
#include "dnls/apps/curvefit.hpp"
#include "dnls/apps/welsch.hpp"

TEST_CASE("adam: first step") {
  AdamState s;
  s.lr = 0.1;
  const BatchedArray p({1, 3}, {1.0, -2.0, 0.5});
  CHECK(adam_update(s, p, BatchedArray({1, 3})) == p);

  AdamState t;
  t.lr = 0.1;
  const BatchedArray q = adam_update(t, p, BatchedArray({1, 3}, {1.0, 1.0, 1.0}));
  for (int i = 0; i < 3; ++i) CHECK(q[i] - p[i] == doctest::Approx(-0.1 / (1 + 1e-8)).epsilon(1e-12));
  CHECK(t.step == 1);
  CHECK_THROWS_AS(adam_update(t, p, BatchedArray({1, 2})), Error);
}

TEST_CASE("curvefit: oracle") {
  CurveFitConfig cfg;
  const CurveFitResult r = curve_fit(cfg);
  CHECK(std::abs(r.v - r.v_oracle) < 1e-9);
  CHECK(std::abs(r.v - 3.0) < 1e-9);
  CHECK(r.converged);
  cfg.noise = 0.1;
  cfg.seed = 4;
  const CurveFitResult n = curve_fit(cfg);
  CHECK(std::abs(n.v - n.v_oracle) < 1e-9);
  CHECK(std::abs(n.v_oracle - 3.0) > 1e-6);
}

TEST_CASE("welsch: gradient sign and contrast") {
  const PoseGraph dirty = generate_cube(welsch_dataset_config(0));
  CubeConfig clean_cfg = welsch_dataset_config(0);
  clean_cfg.outlier_ratio = 0;
  const PoseGraph clean = generate_cube(clean_cfg);
  WelschPipeline pd(dirty, default_inner_config()), pc(clean, default_inner_config());
  const double k = 100;
  const auto [Ld, gd] = pd.loss_and_grad(k);
  const auto [Lc, gc] = pc.loss_and_grad(k);
  CHECK(Ld > Lc);
  CHECK(gd > 0);
  CHECK(std::abs(gc) < 1e-3 * std::abs(gd));
  // Central differences of the whole pipeline. The implicit value drops the
  // kernel curvature of partly rejected edges, so only rough agreement.
  const double h = 0.05;
  const double fd = (pd.loss(k + h) - pd.loss(k - h)) / (2 * h);
  CHECK(fd > 0);
  CHECK(std::abs(fd - gd) < 0.2 * std::abs(fd));
}

TEST_CASE("welsch: learning") {
  const PoseGraph g = generate_cube(welsch_dataset_config(0));
  WelschLearnConfig cfg;
  cfg.lr = 0;
  cfg.epochs = 3;
  const WelschLearnResult still = learn_welsch_radius(g, cfg);
  CHECK(still.final_radius == cfg.initial_radius);
  for (const auto& e : still.epochs) CHECK(e.loss == still.epochs[0].loss);

  cfg.lr = 1e-2;
  cfg.epochs = 20;
  const WelschLearnResult slow = learn_welsch_radius(g, cfg);
  CHECK(slow.final_loss < slow.epochs.front().loss);

  cfg.lr = 0.1;
  const WelschLearnResult fast = learn_welsch_radius(g, cfg);
  CHECK(fast.final_loss < fast.epochs.front().loss);
  CHECK(fast.final_loss < fast.baseline_loss);
  CHECK(fast.final_radius < cfg.initial_radius);
}

// ---------------------------------------------------------------------------

#include "dnls/apps/bench.hpp"

TEST_CASE("bench: suite expansion") {
  const BenchSuite s = parse_suite(R"({
    "repeats": 2,
    "defaults": {"batch_size": 2, "method": "gn"},
    "experiments": [
      {"name": "a", "solver": ["sparse", "dense"], "iterations": [1, 2, 3], "num_poses": 8},
      {"name": "b", "backward_mode": "unroll"}
    ]})");
  CHECK(s.repeats == 2);
  REQUIRE(s.configs.size() == 7);
  // Keys expand in alphabetical order, the last one fastest.
  CHECK(s.configs[0].solver == "sparse");
  CHECK(s.configs[0].iterations == 1);
  CHECK(s.configs[1].solver == "dense");
  CHECK(s.configs[1].iterations == 1);
  CHECK(s.configs[5].iterations == 3);
  CHECK(s.configs[6].experiment == "b");
  CHECK(s.configs[6].batch_size == 2);
  CHECK_THROWS_AS(parse_suite(R"({"experiments": [{"name": "x", "colour": 1}]})"), Error);
  CHECK_THROWS_AS(parse_suite(R"({"experiments": [{"name": "x", "solver": "cg"}]})"), Error);
  CHECK_THROWS_AS(parse_suite("{"), Error);
}

TEST_CASE("bench: rows and CSV") {
  BenchConfig c;
  c.num_poses = 12;
  c.batch_size = 2;
  c.iterations = 2;
  c.backward_mode = "unroll";
  const BenchRow r = run_config(c);
  CHECK(r.ok);
  CHECK(r.peak_bytes > 0);
  CHECK(r.forward_ms > 0);
  CHECK(r.backward_ms > 0);
  const BenchRow oom = run_config(c, 1024);
  CHECK_FALSE(oom.ok);

  std::stringstream s;
  write_csv({r, oom}, s);
  std::string header;
  std::getline(s, header);
  CHECK(header == "experiment,solver,backward_mode,num_poses,batch_size,iterations,forward_ms,backward_ms,peak_bytes,final_objective");
  s.seekg(0);
  const std::vector<BenchRow> back = read_csv(s);
  REQUIRE(back.size() == 2);
  CHECK(back[0].ok);
  CHECK(back[0].peak_bytes == r.peak_bytes);
  CHECK(back[0].final_objective == r.final_objective);
  CHECK_FALSE(back[1].ok);
  std::istringstream bad("experiment,solver\n");
  CHECK_THROWS_AS(read_csv(bad), ParseError);
}

TEST_CASE("bench: trend checks") {
  auto row = [](std::string solver, std::string mode, std::int64_t n, int iters, double f, double b, std::size_t mem) {
    BenchRow r;
    r.config.experiment = "t";
    r.config.solver = std::move(solver);
    r.config.backward_mode = std::move(mode);
    r.config.num_poses = n;
    r.config.batch_size = 16;
    r.config.iterations = iters;
    r.forward_ms = f;
    r.backward_ms = b;
    r.peak_bytes = mem;
    return r;
  };
  std::vector<BenchRow> rows;
  for (int rep = 0; rep < 3; ++rep) {
    rows.push_back(row("sparse", "implicit", 512, 10, 10, 1, 100));
    rows.push_back(row("dense", "implicit", 512, 10, 100 + rep, 10, 100));
    rows.push_back(row("sparse", "unroll", 64, 10, 10, 10, 1000));
    rows.push_back(row("sparse", "unroll", 64, 50, 50, rep == 1 ? 1 : 60, 5000));
    rows.push_back(row("sparse", "implicit", 64, 50, 50, 1.2, 104));
    rows.push_back(row("sparse", "implicit", 64, 10, 10, 1.0, 100));
  }
  const auto checks = check_trends(rows);
  int pass = 0, fail = 0;
  for (const auto& c : checks) {
    pass += c.status == TrendCheck::Status::Pass;
    fail += c.status == TrendCheck::Status::Fail;
  }
  CHECK(fail == 0);
  CHECK(pass == 5);  // sparse/dense, two time ratios, two memory trends

  for (int rep = 0; rep < 4; ++rep) rows.push_back(row("sparse", "implicit", 64, 50, 50, 5.0, 104));
  int fails = 0;
  for (const auto& c : check_trends(rows)) fails += c.status == TrendCheck::Status::Fail;
  CHECK(fails == 1);
}
