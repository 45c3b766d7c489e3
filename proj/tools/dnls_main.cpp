// SPDX-License-Identifier: Apache-2.0
// Command-line front end: examples, Cube PGO, Welsch learning, benchmarks.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "dnls/apps/bench.hpp"
#include "dnls/apps/curvefit.hpp"
#include "dnls/apps/pose_graph.hpp"
#include "dnls/apps/welsch.hpp"

using namespace dnls;
using namespace dnls::apps;
using nlohmann::json;

namespace {

double mean(const BatchedArray& a) {
  double s = 0;
  for (double v : a.values()) s += v;
  return a.numel() ? s / static_cast<double>(a.numel()) : 0.0;
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

int run_curvefit(const CurveFitConfig& cfg) {
  const CurveFitResult r = curve_fit(cfg);
  print({{"v", r.v},
         {"v_oracle", r.v_oracle},
         {"abs_error", std::abs(r.v - r.v_oracle)},
         {"iterations", r.iterations},
         {"converged", r.converged},
         {"final_objective", r.final_objective},
         {"elapsed_ms", r.elapsed_ms}});
  return 0;
}

int run_cube_gen(const CubeConfig& cfg, const std::string& out, const std::string& truth_out) {
  const PoseGraph g = generate_cube(cfg);
  save_g2o(g, out);
  if (!truth_out.empty()) {
    PoseGraph t = g;
    t.poses = g.ground_truth;
    save_g2o(t, truth_out);
  }
  std::size_t closures = g.edges.size() - static_cast<std::size_t>(g.num_poses() - 1), outliers = 0;
  for (const auto& e : g.edges) {
    for (auto f : e.outlier) outliers += f;
  }
  print({{"poses", g.num_poses()}, {"edges", g.edges.size()}, {"loop_closures", closures}, {"outliers", outliers},
         {"output", out}});
  return 0;
}

int run_pgo(const std::string& input, const std::string& method, const std::string& linear, int max_iters,
            double radius, const std::string& init, const std::string& out) {
  PoseGraph g = load_g2o(input);
  if (init == "odometry") initialize_odometry(g);
  optim::OptimizerConfig oc;
  oc.method = *optim::parse_method(method);
  oc.max_iterations = max_iters;
  oc.linear.kind = linear == "dense" ? sparse::SolverKind::Dense : sparse::SolverKind::Sparse;
  PgoOptions po;
  if (radius > 0) po.welsch_radius = radius;
  const auto t0 = std::chrono::steady_clock::now();
  const PgoResult r = pgo_solve(g, oc, po);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (!out.empty()) save_g2o(r.graph, out);
  print({{"poses", g.num_poses()},
         {"edges", g.edges.size()},
         {"method", optim::method_name(oc.method)},
         {"linear", linear},
         {"initial_objective", mean(r.initial_objective)},
         {"final_objective", mean(r.final_objective)},
         {"iterations", r.info.iterations_run},
         {"status", optim::status_name(r.info.status.at(0))},
         {"factorizations", r.info.factorizations},
         {"elapsed_ms", ms}});
  return 0;
}

int run_learn(const WelschLearnConfig& cfg, const CubeConfig& data) {
  const auto t0 = std::chrono::steady_clock::now();
  const PoseGraph g = generate_cube(data);
  const WelschLearnResult r = learn_welsch_radius(g, cfg);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json epochs = json::array();
  for (std::size_t e = 0; e < r.epochs.size(); ++e) {
    epochs.push_back({{"epoch", e}, {"radius", r.epochs[e].radius}, {"loss", r.epochs[e].loss},
                      {"grad", r.epochs[e].grad}});
  }
  const double initial = r.epochs.empty() ? r.final_loss : r.epochs.front().loss;
  print({{"epochs", epochs},
         {"initial_loss", initial},
         {"final_loss", r.final_loss},
         {"final_radius", r.final_radius},
         {"baseline_radius", cfg.baseline_radius},
         {"baseline_loss", r.baseline_loss},
         {"improved", r.final_loss < initial},
         {"below_baseline", r.final_loss < r.baseline_loss},
         {"warnings", r.warnings},
         {"elapsed_s", s}});
  return 0;
}

int run_bench(const std::string& suite_path, const std::string& out) {
  const BenchSuite suite = load_suite(suite_path);
  std::ofstream f(out);
  if (!f) throw Error("cannot write '" + out + "'");
  const auto rows = run_suite(suite, [](const BenchRow& r, int rep) {
    const BenchConfig& c = r.config;
    std::fprintf(stderr, "%s %s %s N=%lld B=%lld it=%d rep=%d: %s\n", c.experiment.c_str(), c.solver.c_str(),
                 c.backward_mode.c_str(), static_cast<long long>(c.num_poses), static_cast<long long>(c.batch_size),
                 c.iterations, rep,
                 r.ok ? (std::to_string(r.forward_ms) + " + " + std::to_string(r.backward_ms) + " ms").c_str() : "oom");
  });
  write_csv(rows, f);
  if (!f) throw Error("write failed for '" + out + "'");
  std::fprintf(stderr, "%zu rows written to %s\n", rows.size(), out.c_str());
  return 0;
}

int run_bench_check(const std::string& csv) {
  const auto checks = check_trends(read_csv(csv));
  int failed = 0;
  for (const auto& c : checks) {
    std::printf("%s %s: %s\n", trend_status_name(c.status), c.name.c_str(), c.detail.c_str());
    failed += c.status == TrendCheck::Status::Fail;
  }
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batched differentiable nonlinear least squares: examples and benchmarks"};
  app.require_subcommand(1);

  CurveFitConfig cf;
  auto* curve = app.add_subcommand("curvefit", "fit y = v e^x and compare with the closed form");
  curve->add_option("--points", cf.num_points, "number of samples")->check(CLI::PositiveNumber);
  curve->add_option("--noise", cf.noise, "observation noise std")->check(CLI::NonNegativeNumber);
  curve->add_option("--seed", cf.seed);
  curve->add_option("--v-init", cf.v_init, "initial estimate");

  CubeConfig cube;
  std::string cube_out, truth_out;
  auto* gen = app.add_subcommand("cube-gen", "generate a synthetic Cube pose graph in g2o format");
  gen->add_option("--num-poses", cube.num_poses)->check(CLI::Range(2, 1 << 24));
  gen->add_option("--loop-closure-prob", cube.loop_closure_prob)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--outlier-ratio", cube.outlier_ratio)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--noise-rot", cube.noise_rot)->check(CLI::NonNegativeNumber);
  gen->add_option("--noise-trans", cube.noise_trans)->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", cube.seed);
  gen->add_option("--out", cube_out, "output g2o file")->required();
  gen->add_option("--truth-out", truth_out, "also write the ground-truth poses");

  std::string pgo_in, pgo_method = "lm", pgo_linear = "sparse", pgo_init = "odometry", pgo_out;
  int pgo_iters = 50;
  double pgo_radius = 0;
  auto* pgo = app.add_subcommand("pgo", "solve a g2o pose graph from odometry initialization");
  pgo->add_option("--input", pgo_in, "g2o file")->required()->check(CLI::ExistingFile);
  pgo->add_option("--solver", pgo_method)->check(CLI::IsMember({"gn", "lm", "dogleg"}));
  pgo->add_option("--linear", pgo_linear)->check(CLI::IsMember({"sparse", "dense"}));
  pgo->add_option("--max-iters", pgo_iters)->check(CLI::NonNegativeNumber);
  pgo->add_option("--welsch-radius", pgo_radius, "robust kernel radius (0: none)")->check(CLI::NonNegativeNumber);
  pgo->add_option("--init", pgo_init, "odometry: compose chain edges; file: vertex values")
      ->check(CLI::IsMember({"odometry", "file"}));
  pgo->add_option("--out", pgo_out, "write the optimized graph");

  WelschLearnConfig wl;
  std::uint64_t wl_seed = 0;
  CubeConfig wl_data = welsch_dataset_config();
  auto* learn = app.add_subcommand("learn-welsch", "learn a Welsch radius for outlier rejection on Cube data");
  learn->add_option("--epochs", wl.epochs)->check(CLI::NonNegativeNumber);
  learn->add_option("--lr", wl.lr)->check(CLI::NonNegativeNumber);
  learn->add_option("--seed", wl_seed);
  learn->add_option("--initial-radius", wl.initial_radius)->check(CLI::PositiveNumber);
  learn->add_option("--num-poses", wl_data.num_poses)->check(CLI::Range(2, 1 << 20));
  learn->add_option("--batch", wl_data.batch)->check(CLI::PositiveNumber);
  learn->add_option("--outlier-ratio", wl_data.outlier_ratio)->check(CLI::Range(0.0, 1.0));

  std::string suite, bench_out;
  auto* bench = app.add_subcommand("bench", "run a benchmark suite and write CSV");
  bench->add_option("--suite", suite, "JSON suite file")->required()->check(CLI::ExistingFile);
  bench->add_option("--out", bench_out, "CSV output")->required();

  std::string check_csv;
  auto* check = app.add_subcommand("bench-check", "assert scaling trends on a benchmark CSV");
  check->add_option("--csv", check_csv)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*curve) return run_curvefit(cf);
    if (*gen) return run_cube_gen(cube, cube_out, truth_out);
    if (*pgo) return run_pgo(pgo_in, pgo_method, pgo_linear, pgo_iters, pgo_radius, pgo_init, pgo_out);
    if (*learn) {
      wl_data.seed = wl_seed;
      return run_learn(wl, wl_data);
    }
    if (*bench) return run_bench(suite, bench_out);
    if (*check) return run_bench_check(check_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
