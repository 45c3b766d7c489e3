// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dnls/core/objective.hpp"
#include "dnls/error.hpp"
#include "dnls/sparse/system.hpp"
#include "dnls/tensor/tape.hpp"

namespace dnls::optim {

enum class Method { GaussNewton, LevenbergMarquardt, Dogleg };
const char* method_name(Method m) noexcept;
// Accepts "gn", "gauss-newton", "lm", "levenberg-marquardt", "dogleg".
std::optional<Method> parse_method(std::string_view s);

enum class Status { Converged, MaxIterations, Failed };
const char* status_name(Status s) noexcept;

struct OptimizerConfig {
  Method method = Method::GaussNewton;
  int max_iterations = 10;
  double step_size = 1.0;  // Gauss-Newton only
  double abs_tol = 1e-8;
  double rel_tol = 1e-6;

  double lambda_init = 1e-3;
  double lambda_min = 1e-8;
  double lambda_max = 1e5;
  double lambda_down = 3.0;
  double lambda_up = 2.0;

  double radius_init = 1.0;
  double radius_min = 1e-6;
  double radius_max = 1e3;

  sparse::SolverOptions linear;

  // Throws Error on a non-positive or inconsistent setting.
  void validate() const;
};

struct OptimizerInfo {
  std::vector<Status> status;
  std::vector<std::string> diagnostics;  // per element; empty unless failed
  std::vector<int> iterations;           // steps taken by each element before it froze
  int iterations_run = 0;

  BatchedArray initial_objective;  // (B, 1)
  BatchedArray final_objective;    // (B, 1)
  // Column k: objective after iteration k (frozen elements repeat their value).
  BatchedArray history;  // (B, iterations_run)
  // Norm of the step tried at iteration k, and the lambda (LM) or radius
  // (Dogleg) it was computed with; zero for inactive elements.
  BatchedArray step_norm;        // (B, iterations_run)
  BatchedArray damping_history;  // (B, iterations_run)
  std::vector<Mask> accepted;    // [iteration][element]
  BatchedArray damping;          // final lambda or radius, (B, 1)
  BatchedArray gradient_norm;    // max |J^T r| at the returned iterate, (B, 1)

  // Recorded runs: tape position at the start of each iteration, then the end.
  std::vector<std::size_t> marks;

  std::uint64_t factorizations = 0;
  std::uint64_t solves = 0;

  std::int64_t batch_size() const noexcept { return static_cast<std::int64_t>(status.size()); }
  bool all_converged() const;
  bool any_failed() const;
  std::string summary() const;
};

// Raised when no batch element could be solved; carries the diagnostics.
class OptimizationError : public Error {
 public:
  OptimizationError(const std::string& what, OptimizerInfo info) : Error(what), info_(std::move(info)) {}
  const OptimizerInfo& info() const noexcept { return info_; }

 private:
  OptimizerInfo info_;
};

struct RecordOptions {
  // Keep only the tape of the last `keep_iterations` iterations (0 keeps all).
  int keep_iterations = 0;
};

struct RecordedSolution {
  std::vector<Var> theta;  // per optimization variable
  OptimizerInfo info;
};

class Optimizer {
 public:
  explicit Optimizer(Objective& obj, OptimizerConfig cfg = {});

  const OptimizerConfig& config() const noexcept { return cfg_; }
  void set_config(OptimizerConfig cfg);
  Objective& objective() noexcept { return *obj_; }
  // Pattern and symbolic analysis, rebuilt when the objective structure changes.
  const sparse::LinearSolver& linear_solver();

  // Solves from the objective's current values and writes theta* back.
  OptimizerInfo optimize();
  // Same iteration with every step recorded on `tape`, starting from the
  // given leaves. The final values are also written back to the objective.
  RecordedSolution optimize_recorded(Tape& tape, const VarValues<Var>& start, const RecordOptions& opts = {});

 private:
  Objective* obj_;
  OptimizerConfig cfg_;
  std::optional<sparse::LinearSolver> solver_;
  std::uint64_t solver_revision_ = 0;
};

OptimizerInfo optimize(Objective& obj, const OptimizerConfig& cfg = {});

struct DoglegPoint {
  BatchedArray step;               // (B, n); applied as theta <- retract(theta, -step)
  std::vector<double> predicted;   // model decrease g^T s - s^T H s / 2
  std::vector<int> kind;           // 0 Gauss-Newton, 1 scaled Cauchy, 2 interpolated
};
// Dogleg point from the Gauss-Newton step, g = J^T r and H g.
DoglegPoint dogleg_point(const BatchedArray& gn, const BatchedArray& g, const BatchedArray& hg,
                         const std::vector<double>& radius);

}  // namespace dnls::optim
