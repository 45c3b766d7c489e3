// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dnls/core/objective.hpp"
#include "dnls/optim/optimizer.hpp"
#include "dnls/sparse/system.hpp"
#include "dnls/tensor/tape.hpp"

namespace dnls::backward {

enum class Kind { Unroll, Truncated, Implicit, Dlm };

struct BackwardMode {
  Kind kind = Kind::Unroll;
  int k = 1;               // Truncated: iterations differentiated
  double epsilon = 1e-2;   // Dlm: perturbation size

  static BackwardMode unroll() { return {Kind::Unroll, 1, 1e-2}; }
  static BackwardMode truncated(int k) { return {Kind::Truncated, k, 1e-2}; }
  static BackwardMode implicit() { return {Kind::Implicit, 1, 1e-2}; }
  static BackwardMode dlm(double eps = 1e-2) { return {Kind::Dlm, 1, eps}; }

  void validate() const;
  // Forward runs of this mode must record at least this policy.
  bool needs_recording() const noexcept { return kind == Kind::Unroll || kind == Kind::Truncated; }
  std::string name() const;
  bool operator==(const BackwardMode& o) const noexcept;
};

// "unroll", "truncated:K", "implicit", "dlm" or "dlm:EPS".
BackwardMode parse_mode(std::string_view s);

struct BackwardRequest {
  // dL/dtheta* in tangent coordinates, (B, tangent_dim), per optimization
  // variable name; absent variables contribute zero.
  std::map<std::string, BatchedArray> upstream;
  // Auxiliary variable names (phi) and/or optimization variable names
  // (their initial values). Empty: every auxiliary variable.
  std::vector<std::string> targets;
};

// Everything a backward pass needs from one forward solve.
struct Run {
  std::shared_ptr<Tape> tape;           // null unless recorded
  std::map<std::string, Var> leaves;    // start leaves (theta_init and phi) by name
  std::vector<Var> theta;               // recorded final iterate
  std::vector<BatchedArray> theta_star; // plain final iterate
  std::vector<BatchedArray> theta_init;
  std::vector<BatchedArray> aux;
  optim::OptimizerInfo info;
  int keep_iterations = 0;  // 0: the whole run is on the tape
  std::shared_ptr<const sparse::LinearSolver> solver;
  std::uint64_t structure_revision = 0;

  bool recorded() const noexcept { return static_cast<bool>(tape); }
};

// Solve from the objective's current values, recording every iteration (or
// only the last `keep_iterations`).
Run solve_recorded(optim::Optimizer& opt, int keep_iterations = 0);
Run solve_plain(optim::Optimizer& opt);

struct GradientResult {
  // Ambient-shaped gradients for vector variables, tangent gradients
  // (B, tangent_dim) for group-valued ones.
  std::map<std::string, BatchedArray> grads;
  int iterations_traversed = 0;
  std::uint64_t solves = 0;
  std::uint64_t factorizations = 0;
  std::size_t tape_stop = 0;          // Unroll / Truncated: first node eligible for expansion
  std::size_t min_node_visited = 0;   // smallest op node expanded
  bool warning = false;
  std::string message;

  const BatchedArray& at(const std::string& name) const;
};

// Dispatches on `mode`. The objective must be the one the run solved, with
// unchanged structure.
GradientResult compute_gradients(const Objective& obj, const Run& run, const BackwardMode& mode,
                                 const BackwardRequest& request);

GradientResult backward_unroll(const Objective& obj, const Run& run, const BackwardRequest& request);
GradientResult backward_truncated(const Objective& obj, const Run& run, int k, const BackwardRequest& request);
GradientResult backward_implicit(const Objective& obj, const Run& run, const BackwardRequest& request);
GradientResult backward_dlm(const Objective& obj, const Run& run, double epsilon, const BackwardRequest& request);

// Convergence level above which implicit differentiation flags its result.
inline constexpr double kImplicitWarnGradient = 1e-3;

}  // namespace dnls::backward
