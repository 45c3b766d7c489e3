// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dnls/core/objective.hpp"
#include "dnls/error.hpp"
#include "dnls/lie/lie.hpp"
#include "dnls/optim/optimizer.hpp"

namespace dnls::apps {

struct PoseEdge {
  int i = 0;  // indices into PoseGraph::poses
  int j = 0;
  BatchedArray measurement;          // (B, 2, 3) or (B, 3, 4)
  std::vector<double> information;   // upper triangle, row major
  std::vector<std::uint8_t> outlier; // per batch element; empty for loaded graphs
};

// Poses and relative measurements, batched: every element shares the
// topology but carries its own measurements and poses.
struct PoseGraph {
  lie::Group kind = lie::Group::SE3;
  std::int64_t batch = 1;
  std::vector<std::int64_t> ids;     // file vertex ids, by pose index
  std::vector<BatchedArray> poses;   // current estimate, one (B, ...) per vertex
  std::vector<PoseEdge> edges;
  std::vector<BatchedArray> ground_truth;  // same layout as poses, or empty

  std::int64_t num_poses() const noexcept { return static_cast<std::int64_t>(poses.size()); }
  std::int64_t tangent_dim() const noexcept { return lie::tangent_dim(kind); }
  bool has_ground_truth() const noexcept { return !ground_truth.empty(); }
  // Structural checks: endpoints in range, payload shapes, information sizes.
  void validate() const;
};

// Number of upper-triangular entries, 6 for SE2 and 21 for SE3.
std::size_t information_size(lie::Group kind);
// Diagonal of an upper-triangular information block.
std::vector<double> information_diagonal(lie::Group kind, const std::vector<double>& upper);
std::vector<double> diagonal_information(const std::vector<double>& diag);

struct CubeConfig {
  std::int64_t num_poses = 64;
  double loop_closure_prob = 0.2;
  double outlier_ratio = 0.0;
  double noise_rot = 0.01;    // rad, per tangent coordinate
  double noise_trans = 0.05;  // m, per tangent coordinate
  std::uint64_t seed = 0;
  std::int64_t batch = 1;
  double proximity = 2.0;     // loop closure search radius
  double heading_noise = 0.05;  // rad, ground-truth attitude jitter
  void validate() const;
};

// Synthetic 3D random walk inside a cube. Poses start at the odometry
// composition of the noisy chain measurements.
PoseGraph generate_cube(const CubeConfig& cfg);

inline constexpr double kQuaternionTolerance = 1e-6;

// Malformed records raise ParseError with the line number.
PoseGraph load_g2o(std::istream& in);
PoseGraph load_g2o(const std::string& path);
// Writes one batch element.
void save_g2o(const PoseGraph& g, std::ostream& out, std::int64_t element = 0);
void save_g2o(const PoseGraph& g, const std::string& path, std::int64_t element = 0);

// Payload helpers for single elements.
BatchedArray se2_pose(double x, double y, double theta);
// Quaternion (qx, qy, qz, qw) must be unit length within the tolerance.
BatchedArray se3_pose(const double t[3], const double q[4]);
void se3_quaternion(const double* rot3x4, double q[4]);

// Replaces poses 1..N-1 by composing the chain measurements (k, k+1) from
// pose 0. Throws if a chain edge is missing.
void initialize_odometry(PoseGraph& g);

struct PgoOptions {
  // Welsch radius on every edge cost; unset means plain least squares.
  std::optional<double> welsch_radius;
  double anchor_weight = 100.0;
  bool vectorize = true;
};

inline const char* const kRadiusName = "welsch_radius";
std::string pose_name(std::size_t k);

// Between costs per edge with weights sqrt(diag(information)) and a prior
// holding pose 0 at its current value.
Objective build_pgo(const PoseGraph& g, const PgoOptions& opts = {});

// Poses of an objective built by build_pgo, by pose index.
std::vector<BatchedArray> extract_poses(const Objective& obj, std::size_t num_poses);

struct PgoResult {
  PoseGraph graph;  // with optimized poses
  optim::OptimizerInfo info;
  BatchedArray initial_objective;
  BatchedArray final_objective;
};

PgoResult pgo_solve(const PoseGraph& g, const optim::OptimizerConfig& cfg, const PgoOptions& opts = {});

// Mean over poses of |local(truth, pose)|^2, per element (B, 1).
BatchedArray pose_error(lie::Group kind, const std::vector<BatchedArray>& poses,
                        const std::vector<BatchedArray>& truth);

// Gradient of the batch mean of pose_error with respect to each pose, in
// tangent coordinates, (B, d) per pose.
std::vector<BatchedArray> pose_error_grad(lie::Group kind, const std::vector<BatchedArray>& poses,
                                          const std::vector<BatchedArray>& truth);

}  // namespace dnls::apps
