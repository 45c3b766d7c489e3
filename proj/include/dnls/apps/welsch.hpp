// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dnls/apps/pose_graph.hpp"
#include "dnls/backward/backward.hpp"
#include "dnls/layer/layer.hpp"

namespace dnls::apps {

// Outer loss of a robust PGO as a function of the shared Welsch radius k:
// L(k) = mean over elements and poses of |local(truth, x*(k))|^2.
class WelschPipeline {
 public:
  WelschPipeline(const PoseGraph& graph, const optim::OptimizerConfig& inner,
                 backward::BackwardMode mode = backward::BackwardMode::implicit());

  double loss(double radius);
  // (L, dL/dk)
  std::pair<double, double> loss_and_grad(double radius);

  const optim::OptimizerInfo& last_info() const noexcept { return info_; }
  const std::string& last_warning() const noexcept { return warning_; }
  layer::DnlsLayer& layer() noexcept { return *layer_; }

 private:
  double forward(double radius);

  PoseGraph graph_;
  std::unique_ptr<layer::DnlsLayer> layer_;
  std::map<std::string, BatchedArray> solution_;
  optim::OptimizerInfo info_;
  std::string warning_;
};

optim::OptimizerConfig default_inner_config();

struct WelschLearnConfig {
  double initial_radius = 100.0;  // in whitened residual units
  double baseline_radius = 1e4;   // fixed large radius for comparison
  int epochs = 20;
  double lr = 0.1;                // Adam step on log k
  optim::OptimizerConfig inner = default_inner_config();
};

struct EpochRecord {
  double radius = 0;
  double loss = 0;
  double grad = 0;  // dL/dk
};

struct WelschLearnResult {
  std::vector<EpochRecord> epochs;
  double final_radius = 0;
  double final_loss = 0;
  double baseline_loss = 0;
  int warnings = 0;  // backward passes that reported a convergence warning
};

// Bilevel loop: PGO with a Welsch kernel, implicit-mode gradient of the
// outer loss, Adam on log k.
WelschLearnResult learn_welsch_radius(const PoseGraph& graph, const WelschLearnConfig& cfg);

// Default dataset for the learning example: Cube with 20% outlier loop closures.
CubeConfig welsch_dataset_config(std::uint64_t seed = 0);

}  // namespace dnls::apps
