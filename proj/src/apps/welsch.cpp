// SPDX-License-Identifier: Apache-2.0
#include "dnls/apps/welsch.hpp"

#include <cmath>

#include "dnls/apps/adam.hpp"

namespace dnls::apps {

optim::OptimizerConfig default_inner_config() {
  optim::OptimizerConfig c;
  c.method = optim::Method::LevenbergMarquardt;
  c.max_iterations = 50;
  c.abs_tol = 1e-12;
  c.rel_tol = 1e-12;
  return c;
}

CubeConfig welsch_dataset_config(std::uint64_t seed) {
  CubeConfig c;
  c.num_poses = 64;
  c.loop_closure_prob = 0.3;
  c.outlier_ratio = 0.2;
  c.batch = 4;
  c.seed = seed;
  return c;
}

WelschPipeline::WelschPipeline(const PoseGraph& graph, const optim::OptimizerConfig& inner,
                               backward::BackwardMode mode)
    : graph_(graph) {
  if (!graph_.has_ground_truth()) throw Error("welsch: graph has no ground truth");
  PgoOptions opts;
  opts.welsch_radius = 1.0;
  layer::LayerConfig lc;
  lc.optimizer = inner;
  lc.mode = mode;
  lc.required_inputs = std::vector<std::string>{kRadiusName};
  layer_ = std::make_unique<layer::DnlsLayer>(build_pgo(graph_, opts), lc);
}

double WelschPipeline::forward(double radius) {
  if (!(radius > 0) || !std::isfinite(radius)) throw Error("welsch: radius must be positive and finite");
  const layer::ForwardResult r = layer_->forward({{kRadiusName, BatchedArray({1, 1}, {radius})}});
  solution_ = r.solution;
  info_ = r.info;
  std::vector<BatchedArray> poses;
  for (std::size_t k = 0; k < graph_.poses.size(); ++k) poses.push_back(solution_.at(pose_name(k)));
  const BatchedArray per = pose_error(graph_.kind, poses, graph_.ground_truth);
  double s = 0;
  for (std::int64_t b = 0; b < per.batch(); ++b) s += per[b];
  return s / static_cast<double>(per.batch());
}

double WelschPipeline::loss(double radius) { return forward(radius); }

std::pair<double, double> WelschPipeline::loss_and_grad(double radius) {
  const double L = forward(radius);
  std::vector<BatchedArray> poses;
  for (std::size_t k = 0; k < graph_.poses.size(); ++k) poses.push_back(solution_.at(pose_name(k)));
  const std::vector<BatchedArray> grads = pose_error_grad(graph_.kind, poses, graph_.ground_truth);
  std::map<std::string, BatchedArray> upstream;
  for (std::size_t k = 0; k < grads.size(); ++k) upstream[pose_name(k)] = grads[k];
  const backward::GradientResult g = layer_->backward(upstream, {kRadiusName});
  warning_ = g.warning ? g.message : std::string();
  return {L, g.at(kRadiusName)[0]};
}

WelschLearnResult learn_welsch_radius(const PoseGraph& graph, const WelschLearnConfig& cfg) {
  if (cfg.epochs < 0) throw Error("welsch: epochs must be non-negative");
  if (!(cfg.initial_radius > 0) || !(cfg.baseline_radius > 0)) throw Error("welsch: radii must be positive");
  WelschPipeline pipe(graph, cfg.inner);
  WelschLearnResult out;
  AdamState adam;
  adam.lr = cfg.lr;
  BatchedArray u({1, 1}, {std::log(cfg.initial_radius)});
  double k = cfg.initial_radius;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto [L, dk] = pipe.loss_and_grad(k);
    if (!pipe.last_warning().empty()) ++out.warnings;
    out.epochs.push_back({k, L, dk});
    const BatchedArray next = adam_update(adam, u, BatchedArray({1, 1}, {dk * k}));
    if (next[0] != u[0]) k = std::exp(next[0]);
    u = next;
  }
  out.final_radius = k;
  out.final_loss = pipe.loss(out.final_radius);
  out.baseline_loss = pipe.loss(cfg.baseline_radius);
  return out;
}

}  // namespace dnls::apps
