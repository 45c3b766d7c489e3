// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dnls/backward/backward.hpp"
#include "dnls/core/objective.hpp"
#include "dnls/optim/optimizer.hpp"

namespace dnls::layer {

struct LayerConfig {
  optim::OptimizerConfig optimizer;
  backward::BackwardMode mode = backward::BackwardMode::unroll();
  // Auxiliary variables every forward call must supply. Unset: all of them.
  std::optional<std::vector<std::string>> required_inputs;
};

struct ForwardResult {
  std::map<std::string, BatchedArray> solution;  // optimized payload per optimization variable
  optim::OptimizerInfo info;
};

// Objective plus optimizer as one differentiable map from auxiliary inputs
// (and initial values) to the optimized variables.
class DnlsLayer {
 public:
  DnlsLayer(Objective objective, LayerConfig cfg = {});
  DnlsLayer(const DnlsLayer&) = delete;
  DnlsLayer& operator=(const DnlsLayer&) = delete;

  Objective& objective() noexcept { return *obj_; }
  const LayerConfig& config() const noexcept { return cfg_; }
  void set_backward_mode(const backward::BackwardMode& mode);
  void set_optimizer_config(const optim::OptimizerConfig& cfg);

  // Inputs name auxiliary payloads or initial values of optimization
  // variables; initial values not given start from the construction-time
  // payloads, so repeated calls with the same inputs are identical.
  ForwardResult forward(const std::map<std::string, BatchedArray>& inputs);

  // Upstream gradients in tangent coordinates per optimization variable.
  // `targets` defaults to every auxiliary variable. Inputs passed with batch
  // size 1 get gradients summed over the batch.
  backward::GradientResult backward(const std::map<std::string, BatchedArray>& upstream,
                                    const std::vector<std::string>& targets = {});

  bool has_forward() const noexcept { return run_.has_value(); }

 private:
  std::unique_ptr<Objective> obj_;
  LayerConfig cfg_;
  std::unique_ptr<optim::Optimizer> opt_;
  std::vector<BatchedArray> init_;  // construction-time optimization payloads
  std::optional<backward::Run> run_;
  backward::BackwardMode run_mode_;
  std::set<std::string> shared_inputs_;  // supplied with batch 1
};

}  // namespace dnls::layer
