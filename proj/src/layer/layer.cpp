// SPDX-License-Identifier: Apache-2.0
#include "dnls/layer/layer.hpp"

#include "dnls/error.hpp"

namespace dnls::layer {

DnlsLayer::DnlsLayer(Objective objective, LayerConfig cfg)
    : obj_(std::make_unique<Objective>(std::move(objective))), cfg_(std::move(cfg)) {
  cfg_.mode.validate();
  opt_ = std::make_unique<optim::Optimizer>(*obj_, cfg_.optimizer);
  init_ = obj_->optim_values();
}

void DnlsLayer::set_backward_mode(const backward::BackwardMode& mode) {
  mode.validate();
  cfg_.mode = mode;
}

void DnlsLayer::set_optimizer_config(const optim::OptimizerConfig& cfg) {
  opt_->set_config(cfg);
  cfg_.optimizer = cfg;
}

ForwardResult DnlsLayer::forward(const std::map<std::string, BatchedArray>& inputs) {
  std::vector<std::string> required;
  if (cfg_.required_inputs) {
    required = *cfg_.required_inputs;
  } else {
    for (const auto& v : obj_->aux_vars()) required.push_back(v->name());
  }
  for (const auto& n : required) {
    if (!inputs.count(n)) throw Error("forward: missing input '" + n + "'");
  }
  for (const auto& [n, x] : inputs) {
    if (!obj_->optim_index(n) && !obj_->aux_index(n)) throw Error("forward: unknown input '" + n + "'");
  }
  run_.reset();
  obj_->set_optim_values(init_);
  obj_->update_inputs(inputs);
  shared_inputs_.clear();
  for (const auto& [n, x] : inputs) {
    if (x.batch() == 1 && obj_->batch_size() > 1) shared_inputs_.insert(n);
  }

  const backward::BackwardMode& mode = cfg_.mode;
  backward::Run run;
  if (mode.kind == backward::Kind::Unroll) {
    run = backward::solve_recorded(*opt_, 0);
  } else if (mode.kind == backward::Kind::Truncated) {
    run = backward::solve_recorded(*opt_, mode.k);
  } else {
    run = backward::solve_plain(*opt_);
  }
  ForwardResult out;
  for (std::size_t i = 0; i < obj_->optim_vars().size(); ++i) {
    out.solution[obj_->optim_vars()[i]->name()] = run.theta_star[i];
  }
  out.info = run.info;
  run_ = std::move(run);
  run_mode_ = mode;
  return out;
}

backward::GradientResult DnlsLayer::backward(const std::map<std::string, BatchedArray>& upstream,
                                             const std::vector<std::string>& targets) {
  if (!run_) throw Error("backward: call forward first");
  if (!(run_mode_ == cfg_.mode)) {
    throw Error("backward: the forward pass was recorded for mode '" + run_mode_.name() + "', not '" +
                cfg_.mode.name() + "'; run forward again");
  }
  backward::BackwardRequest req{upstream, targets};
  backward::GradientResult g = backward::compute_gradients(*obj_, *run_, cfg_.mode, req);
  for (auto& [n, grad] : g.grads) {
    if (shared_inputs_.count(n)) grad = reduce_to_batch(grad, 1);
  }
  return g;
}

}  // namespace dnls::layer
