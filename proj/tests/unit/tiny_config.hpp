#pragma once

#include "admrl/admrl_loop.hpp"

namespace admrl::test {

/// A run small enough to train and evaluate in a few seconds.
inline loop::RunConfig tiny_config(loop::Sampler sampler = loop::Sampler::adversarial, std::uint64_t seed = 0) {
  auto c = loop::default_config();
  c.sampler = sampler;
  c.seed = seed;
  c.n_tasks = 3;
  c.n_slbo = 1;
  c.first_task_slbo = 2;
  c.horizon = 20;
  c.n_collect = 100;
  c.n_zeroshot = 1;
  c.n_inner = 1;
  c.n_model = 5;
  c.n_policy = 2;
  c.trpo.n_trpo = 100;
  c.gate_trajectories = 3;
  c.hessian_trajectories = 3;
  c.cg.max_iters = 10;
  c.policy.hidden = {8};
  c.model.hidden = {16};
  c.eval.grid_size = 2;
  c.eval.ood_grid_size = 3;
  c.eval.adapt_samples = {100};
  c.eval.eval_rollouts = 3;
  c.eval.oracle_min_iters = 2;
  c.eval.oracle_max_iters = 4;
  c.eval.oracle_plateau_window = 1;
  c.eval.oracle_samples = 100;
  return c;
}

}  // namespace admrl::test
