#pragma once

#include <optional>

#include <nlohmann/json.hpp>

#include "admrl/dyn_model.hpp"
#include "admrl/envs.hpp"
#include "admrl/policy.hpp"
#include "admrl/rollout.hpp"
#include "admrl/types.hpp"

namespace admrl::policy_opt {

struct TrpoConfig {
  double kl_limit = 0.01;
  int cg_iters_inner = 10;
  double cg_damping = 0.1;
  int backtrack_count = 10;
  double backtrack_ratio = 0.5;
  int fisher_subsample = 5;  // Fisher products use every k-th state
  int n_trpo = 2000;  // virtual samples per policy step
};

void validate(const TrpoConfig& c);

struct TrpoResult {
  Vec theta;
  bool accepted = false;
  bool warning = false;  // Fisher solve did not reduce the residual
  double kl = 0.0;
  double improvement = 0.0;
  double grad_norm = 0.0;
};

/// One natural-gradient step on the importance-sampled surrogate
/// mean_t[ratio_t * A_t] with standardized advantages. The line search keeps
/// the sampled KL within 1.5 * kl_limit and requires a non-negative
/// surrogate improvement; on failure theta is returned unchanged.
TrpoResult trpo_step(const policy::Policy& policy, const Vec& theta, const rollout::TrajectoryBatch& batch,
                     const envs::RewardModel& reward, const Vec& psi, double gamma, const TrpoConfig& config);

struct VirtualTrainingBudget {
  int n = 1;         // outer iterations
  int n_model = 100;  // model fitting steps per outer iteration
  int n_policy = 20;  // TRPO steps per outer iteration
};

void validate(const VirtualTrainingBudget& b);

/// Everything the inner loop needs besides the model and policy parameters.
struct InnerContext {
  const envs::Environment& env;  // initial-state distribution and action box
  const policy::Policy& policy;
  const envs::RewardModel& reward;
  double gamma = 0.99;
  int horizon = 100;
  TrpoConfig trpo;
  dyn_model::FitConfig fit;
};

struct VirtualTrainingResult {
  Vec theta;
  int trpo_steps = 0;
  int rejected_steps = 0;
  int warnings = 0;
};

/// Alternates model fitting on `dataset` with TRPO on model rollouts. Only
/// the model is sampled; the real environment is never stepped.
VirtualTrainingResult virtual_training(const InnerContext& ctx, const Vec& theta, dyn_model::DynModel& model,
                                       const Vec& psi, const dyn_model::TransitionDataset& dataset,
                                       const VirtualTrainingBudget& budget, Rng& rng);

/// Fresh random policy followed by n_zeroshot outer iterations of virtual
/// training. Returns nullopt (skip) when there is no data to fit a model on.
std::optional<VirtualTrainingResult> zero_shot_adapt(const InnerContext& ctx, dyn_model::DynModel& model,
                                                     const Vec& psi, const dyn_model::TransitionDataset& dataset,
                                                     int n_zeroshot, const VirtualTrainingBudget& per_iteration,
                                                     Rng& rng);

/// ||d eta_hat / d theta||_2 / sqrt(p) on a virtual batch.
double first_order_residual(const policy::Policy& policy, const Vec& theta, const rollout::TrajectoryBatch& batch,
                            const envs::RewardModel& reward, const Vec& psi, double gamma);

nlohmann::json to_json(const TrpoConfig& c);
TrpoConfig trpo_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VirtualTrainingBudget& b);
VirtualTrainingBudget budget_from_json(const nlohmann::json& j);

}  // namespace admrl::policy_opt
