#include "admrl/policy_opt.hpp"

#include <cmath>

#include "admrl/task_grad.hpp"

namespace admrl::policy_opt {

void validate(const TrpoConfig& c) {
  require(c.kl_limit > 0.0, "trpo.kl_limit must be > 0");
  require(c.n_trpo >= 1, "trpo.n_trpo must be >= 1");
  require(c.cg_iters_inner >= 1, "trpo.cg_iters_inner must be >= 1");
  require(c.cg_damping >= 0.0, "trpo.cg_damping must be >= 0");
  require(c.fisher_subsample >= 1, "trpo.fisher_subsample must be >= 1");
  require(c.backtrack_count >= 1, "trpo.backtrack_count must be >= 1");
  require(c.backtrack_ratio > 0.0 && c.backtrack_ratio < 1.0, "trpo.backtrack_ratio must be in (0, 1)");
}

void validate(const VirtualTrainingBudget& b) {
  require(b.n >= 0 && b.n_model >= 0 && b.n_policy >= 0, "virtual training budget entries must be >= 0");
}

namespace {

struct StackedBatch {
  Mat states;
  Mat actions;
};

StackedBatch stack(const rollout::TrajectoryBatch& batch, int d, int m) {
  const auto n = static_cast<Eigen::Index>(batch.total_steps());
  StackedBatch out{Mat(d, n), Mat(m, n)};
  Eigen::Index off = 0;
  for (const auto& tr : batch.trajectories) {
    const int len = tr.length();
    out.states.middleCols(off, len) = tr.states.leftCols(len);
    out.actions.middleCols(off, len) = tr.actions;
    off += len;
  }
  return out;
}

}  // namespace

TrpoResult trpo_step(const policy::Policy& policy, const Vec& theta, const rollout::TrajectoryBatch& batch,
                     const envs::RewardModel& reward, const Vec& psi, double gamma, const TrpoConfig& config) {
  validate(config);
  if (batch.empty() || batch.total_steps() == 0) throw InputError("trpo_step: empty batch");
  require(theta.size() == policy.param_dim(), "trpo_step: theta dimension mismatch");

  TrpoResult out;
  out.theta = theta;

  Vec adv = rollout::advantages(batch, reward, psi, gamma).values;
  const double n = static_cast<double>(adv.size());
  const double mean = adv.mean();
  const double sd = std::sqrt((adv.array() - mean).square().sum() / n);
  adv = (adv.array() - mean) / (sd + 1e-8);

  const StackedBatch sb = stack(batch, policy.obs_dim(), policy.act_dim());
  const Vec g = policy.weighted_score(theta, sb.states, sb.actions, adv / n);
  out.grad_norm = g.norm();
  if (out.grad_norm == 0.0 || !std::isfinite(out.grad_norm)) return out;

  task_grad::CGConfig cg;
  cg.max_iters = config.cg_iters_inner;
  cg.residual_tol = 1e-10;
  cg.damping = config.cg_damping;
  cg.normal_equations = false;
  const Eigen::Index stride = config.fisher_subsample;
  const Eigen::Index n_fisher = (sb.states.cols() + stride - 1) / stride;
  Mat fisher_states(sb.states.rows(), n_fisher);
  for (Eigen::Index i = 0; i < n_fisher; ++i) fisher_states.col(i) = sb.states.col(i * stride);
  const auto fvp = policy.fisher_operator(theta, fisher_states);
  const task_grad::CGResult sol = task_grad::cg_solve(fvp, g, cg);
  if (!(sol.relative_residual < 1.0) || sol.x.squaredNorm() == 0.0) {
    out.warning = true;
    return out;
  }
  const double shs = sol.x.dot(fvp(sol.x) + config.cg_damping * sol.x);
  if (!(shs > 0.0)) {
    out.warning = true;
    return out;
  }
  const Vec full_step = std::sqrt(2.0 * config.kl_limit / shs) * sol.x;

  const Vec logp_old = policy.log_prob(theta, sb.states, sb.actions);
  const double surr_old = adv.mean();
  double frac = 1.0;
  for (int i = 0; i < config.backtrack_count; ++i, frac *= config.backtrack_ratio) {
    const Vec cand = theta + frac * full_step;
    const double kl = policy.mean_kl(theta, cand, sb.states);
    if (!std::isfinite(kl) || kl > 1.5 * config.kl_limit) continue;
    const Vec ratio = (policy.log_prob(cand, sb.states, sb.actions) - logp_old).array().exp();
    const double improvement = ratio.dot(adv) / n - surr_old;
    if (!std::isfinite(improvement) || improvement < 0.0) continue;
    out.theta = cand;
    out.accepted = true;
    out.kl = kl;
    out.improvement = improvement;
    return out;
  }
  return out;
}

VirtualTrainingResult virtual_training(const InnerContext& ctx, const Vec& theta, dyn_model::DynModel& model,
                                       const Vec& psi, const dyn_model::TransitionDataset& dataset,
                                       const VirtualTrainingBudget& budget, Rng& rng) {
  validate(budget);
  validate(ctx.trpo);
  require(ctx.horizon >= 1, "virtual_training: horizon must be >= 1");
  if (dataset.empty()) throw StateError("virtual_training: dataset is empty");

  VirtualTrainingResult out;
  out.theta = theta;
  const dyn_model::ModelDynamics virtual_env(model, ctx.env);
  const int n_traj = std::max(1, ctx.trpo.n_trpo / ctx.horizon);
  for (int it = 0; it < budget.n; ++it) {
    dyn_model::fit(model, dataset, budget.n_model, rng, ctx.fit);
    for (int j = 0; j < budget.n_policy; ++j) {
      const auto batch = rollout::collect(virtual_env, ctx.policy, out.theta, n_traj, ctx.horizon, rng);
      const TrpoResult step = trpo_step(ctx.policy, out.theta, batch, ctx.reward, psi, ctx.gamma, ctx.trpo);
      ++out.trpo_steps;
      if (!step.accepted) ++out.rejected_steps;
      if (step.warning) ++out.warnings;
      out.theta = step.theta;
    }
  }
  return out;
}

std::optional<VirtualTrainingResult> zero_shot_adapt(const InnerContext& ctx, dyn_model::DynModel& model,
                                                     const Vec& psi, const dyn_model::TransitionDataset& dataset,
                                                     int n_zeroshot, const VirtualTrainingBudget& per_iteration,
                                                     Rng& rng) {
  require(n_zeroshot >= 0, "zero_shot_adapt: n_zeroshot must be >= 0");
  if (dataset.empty()) return std::nullopt;
  const Vec theta0 = ctx.policy.initial_params(rng);
  VirtualTrainingBudget b = per_iteration;
  b.n = n_zeroshot;
  return virtual_training(ctx, theta0, model, psi, dataset, b, rng);
}

double first_order_residual(const policy::Policy& policy, const Vec& theta, const rollout::TrajectoryBatch& batch,
                            const envs::RewardModel& reward, const Vec& psi, double gamma) {
  const Vec g = task_grad::policy_gradient(policy, theta, batch, reward, psi, gamma).grad;
  return g.norm() / std::sqrt(static_cast<double>(g.size()));
}

nlohmann::json to_json(const TrpoConfig& c) {
  return {{"kl_limit", c.kl_limit},       {"cg_iters_inner", c.cg_iters_inner},
          {"cg_damping", c.cg_damping},   {"backtrack_count", c.backtrack_count},
          {"backtrack_ratio", c.backtrack_ratio}, {"fisher_subsample", c.fisher_subsample},
          {"n_trpo", c.n_trpo}};
}

TrpoConfig trpo_from_json(const nlohmann::json& j) {
  TrpoConfig c;
  c.kl_limit = j.at("kl_limit").get<double>();
  c.cg_iters_inner = j.at("cg_iters_inner").get<int>();
  c.cg_damping = j.at("cg_damping").get<double>();
  c.backtrack_count = j.at("backtrack_count").get<int>();
  c.backtrack_ratio = j.at("backtrack_ratio").get<double>();
  c.fisher_subsample = j.at("fisher_subsample").get<int>();
  c.n_trpo = j.at("n_trpo").get<int>();
  validate(c);
  return c;
}

nlohmann::json to_json(const VirtualTrainingBudget& b) {
  return {{"n", b.n}, {"n_model", b.n_model}, {"n_policy", b.n_policy}};
}

VirtualTrainingBudget budget_from_json(const nlohmann::json& j) {
  VirtualTrainingBudget b;
  b.n = j.at("n").get<int>();
  b.n_model = j.at("n_model").get<int>();
  b.n_policy = j.at("n_policy").get<int>();
  validate(b);
  return b;
}

}  // namespace admrl::policy_opt
