#pragma once

#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "admrl/envs.hpp"
#include "admrl/policy.hpp"
#include "admrl/rollout.hpp"
#include "admrl/types.hpp"

namespace admrl::task_grad {

using LinearOperator = std::function<Vec(const Vec&)>;

struct CGConfig {
  int max_iters = 200;
  double residual_tol = 1e-8;  // relative
  double damping = 1e-3;
  /// Solve (A^T A + damping I) x = A^T b. When false the operator must be
  /// symmetric positive definite and (A + damping I) x = b is solved directly.
  bool normal_equations = true;
};

struct CGResult {
  Vec x;
  double relative_residual = 0.0;  // of the system actually solved
  int iterations = 0;
  bool converged = false;
};

/// Conjugate gradients. `apply_AT` defaults to `apply_A` (symmetric A).
/// Returns the iterate with the smallest residual seen; `converged` is false
/// when the tolerance was not reached within max_iters.
CGResult cg_solve(const LinearOperator& apply_A, const Vec& b, const CGConfig& config,
                  const LinearOperator& apply_AT = {});

struct PolicyGradient {
  Vec grad;
  Vec stderr_;  // per-coordinate standard error over trajectories
};

/// (1/n) sum_traj sum_t gamma^t score_t A_t with baseline-subtracted
/// Monte Carlo advantages. No provenance check.
PolicyGradient policy_gradient(const policy::Policy& policy, const Vec& theta, const rollout::TrajectoryBatch& batch,
                               const envs::RewardModel& reward, const Vec& psi, double gamma);

/// d eta*/d theta at theta_hat from a real, on-policy batch.
PolicyGradient policy_grad_real(const policy::Policy& policy, const Vec& theta_hat,
                                const rollout::TrajectoryBatch& real_batch, const envs::RewardModel& reward,
                                const Vec& psi, double gamma);

/// p x k estimate of d^2 eta_hat / d theta d psi^T from a virtual batch.
Mat mixed_grad(const policy::Policy& policy, const Vec& theta_hat, const rollout::TrajectoryBatch& virtual_batch,
               const envs::RewardModel& reward, const Vec& psi, double gamma);

/// Sample estimate of the policy Hessian
///   mean_tau[(g_tau g_tau^T + H_tau) R(tau)],  g_tau, H_tau = grad / Hessian of log pi(tau),
/// applied matrix-free as g1 + g2 (outer-product part plus second-derivative
/// part). The batch is frozen at construction so the operator is linear.
class HessianOperator {
 public:
  HessianOperator(const policy::Policy& policy, Vec theta, const rollout::TrajectoryBatch& batch,
                  const envs::RewardModel& reward, const Vec& psi, double gamma);

  int dim() const { return static_cast<int>(theta_.size()); }
  Vec apply(const Vec& x) const;
  Vec operator()(const Vec& x) const { return apply(x); }

  const Vec& returns() const { return returns_; }

 private:
  const policy::Policy& policy_;
  Vec theta_;
  Mat score_sums_;  // p x n_traj
  Vec returns_;     // R(tau) per trajectory
  Mat states_;      // all steps stacked
  Mat actions_;
  Vec step_weights_;  // R(tau) / n for the step's trajectory
};

Vec hessian_vec(const policy::Policy& policy, const Vec& theta_hat, const rollout::TrajectoryBatch& virtual_batch,
                const envs::RewardModel& reward, const Vec& psi, double gamma, const Vec& x);

struct ImplicitJacobian {
  Mat jacobian;  // p x k
  std::vector<CGResult> columns;
  bool warning = false;  // some column did not converge
};

/// d theta / d psi^T = -H^{-1} B, one CG solve per column of B.
ImplicitJacobian implicit_jacobian(const LinearOperator& hessian, const Mat& mixed, const CGConfig& config);

/// Sampled version on a frozen virtual batch.
ImplicitJacobian dtheta_dpsi(const policy::Policy& policy, const Vec& theta_hat,
                             const rollout::TrajectoryBatch& virtual_batch, const envs::RewardModel& reward,
                             const Vec& psi, double gamma, const CGConfig& config);

struct GradEstimate {
  Vec term_opt;    // d eta*/d psi at theta*
  Vec term_chain;  // (d theta_hat / d psi)^T d eta*/d theta at theta_hat
  Vec term_hat;    // d eta*/d psi at theta_hat
  Vec total;       // term_opt - (term_chain + term_hat)
  std::vector<double> cg_residuals;
  bool cg_warning = false;
  std::size_t n_star = 0;
  std::size_t n_hat = 0;
  std::size_t n_virtual = 0;
};

nlohmann::json to_json(const GradEstimate& g);
GradEstimate grad_estimate_from_json(const nlohmann::json& j);

struct TaskGradientInputs {
  const policy::Policy& policy;
  const envs::RewardModel& reward;
  Vec psi;
  double gamma;
  Vec theta_star;
  Vec theta_hat;
  const rollout::TrajectoryBatch& real_batch_star;
  const rollout::TrajectoryBatch& real_batch_hat;
  const rollout::TrajectoryBatch& virtual_batch;
  CGConfig cg;
  /// Accept a theta* batch produced by an earlier policy iterate (sample reuse).
  bool allow_stale_star = false;
};

GradEstimate task_gradient(const TaskGradientInputs& in);

envs::TaskParams task_ascent_step(const envs::TaskBox& box, const Vec& psi, const Vec& grad, double alpha);

}  // namespace admrl::task_grad
