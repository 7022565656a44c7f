#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "admrl/envs.hpp"
#include "admrl/policy.hpp"
#include "admrl/rollout.hpp"
#include "admrl/types.hpp"

namespace admrl::oracle {

/// Finite MDP with a linear reward family r_psi(s, a, s') = psi^T f(s, a, s').
struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  int k = 0;
  double gamma = 0.9;
  std::vector<Mat> P;         // P[a](s, s')
  std::vector<Mat> features;  // features[j](s * n_actions + a, s')
  Vec p0;

  /// Random instance: transition rows and p0 from normalized uniforms,
  /// features uniform on [-1, 1].
  static TabularMDP random(std::uint64_t seed, int n_states = 5, int n_actions = 2, int k = 2,
                           double gamma = 0.9);

  void validate() const;
  int param_dim() const { return n_states * n_actions; }
  Vec feature(int s, int a, int s_next) const;

  nlohmann::json to_json() const;
  static TabularMDP from_json(const nlohmann::json& j);
};

/// pi(a|s) = softmax(theta[s * M : (s + 1) * M]). States and actions are
/// 1 x n matrices holding indices.
class SoftmaxPolicy final : public policy::Policy {
 public:
  SoftmaxPolicy(int n_states, int n_actions);

  int param_dim() const override { return n_states_ * n_actions_; }
  int obs_dim() const override { return 1; }
  int act_dim() const override { return 1; }

  Mat probabilities(const Vec& theta) const;  // N x M

  Vec initial_params(Rng& rng) const override;
  Mat sample(const Vec& theta, const Mat& states, std::span<Rng> rngs) const override;
  Vec log_prob(const Vec& theta, const Mat& states, const Mat& actions) const override;
  Mat scores(const Vec& theta, const Mat& states, const Mat& actions) const override;
  Vec weighted_score(const Vec& theta, const Mat& states, const Mat& actions, const Vec& w) const override;
  Vec logp_hvp(const Vec& theta, const Mat& states, const Mat& actions, const Vec& w,
               const Vec& x) const override;
  Vec fisher_vp(const Vec& theta, const Mat& states, const Vec& x) const override;
  double mean_kl(const Vec& theta_old, const Vec& theta_new, const Mat& states) const override;

 private:
  int index(double s) const;
  int action(double a) const;

  int n_states_;
  int n_actions_;
};

class TabularEnv final : public envs::Environment {
 public:
  explicit TabularEnv(TabularMDP mdp);

  const TabularMDP& mdp() const { return mdp_; }
  int state_dim() const override { return 1; }
  int action_dim() const override { return 1; }
  Vec initial_state(Rng& rng) const override;
  Mat step_batch(const Mat& states, const Mat& actions, std::span<Rng> rngs) const override;
  Vec action_lo() const override { return Vec::Zero(1); }
  Vec action_hi() const override { return Vec::Constant(1, mdp_.n_actions - 1); }
  std::string name() const override { return "tabular"; }
  std::unique_ptr<envs::Environment> clone() const override;

 private:
  TabularMDP mdp_;
  std::vector<Mat> cdf_;  // cumulative rows per action
};

class TabularReward final : public envs::RewardModel {
 public:
  explicit TabularReward(const TabularMDP& mdp) : mdp_(mdp) {}

  int task_dim() const override { return mdp_.k; }
  double value(const Vec& psi, const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
               const Eigen::Ref<const Vec>& s_next) const override;
  void accumulate_grad_psi(const Vec& psi, const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
                           const Eigen::Ref<const Vec>& s_next, double scale, Eigen::Ref<Vec> out) const override;

 private:
  const TabularMDP& mdp_;
};

// ---------------------------------------------------------------------------
// Exact quantities. `beta` is the weight of an entropy bonus
// beta * H(pi(.|s)) added to the reward at every visited state.

Mat action_probabilities(const TabularMDP& mdp, const Vec& theta);
/// Expected one-step reward under (s, a): sum_s' P(s'|s,a) psi^T f(s,a,s').
Mat expected_reward(const TabularMDP& mdp, const Vec& psi);  // N x M

double exact_return(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta = 0.0);
Vec state_values(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta = 0.0);
/// Discounted state-action occupancy d(s) pi(a|s), d = (I - gamma P_pi^T)^{-1} p0.
Mat occupancy(const TabularMDP& mdp, const Vec& theta);
/// Return recomputed from the occupancy measure.
double occupancy_return(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta = 0.0);

/// Central differences with one Richardson step, h in {1e-4, 5e-5}.
Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-4);

enum class Wrt { theta, psi };
Vec exact_grad(const TabularMDP& mdp, const Vec& theta, const Vec& psi, Wrt wrt, double beta = 0.0);
/// Occupancy-weighted features.
Vec analytic_grad_psi(const TabularMDP& mdp, const Vec& theta);
/// d pi(a|s) [Q(s,a) - beta log pi(a|s) - V(s)].
Vec analytic_grad_theta(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta = 0.0);
/// d^2 eta / d theta^2 by central differences of analytic_grad_theta.
Mat exact_hessian(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta = 0.0, double h = 1e-5);
/// d^2 eta / d theta d psi^T (p x k).
Mat exact_mixed(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta = 0.0);

/// Symmetric central-difference Hessian from 2p^2 + 1 evaluations.
Mat fd_hessian(const std::function<double(const Vec&)>& f, const Vec& theta, double delta);

/// Jacobian of the flattened action probabilities with respect to theta.
Mat softmax_jacobian(const TabularMDP& mdp, const Vec& theta);

struct ResolveBudget {
  int max_iters = 20000;
  double tol = 1e-10;
};

/// argmax_theta exact_return(theta) + entropy bonus. Gradient ascent with an
/// adaptive step followed by Newton refinement on the gauge-free subspace.
/// Throws NumericError carrying the final gradient norm when the budget runs out.
Vec resolve_inner(const TabularMDP& mdp, const Vec& psi, double beta, const Vec& init,
                  const ResolveBudget& budget = {});

/// Explicit p x p REINFORCE Hessian mean_tau[(g g^T + H_tau) R(tau)] on a batch,
/// assembled from the softmax closed forms with returns taken from the MDP's
/// own feature tables.
Mat assemble_reinforce_hessian(const TabularMDP& mdp, const Vec& theta, const rollout::TrajectoryBatch& batch,
                               const Vec& psi);

}  // namespace admrl::oracle
