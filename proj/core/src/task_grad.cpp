#include "admrl/task_grad.hpp"

#include <cmath>
#include <limits>

#include "admrl/json_util.hpp"

namespace admrl::task_grad {

CGResult cg_solve(const LinearOperator& apply_A, const Vec& b, const CGConfig& config,
                  const LinearOperator& apply_AT) {
  require(static_cast<bool>(apply_A), "cg_solve: operator is empty");
  require(config.max_iters >= 0, "cg_solve: max_iters must be >= 0");
  require(config.damping >= 0.0, "cg_solve: damping must be >= 0");
  require(b.allFinite(), "cg_solve: right-hand side is not finite");

  CGResult out;
  out.x = Vec::Zero(b.size());
  if (b.isZero(0.0)) {
    out.converged = true;
    return out;
  }

  const LinearOperator& at = apply_AT ? apply_AT : apply_A;
  LinearOperator op;
  Vec rhs;
  if (config.normal_equations) {
    op = [&](const Vec& x) -> Vec { return at(apply_A(x)) + config.damping * x; };
    rhs = at(b);
  } else {
    op = [&](const Vec& x) -> Vec { return apply_A(x) + config.damping * x; };
    rhs = b;
  }

  const Eigen::Index n = rhs.size();
  out.x = Vec::Zero(n);
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) {
    out.converged = true;
    return out;
  }

  Vec x = Vec::Zero(n);
  Vec r = rhs;
  Vec p = r;
  double rr = r.squaredNorm();
  double best = std::sqrt(rr) / rhs_norm;
  Vec best_x = x;

  for (int it = 0; it < config.max_iters; ++it) {
    if (best <= config.residual_tol) break;
    const Vec ap = op(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0) || !std::isfinite(pap)) break;
    const double alpha = rr / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rr_new = r.squaredNorm();
    out.iterations = it + 1;
    const double rel = std::sqrt(rr_new) / rhs_norm;
    if (rel < best) {
      best = rel;
      best_x = x;
    }
    if (rel <= config.residual_tol) break;
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }

  out.x = best_x;
  out.relative_residual = (op(best_x) - rhs).norm() / rhs_norm;
  out.converged = best <= config.residual_tol;
  if (!out.x.allFinite()) throw NumericError("cg_solve: non-finite iterate");
  return out;
}

namespace {

Vec discounted_weights(const rollout::StepWeights& w, std::size_t traj, int len, double gamma) {
  Vec out(len);
  double g = 1.0;
  for (int t = 0; t < len; ++t) {
    out[t] = g * w.values[w.index(traj, t)];
    g *= gamma;
  }
  return out;
}

void check_batch(const policy::Policy& policy, const Vec& theta, const rollout::TrajectoryBatch& batch,
                 const char* who) {
  if (batch.empty()) throw InputError(std::string(who) + ": empty trajectory batch");
  require(theta.size() == policy.param_dim(), std::string(who) + ": theta dimension mismatch");
}

}  // namespace

PolicyGradient policy_gradient(const policy::Policy& policy, const Vec& theta, const rollout::TrajectoryBatch& batch,
                               const envs::RewardModel& reward, const Vec& psi, double gamma) {
  check_batch(policy, theta, batch, "policy_gradient");
  const auto adv = rollout::advantages(batch, reward, psi, gamma);
  const auto n = batch.size();
  const Eigen::Index p = policy.param_dim();
  Vec sum = Vec::Zero(p);
  Vec sum_sq = Vec::Zero(p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& tr = batch.trajectories[i];
    const int len = tr.length();
    const Vec w = discounted_weights(adv, i, len, gamma);
    const Vec c = policy.weighted_score(theta, tr.states.leftCols(len), tr.actions, w);
    sum += c;
    sum_sq += c.cwiseProduct(c);
  }
  PolicyGradient out;
  const double nd = static_cast<double>(n);
  out.grad = sum / nd;
  if (n > 1) {
    const Vec var = ((sum_sq - nd * out.grad.cwiseProduct(out.grad)) / (nd - 1.0)).cwiseMax(0.0);
    out.stderr_ = (var / nd).cwiseSqrt();
  } else {
    out.stderr_ = Vec::Constant(p, std::numeric_limits<double>::infinity());
  }
  return out;
}

PolicyGradient policy_grad_real(const policy::Policy& policy, const Vec& theta_hat,
                                const rollout::TrajectoryBatch& real_batch, const envs::RewardModel& reward,
                                const Vec& psi, double gamma) {
  if (real_batch.source != rollout::Source::real)
    throw InputError("policy_grad_real: batch was not collected on the real environment");
  return policy_gradient(policy, theta_hat, real_batch, reward, psi, gamma);
}

Mat mixed_grad(const policy::Policy& policy, const Vec& theta_hat, const rollout::TrajectoryBatch& virtual_batch,
               const envs::RewardModel& reward, const Vec& psi, double gamma) {
  check_batch(policy, theta_hat, virtual_batch, "mixed_grad");
  if (virtual_batch.source != rollout::Source::virtual_model)
    throw InputError("mixed_grad: batch was not collected on the learned model");
  const auto dadv = rollout::advantage_grad_psi(virtual_batch, reward, psi, gamma);
  const Eigen::Index k = dadv.grads.rows();
  Mat out = Mat::Zero(policy.param_dim(), k);
  for (std::size_t i = 0; i < virtual_batch.size(); ++i) {
    const auto& tr = virtual_batch.trajectories[i];
    const int len = tr.length();
    if (len == 0) continue;
    const Mat sc = policy.scores(theta_hat, tr.states.leftCols(len), tr.actions);
    Mat w = dadv.grads.middleCols(dadv.index(i, 0), len).transpose();  // len x k
    double g = 1.0;
    for (int t = 0; t < len; ++t) {
      w.row(t) *= g;
      g *= gamma;
    }
    out.noalias() += sc * w;
  }
  return out / static_cast<double>(virtual_batch.size());
}

HessianOperator::HessianOperator(const policy::Policy& policy, Vec theta, const rollout::TrajectoryBatch& batch,
                                 const envs::RewardModel& reward, const Vec& psi, double gamma)
    : policy_(policy), theta_(std::move(theta)) {
  check_batch(policy, theta_, batch, "HessianOperator");
  const auto n = batch.size();
  const Eigen::Index steps = static_cast<Eigen::Index>(batch.total_steps());
  const int d = policy.obs_dim();
  const int m = policy.act_dim();
  score_sums_.resize(policy.param_dim(), static_cast<Eigen::Index>(n));
  returns_.resize(static_cast<Eigen::Index>(n));
  states_.resize(d, steps);
  actions_.resize(m, steps);
  step_weights_.resize(steps);
  Eigen::Index off = 0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& tr = batch.trajectories[i];
    const int len = tr.length();
    const auto col = static_cast<Eigen::Index>(i);
    returns_[col] = rollout::return_of(tr, reward, psi, gamma);
    if (len > 0) {
      states_.middleCols(off, len) = tr.states.leftCols(len);
      actions_.middleCols(off, len) = tr.actions;
      step_weights_.segment(off, len).setConstant(returns_[col] * inv_n);
      score_sums_.col(col) = policy.weighted_score(theta_, tr.states.leftCols(len), tr.actions, Vec::Ones(len));
    } else {
      score_sums_.col(col).setZero();
    }
    off += len;
  }
}

Vec HessianOperator::apply(const Vec& x) const {
  require(x.size() == theta_.size(), "HessianOperator: vector dimension mismatch");
  const Vec proj = score_sums_.transpose() * x;
  const Vec g1 = score_sums_ * (proj.cwiseProduct(returns_) / static_cast<double>(returns_.size()));
  const Vec g2 = policy_.logp_hvp(theta_, states_, actions_, step_weights_, x);
  return g1 + g2;
}

Vec hessian_vec(const policy::Policy& policy, const Vec& theta_hat, const rollout::TrajectoryBatch& virtual_batch,
                const envs::RewardModel& reward, const Vec& psi, double gamma, const Vec& x) {
  if (virtual_batch.source != rollout::Source::virtual_model)
    throw InputError("hessian_vec: batch was not collected on the learned model");
  return HessianOperator(policy, theta_hat, virtual_batch, reward, psi, gamma).apply(x);
}

ImplicitJacobian implicit_jacobian(const LinearOperator& hessian, const Mat& mixed, const CGConfig& config) {
  ImplicitJacobian out;
  out.jacobian.resize(mixed.rows(), mixed.cols());
  for (Eigen::Index j = 0; j < mixed.cols(); ++j) {
    CGResult r = cg_solve(hessian, mixed.col(j), config);
    out.jacobian.col(j) = -r.x;
    if (!r.converged) out.warning = true;
    out.columns.push_back(std::move(r));
  }
  return out;
}

ImplicitJacobian dtheta_dpsi(const policy::Policy& policy, const Vec& theta_hat,
                             const rollout::TrajectoryBatch& virtual_batch, const envs::RewardModel& reward,
                             const Vec& psi, double gamma, const CGConfig& config) {
  const Mat b = mixed_grad(policy, theta_hat, virtual_batch, reward, psi, gamma);
  const HessianOperator h(policy, theta_hat, virtual_batch, reward, psi, gamma);
  return implicit_jacobian([&h](const Vec& x) { return h.apply(x); }, b, config);
}

GradEstimate task_gradient(const TaskGradientInputs& in) {
  const auto& star = in.real_batch_star;
  const auto& hat = in.real_batch_hat;
  if (star.empty() || hat.empty() || in.virtual_batch.empty())
    throw InputError("task_gradient: every batch must be non-empty");
  if (star.source != rollout::Source::real || hat.source != rollout::Source::real)
    throw InputError("task_gradient: theta* and theta_hat batches must come from the real environment");
  if (in.virtual_batch.source != rollout::Source::virtual_model)
    throw InputError("task_gradient: the Hessian batch must come from the learned model");
  if (hat.policy_id != fingerprint(in.theta_hat))
    throw InputError("task_gradient: theta_hat batch was produced by a different policy");
  if (in.virtual_batch.policy_id != fingerprint(in.theta_hat))
    throw InputError("task_gradient: virtual batch was produced by a different policy");
  if (!in.allow_stale_star && star.policy_id != fingerprint(in.theta_star))
    throw InputError("task_gradient: theta* batch was produced by a different policy");

  GradEstimate g;
  g.term_opt = rollout::mean_return_grad_psi(star, in.reward, in.psi, in.gamma);
  g.term_hat = rollout::mean_return_grad_psi(hat, in.reward, in.psi, in.gamma);
  const Vec pg = policy_grad_real(in.policy, in.theta_hat, hat, in.reward, in.psi, in.gamma).grad;
  const auto jac = dtheta_dpsi(in.policy, in.theta_hat, in.virtual_batch, in.reward, in.psi, in.gamma, in.cg);
  g.term_chain = jac.jacobian.transpose() * pg;
  g.total = g.term_opt - (g.term_chain + g.term_hat);
  for (const auto& c : jac.columns) g.cg_residuals.push_back(c.relative_residual);
  g.cg_warning = jac.warning;
  g.n_star = star.total_steps();
  g.n_hat = hat.total_steps();
  g.n_virtual = in.virtual_batch.total_steps();
  if (!g.total.allFinite()) throw NumericError("task_gradient: non-finite gradient");
  return g;
}

nlohmann::json to_json(const GradEstimate& g) {
  return {{"term_opt", vec_to_json(g.term_opt)},
          {"term_chain", vec_to_json(g.term_chain)},
          {"term_hat", vec_to_json(g.term_hat)},
          {"total", vec_to_json(g.total)},
          {"cg_residuals", g.cg_residuals},
          {"cg_warning", g.cg_warning},
          {"n_star", g.n_star},
          {"n_hat", g.n_hat},
          {"n_virtual", g.n_virtual}};
}

GradEstimate grad_estimate_from_json(const nlohmann::json& j) {
  GradEstimate g;
  g.term_opt = vec_from_json(j.at("term_opt"));
  g.term_chain = vec_from_json(j.at("term_chain"));
  g.term_hat = vec_from_json(j.at("term_hat"));
  g.total = vec_from_json(j.at("total"));
  g.cg_residuals = j.at("cg_residuals").get<std::vector<double>>();
  g.cg_warning = j.at("cg_warning").get<bool>();
  g.n_star = j.at("n_star").get<std::size_t>();
  g.n_hat = j.at("n_hat").get<std::size_t>();
  g.n_virtual = j.at("n_virtual").get<std::size_t>();
  return g;
}

envs::TaskParams task_ascent_step(const envs::TaskBox& box, const Vec& psi, const Vec& grad, double alpha) {
  require(alpha > 0.0 && std::isfinite(alpha), "task_ascent_step: step size must be positive");
  require(psi.size() == box.dim() && grad.size() == box.dim(), "task_ascent_step: dimension mismatch");
  if (!grad.allFinite()) throw NumericError("task_ascent_step: non-finite gradient");
  return envs::project_task(box, psi + alpha * grad);
}

}  // namespace admrl::task_grad
