#include "admrl/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "admrl/dyn_model.hpp"
#include "admrl/envs.hpp"
#include "admrl/oracle.hpp"
#include "admrl/policy.hpp"
#include "admrl/rollout.hpp"
#include "admrl/task_grad.hpp"

namespace admrl::gradcheck {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double rel_error(const Mat& est, const Mat& ref) {
  const double denom = ref.norm();
  return denom > 0.0 ? (est - ref).norm() / denom : (est - ref).norm();
}

Vec random_logits(const oracle::TabularMDP& mdp, Rng& rng, double scale) {
  Vec theta(mdp.param_dim());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = scale * standard_normal(rng);
  return theta;
}

Vec oracle_psi() {
  Vec psi(2);
  psi << 1.0, -0.5;
  return psi;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

CheckResult start(std::string id, std::string name) {
  CheckResult r;
  r.id = std::move(id);
  r.name = std::move(name);
  return r;
}

Mat symmetric_with_spectrum(const Vec& eig, Rng& rng) {
  const auto n = eig.size();
  const Mat q = orthogonal_matrix(static_cast<int>(n), static_cast<int>(n), 1.0, rng);
  return q * eig.asDiagonal() * q.transpose();
}

}  // namespace

CheckResult check_policy_gradient(const SuiteConfig& cfg) {
  const auto t0 = Clock::now();
  CheckResult r = start("1a", "policy gradient vs exact (tabular)");
  r.threshold = 0.05;
  const auto mdp = oracle::TabularMDP::random(cfg.seed);
  Rng rng(mix_seed(cfg.seed, 1));
  const Vec theta = random_logits(mdp, rng, cfg.logit_scale);
  const Vec psi = oracle_psi();
  const oracle::SoftmaxPolicy pol(mdp.n_states, mdp.n_actions);
  const oracle::TabularEnv env(mdp);
  const oracle::TabularReward reward(env.mdp());

  const auto batch = rollout::collect(env, pol, theta, static_cast<int>(cfg.pg_trajectories), cfg.pg_horizon, rng);
  const auto est = task_grad::policy_grad_real(pol, theta, batch, reward, psi, mdp.gamma);
  const Vec exact = oracle::exact_grad(mdp, theta, psi, oracle::Wrt::theta);

  double max_z = 0.0;
  for (Eigen::Index i = 0; i < exact.size(); ++i) {
    const double diff = std::abs(est.grad[i] - exact[i]);
    if (diff == 0.0) continue;
    max_z = std::max(max_z, est.stderr_[i] > 0.0 ? diff / est.stderr_[i] : INFINITY);
  }
  r.value = rel_error(est.grad, exact);
  r.passed = r.value < r.threshold && max_z <= 3.0;
  r.detail = fmt("rel_err=%.4f max|z|=%.2f |g|=%.4f", r.value, max_z, exact.norm());
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_reinforce_hessian(const SuiteConfig& cfg) {
  const auto t0 = Clock::now();
  CheckResult r = start("1b.i", "REINFORCE Hessian vs finite-difference Hessian (tabular)");
  r.threshold = 0.10;
  const auto mdp = oracle::TabularMDP::random(cfg.seed);
  Rng rng(mix_seed(cfg.seed, 2));
  const Vec theta = random_logits(mdp, rng, cfg.logit_scale);
  const Vec psi = oracle_psi();
  const oracle::SoftmaxPolicy pol(mdp.n_states, mdp.n_actions);
  const oracle::TabularEnv env(mdp);
  const oracle::TabularReward reward(env.mdp());
  const int p = mdp.param_dim();

  Mat est = Mat::Zero(p, p);
  long done = 0;
  while (done < cfg.hessian_trajectories) {
    const long n = std::min(cfg.hessian_chunk, cfg.hessian_trajectories - done);
    auto batch = rollout::collect(env, pol, theta, static_cast<int>(n), cfg.hessian_horizon, rng);
    batch.source = rollout::Source::virtual_model;
    const task_grad::HessianOperator h(pol, theta, batch, reward, psi, mdp.gamma);
    for (int j = 0; j < p; ++j) est.col(j) += static_cast<double>(n) * h.apply(Vec::Unit(p, j));
    done += n;
  }
  est /= static_cast<double>(done);
  const Mat ref = oracle::fd_hessian([&](const Vec& t) { return oracle::exact_return(mdp, t, psi); }, theta, 1e-4);
  r.value = rel_error(0.5 * (est + est.transpose()), ref);
  r.passed = r.value <= r.threshold;
  r.detail = fmt("frobenius_rel_err=%.4f |H|=%.4f trajectories=%.0f", r.value, ref.norm(),
                 static_cast<double>(done));
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_hvp_assembly(const SuiteConfig& cfg) {
  const auto t0 = Clock::now();
  CheckResult r = start("1b.ii", "HVP products vs explicitly assembled Hessian (frozen batch)");
  r.threshold = 1e-8;
  const auto mdp = oracle::TabularMDP::random(cfg.seed);
  Rng rng(mix_seed(cfg.seed, 3));
  const Vec theta = random_logits(mdp, rng, cfg.logit_scale);
  const Vec psi = oracle_psi();
  const oracle::SoftmaxPolicy pol(mdp.n_states, mdp.n_actions);
  const oracle::TabularEnv env(mdp);
  const oracle::TabularReward reward(env.mdp());
  auto batch = rollout::collect(env, pol, theta, 2000, 50, rng);
  batch.source = rollout::Source::virtual_model;
  const int p = mdp.param_dim();
  const task_grad::HessianOperator h(pol, theta, batch, reward, psi, mdp.gamma);
  Mat via_hvp(p, p);
  for (int j = 0; j < p; ++j) via_hvp.col(j) = h.apply(Vec::Unit(p, j));
  const Mat explicit_h = oracle::assemble_reinforce_hessian(mdp, theta, batch, psi);
  // Random directions as well as the unit basis.
  double worst = rel_error(via_hvp, explicit_h);
  for (int t = 0; t < 5; ++t) {
    Vec x(p);
    for (int i = 0; i < p; ++i) x[i] = standard_normal(rng);
    worst = std::max(worst, rel_error(h.apply(x), explicit_h * x));
  }
  r.value = worst;
  r.passed = r.value <= r.threshold;
  r.detail = fmt("rel_err=%.3e", r.value);
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_mixed_derivative(const SuiteConfig& cfg) {
  const auto t0 = Clock::now();
  CheckResult r = start("1c", "mixed derivative vs frozen-batch psi finite differences");
  r.threshold = 1e-5;
  Rng rng(mix_seed(cfg.seed, 4));
  const auto env = envs::make_environment("point_mass_2d");
  const policy::GaussianMlpPolicy pol(policy::GaussianArch{});
  const Vec theta = pol.initial_params(rng);
  const auto model = dyn_model::DynModel::random(dyn_model::ModelArch{}, rng);
  const dyn_model::ModelDynamics virt(model, *env);
  const auto reward = envs::point_mass_velocity_reward();
  Vec psi(2);
  psi << 0.7, -1.2;
  const double gamma = 0.99;
  const auto batch = rollout::collect(virt, pol, theta, 20, 50, rng);

  const Mat est = task_grad::mixed_grad(pol, theta, batch, reward, psi, gamma);

  const auto adv0 = rollout::advantages(batch, reward, psi, gamma);
  const auto rtg0 = rollout::reward_to_go(batch, reward, psi, gamma);
  const Vec baseline = rtg0.values - adv0.values;
  const auto frozen_pg = [&](const Vec& q) {
    const auto rtg = rollout::reward_to_go(batch, reward, q, gamma);
    Vec g = Vec::Zero(pol.param_dim());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& tr = batch.trajectories[i];
      Vec w(tr.length());
      double disc = 1.0;
      for (int t = 0; t < tr.length(); ++t, disc *= gamma) {
        const auto idx = rtg.index(i, t);
        w[t] = disc * (rtg.values[idx] - baseline[idx]);
      }
      g += pol.weighted_score(theta, tr.states.leftCols(tr.length()), tr.actions, w);
    }
    return Vec(g / static_cast<double>(batch.size()));
  };

  const double delta = 1e-5;
  // Kinks sit where a velocity coordinate equals psi; make sure none is crossed.
  double closest = INFINITY;
  for (const auto& tr : batch.trajectories)
    for (int t = 1; t <= tr.length(); ++t)
      for (int j = 0; j < 2; ++j) closest = std::min(closest, std::abs(tr.states(2 + j, t) - psi[j]));

  Mat fd(pol.param_dim(), 2);
  for (int j = 0; j < 2; ++j) {
    Vec qp = psi, qm = psi;
    qp[j] += delta;
    qm[j] -= delta;
    fd.col(j) = (frozen_pg(qp) - frozen_pg(qm)) / (2.0 * delta);
  }
  r.value = rel_error(est, fd);
  r.passed = r.value < r.threshold && closest > delta;
  r.detail = fmt("rel_err=%.3e closest_kink=%.2e |B|=%.4f", r.value, closest, fd.norm());
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_implicit_jacobian_tabular(const SuiteConfig& cfg) {
  const auto t0 = Clock::now();
  CheckResult r = start("1d.i", "implicit Jacobian vs re-solve differences (entropy-regularized tabular)");
  r.threshold = 0.05;
  const auto mdp = oracle::TabularMDP::random(cfg.seed);
  Rng rng(mix_seed(cfg.seed, 5));
  const Vec init = random_logits(mdp, rng, cfg.logit_scale);
  const Vec psi = oracle_psi();
  const double beta = cfg.beta;
  const Vec theta_hat = oracle::resolve_inner(mdp, psi, beta, init);

  const Mat h = oracle::exact_hessian(mdp, theta_hat, psi, beta);
  const Mat b = oracle::exact_mixed(mdp, theta_hat, psi, beta);
  task_grad::CGConfig cg;
  cg.damping = 0.0;
  cg.residual_tol = 1e-12;
  const auto jac = task_grad::implicit_jacobian([&h](const Vec& x) -> Vec { return h * x; }, b, cg);
  const Mat implicit_probs = oracle::softmax_jacobian(mdp, theta_hat) * jac.jacobian;

  const double delta = 1e-3;
  Mat fd(mdp.param_dim(), mdp.k);
  const auto flat_probs = [&](const Vec& t) {
    const Mat pi = oracle::action_probabilities(mdp, t);
    Vec out(mdp.param_dim());
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) out[s * mdp.n_actions + a] = pi(s, a);
    return out;
  };
  for (int j = 0; j < mdp.k; ++j) {
    Vec qp = psi, qm = psi;
    qp[j] += delta;
    qm[j] -= delta;
    const Vec tp = oracle::resolve_inner(mdp, qp, beta, theta_hat);
    const Vec tm = oracle::resolve_inner(mdp, qm, beta, theta_hat);
    fd.col(j) = (flat_probs(tp) - flat_probs(tm)) / (2.0 * delta);
  }
  r.value = rel_error(implicit_probs, fd);
  r.passed = r.value < r.threshold;
  double worst_res = 0.0;
  for (const auto& c : jac.columns) worst_res = std::max(worst_res, c.relative_residual);
  r.detail = fmt("rel_err=%.3e cg_residual=%.1e |dpi/dpsi|=%.4f", r.value, worst_res, fd.norm());
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_implicit_jacobian_quadratic(const SuiteConfig& cfg) {
  const auto t0 = Clock::now();
  CheckResult r = start("1d.ii", "implicit Jacobian on a concave quadratic");
  r.threshold = 1e-8;
  Rng rng(mix_seed(cfg.seed, 6));
  const int p = 12;
  const int k = 3;
  Vec eig(p);
  for (int i = 0; i < p; ++i) eig[i] = 1.0 + 9.0 * uniform01(rng);
  const Mat h = symmetric_with_spectrum(eig, rng);
  Mat m(p, k);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  task_grad::CGConfig cg;
  cg.damping = 0.0;
  cg.residual_tol = 1e-14;
  // eta = -1/2 theta^T H theta + theta^T M psi: Hessian -H, mixed derivative M.
  const auto jac = task_grad::implicit_jacobian([&h](const Vec& x) -> Vec { return -(h * x); }, m, cg);
  const Mat expected = h.ldlt().solve(m);
  r.value = rel_error(jac.jacobian, expected);
  r.passed = r.value <= r.threshold;
  r.detail = fmt("rel_err=%.3e", r.value);
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_cg_spd(const SuiteConfig& cfg) {
  const auto t0 = Clock::now();
  CheckResult r = start("1e.i", "CG on a 50x50 SPD system (<= 50 iterations)");
  r.threshold = 1e-10;
  Rng rng(mix_seed(cfg.seed, 7));
  const int n = 50;
  // Wishart matrix X X^T / m with m = 2n.
  Mat x(n, 2 * n);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
  const Mat a = x * x.transpose() / static_cast<double>(2 * n);
  const Eigen::SelfAdjointEigenSolver<Mat> es(a);
  const Vec eig = es.eigenvalues();
  Vec b(n);
  for (int i = 0; i < n; ++i) b[i] = standard_normal(rng);
  task_grad::CGConfig cg;
  cg.max_iters = 50;
  cg.damping = 0.0;
  cg.residual_tol = 1e-10;
  cg.normal_equations = false;
  const auto sol = task_grad::cg_solve([&a](const Vec& x) -> Vec { return a * x; }, b, cg);
  r.value = (a * sol.x - b).norm() / b.norm();
  r.passed = r.value <= r.threshold && sol.iterations <= 50;
  r.detail = fmt("rel_residual=%.3e iterations=%.0f cond=%.0f", r.value, sol.iterations,
                 eig.maxCoeff() / eig.minCoeff());
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_cg_indefinite(const SuiteConfig& cfg) {
  const auto t0 = Clock::now();
  CheckResult r = start("1e.ii", "CG normal equations on a 50x50 symmetric indefinite system (<= 200 iterations)");
  r.threshold = 1e-6;
  Rng rng(mix_seed(cfg.seed, 8));
  const int n = 50;
  Mat g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
  const Mat a = 0.5 * (g + g.transpose());
  Vec b(n);
  for (int i = 0; i < n; ++i) b[i] = standard_normal(rng);
  task_grad::CGConfig cg;
  cg.max_iters = 200;
  cg.damping = 0.0;
  cg.residual_tol = 1e-6;
  const auto sol = task_grad::cg_solve([&a](const Vec& x) -> Vec { return a * x; }, b, cg);
  const Vec atb = a.transpose() * b;
  r.value = (a.transpose() * (a * sol.x) - atb).norm() / atb.norm();
  const Eigen::SelfAdjointEigenSolver<Mat> es(a);
  const auto ev = es.eigenvalues();
  r.passed = r.value < r.threshold && sol.iterations <= 200 && ev.minCoeff() < 0.0 && ev.maxCoeff() > 0.0;
  r.detail = fmt("rel_residual=%.3e iterations=%.0f cond=%.0f", r.value, sol.iterations,
                 ev.cwiseAbs().maxCoeff() / ev.cwiseAbs().minCoeff());
  r.seconds = seconds_since(t0);
  return r;
}

std::vector<CheckResult> run_suite(const SuiteConfig& cfg) {
  return {check_policy_gradient(cfg),          check_reinforce_hessian(cfg), check_hvp_assembly(cfg),
          check_mixed_derivative(cfg),         check_implicit_jacobian_tabular(cfg),
          check_implicit_jacobian_quadratic(cfg), check_cg_spd(cfg),       check_cg_indefinite(cfg)};
}

std::string format_table(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  char line[512];
  std::snprintf(line, sizeof(line), "%-6s %-4s %-12s %-10s %8s  %s\n", "id", "ok", "value", "threshold", "secs", "check");
  os << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof(line), "%-6s %-4s %-12.4e %-10.1e %8.2f  %s [%s]\n", r.id.c_str(),
                  r.passed ? "PASS" : "FAIL", r.value, r.threshold, r.seconds, r.name.c_str(), r.detail.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace admrl::gradcheck
