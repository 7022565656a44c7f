#include "admrl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "admrl/json_util.hpp"

namespace admrl::oracle {

// ---------------------------------------------------------------------------
// TabularMDP

TabularMDP TabularMDP::random(std::uint64_t seed, int n_states, int n_actions, int k, double gamma) {
  require(n_states >= 1 && n_actions >= 1 && k >= 1, "TabularMDP::random: sizes must be positive");
  Rng rng(seed);
  TabularMDP mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.k = k;
  mdp.gamma = gamma;
  for (int a = 0; a < n_actions; ++a) {
    Mat p(n_states, n_states);
    for (int s = 0; s < n_states; ++s) {
      for (int t = 0; t < n_states; ++t) p(s, t) = 0.05 + uniform01(rng);
      p.row(s) /= p.row(s).sum();
    }
    mdp.P.push_back(std::move(p));
  }
  for (int j = 0; j < k; ++j) {
    Mat f(n_states * n_actions, n_states);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = 2.0 * uniform01(rng) - 1.0;
    mdp.features.push_back(std::move(f));
  }
  mdp.p0.resize(n_states);
  for (int s = 0; s < n_states; ++s) mdp.p0[s] = 0.05 + uniform01(rng);
  mdp.p0 /= mdp.p0.sum();
  mdp.validate();
  return mdp;
}

void TabularMDP::validate() const {
  require(n_states >= 1 && n_actions >= 1 && k >= 1, "TabularMDP: sizes must be positive");
  require(gamma >= 0.0 && gamma < 1.0, "TabularMDP: gamma must lie in [0, 1)");
  require(static_cast<int>(P.size()) == n_actions, "TabularMDP: one transition matrix per action required");
  for (const auto& p : P) {
    require(p.rows() == n_states && p.cols() == n_states, "TabularMDP: transition matrix has the wrong shape");
    require(p.allFinite() && (p.array() >= 0.0).all(), "TabularMDP: transition probabilities must be >= 0");
    for (int s = 0; s < n_states; ++s)
      require(std::abs(p.row(s).sum() - 1.0) <= 1e-12, "TabularMDP: transition rows must sum to 1");
  }
  require(static_cast<int>(features.size()) == k, "TabularMDP: one feature table per task dimension required");
  for (const auto& f : features)
    require(f.rows() == n_states * n_actions && f.cols() == n_states && f.allFinite(),
            "TabularMDP: feature table has the wrong shape");
  require(p0.size() == n_states && (p0.array() >= 0.0).all() && std::abs(p0.sum() - 1.0) <= 1e-12,
          "TabularMDP: p0 must be a distribution");
}

Vec TabularMDP::feature(int s, int a, int s_next) const {
  Vec out(k);
  for (int j = 0; j < k; ++j) out[j] = features[j](s * n_actions + a, s_next);
  return out;
}

nlohmann::json TabularMDP::to_json() const {
  nlohmann::json j;
  j["n_states"] = n_states;
  j["n_actions"] = n_actions;
  j["k"] = k;
  j["gamma"] = gamma;
  j["p0"] = vec_to_json(p0);
  j["P"] = nlohmann::json::array();
  for (const auto& p : P) j["P"].push_back(mat_to_json(p));
  j["features"] = nlohmann::json::array();
  for (const auto& f : features) j["features"].push_back(mat_to_json(f));
  return j;
}

TabularMDP TabularMDP::from_json(const nlohmann::json& j) {
  TabularMDP mdp;
  try {
    mdp.n_states = j.at("n_states").get<int>();
    mdp.n_actions = j.at("n_actions").get<int>();
    mdp.k = j.at("k").get<int>();
    mdp.gamma = j.at("gamma").get<double>();
    mdp.p0 = vec_from_json(j.at("p0"));
    for (const auto& p : j.at("P")) mdp.P.push_back(mat_from_json(p));
    for (const auto& f : j.at("features")) mdp.features.push_back(mat_from_json(f));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("TabularMDP::from_json: ") + e.what());
  }
  mdp.validate();
  return mdp;
}

// ---------------------------------------------------------------------------
// SoftmaxPolicy

SoftmaxPolicy::SoftmaxPolicy(int n_states, int n_actions) : n_states_(n_states), n_actions_(n_actions) {
  require(n_states >= 1 && n_actions >= 1, "SoftmaxPolicy: sizes must be positive");
}

int SoftmaxPolicy::index(double s) const {
  const long i = std::lround(s);
  require(i >= 0 && i < n_states_ && std::abs(s - static_cast<double>(i)) < 1e-9,
          "SoftmaxPolicy: state is not a valid index");
  return static_cast<int>(i);
}

int SoftmaxPolicy::action(double a) const {
  const long i = std::lround(a);
  require(i >= 0 && i < n_actions_ && std::abs(a - static_cast<double>(i)) < 1e-9,
          "SoftmaxPolicy: action is not a valid index");
  return static_cast<int>(i);
}

Mat SoftmaxPolicy::probabilities(const Vec& theta) const {
  check_theta(theta);
  Mat pi(n_states_, n_actions_);
  for (int s = 0; s < n_states_; ++s) {
    const auto logits = theta.segment(s * n_actions_, n_actions_);
    const double mx = logits.maxCoeff();
    const Vec e = (logits.array() - mx).exp();
    pi.row(s) = (e / e.sum()).transpose();
  }
  return pi;
}

Vec SoftmaxPolicy::initial_params(Rng& rng) const {
  Vec theta(param_dim());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = 0.1 * standard_normal(rng);
  return theta;
}

Mat SoftmaxPolicy::sample(const Vec& theta, const Mat& states, std::span<Rng> rngs) const {
  require(states.rows() == 1, "SoftmaxPolicy::sample: states must be 1 x n");
  require(rngs.size() == static_cast<std::size_t>(states.cols()), "SoftmaxPolicy::sample: one rng per sample");
  const Mat pi = probabilities(theta);
  Mat out(1, states.cols());
  for (Eigen::Index i = 0; i < states.cols(); ++i) {
    const int s = index(states(0, i));
    const double u = uniform01(rngs[static_cast<std::size_t>(i)]);
    double c = 0.0;
    int a = n_actions_ - 1;
    for (int b = 0; b < n_actions_; ++b) {
      c += pi(s, b);
      if (u < c) {
        a = b;
        break;
      }
    }
    out(0, i) = a;
  }
  return out;
}

Vec SoftmaxPolicy::log_prob(const Vec& theta, const Mat& states, const Mat& actions) const {
  const Mat logpi = probabilities(theta).array().log();
  Vec out(states.cols());
  for (Eigen::Index i = 0; i < states.cols(); ++i) out[i] = logpi(index(states(0, i)), action(actions(0, i)));
  return out;
}

Mat SoftmaxPolicy::scores(const Vec& theta, const Mat& states, const Mat& actions) const {
  const Mat pi = probabilities(theta);
  Mat out = Mat::Zero(param_dim(), states.cols());
  for (Eigen::Index i = 0; i < states.cols(); ++i) {
    const int s = index(states(0, i));
    out.col(i).segment(s * n_actions_, n_actions_) = -pi.row(s).transpose();
    out(s * n_actions_ + action(actions(0, i)), i) += 1.0;
  }
  return out;
}

Vec SoftmaxPolicy::weighted_score(const Vec& theta, const Mat& states, const Mat& actions, const Vec& w) const {
  require(w.size() == states.cols(), "SoftmaxPolicy::weighted_score: weight count mismatch");
  const Mat pi = probabilities(theta);
  Vec out = Vec::Zero(param_dim());
  for (Eigen::Index i = 0; i < states.cols(); ++i) {
    const int s = index(states(0, i));
    out.segment(s * n_actions_, n_actions_) -= w[i] * pi.row(s).transpose();
    out[s * n_actions_ + action(actions(0, i))] += w[i];
  }
  return out;
}

Vec SoftmaxPolicy::logp_hvp(const Vec& theta, const Mat& states, const Mat& actions, const Vec& w,
                            const Vec& x) const {
  require(x.size() == param_dim(), "SoftmaxPolicy::logp_hvp: vector dimension mismatch");
  require(w.size() == states.cols() && actions.cols() == states.cols(), "SoftmaxPolicy::logp_hvp: size mismatch");
  const Mat pi = probabilities(theta);
  Vec wsum = Vec::Zero(n_states_);
  for (Eigen::Index i = 0; i < states.cols(); ++i) {
    action(actions(0, i));
    wsum[index(states(0, i))] += w[i];
  }
  Vec out = Vec::Zero(param_dim());
  for (int s = 0; s < n_states_; ++s) {
    if (wsum[s] == 0.0) continue;
    const Vec p = pi.row(s).transpose();
    const auto xs = x.segment(s * n_actions_, n_actions_);
    out.segment(s * n_actions_, n_actions_) = -wsum[s] * (p.cwiseProduct(xs) - p * p.dot(xs));
  }
  return out;
}

Vec SoftmaxPolicy::fisher_vp(const Vec& theta, const Mat& states, const Vec& x) const {
  require(x.size() == param_dim(), "SoftmaxPolicy::fisher_vp: vector dimension mismatch");
  require(states.cols() > 0, "SoftmaxPolicy::fisher_vp: empty batch");
  const Mat pi = probabilities(theta);
  Vec count = Vec::Zero(n_states_);
  for (Eigen::Index i = 0; i < states.cols(); ++i) count[index(states(0, i))] += 1.0;
  Vec out = Vec::Zero(param_dim());
  for (int s = 0; s < n_states_; ++s) {
    if (count[s] == 0.0) continue;
    const Vec p = pi.row(s).transpose();
    const auto xs = x.segment(s * n_actions_, n_actions_);
    out.segment(s * n_actions_, n_actions_) = count[s] * (p.cwiseProduct(xs) - p * p.dot(xs));
  }
  return out / static_cast<double>(states.cols());
}

double SoftmaxPolicy::mean_kl(const Vec& theta_old, const Vec& theta_new, const Mat& states) const {
  require(states.cols() > 0, "SoftmaxPolicy::mean_kl: empty batch");
  const Mat po = probabilities(theta_old);
  const Mat pn = probabilities(theta_new);
  Vec kl(n_states_);
  for (int s = 0; s < n_states_; ++s) {
    double v = 0.0;
    for (int a = 0; a < n_actions_; ++a)
      if (po(s, a) > 0.0) v += po(s, a) * (std::log(po(s, a)) - std::log(pn(s, a)));
    kl[s] = v;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < states.cols(); ++i) total += kl[index(states(0, i))];
  return total / static_cast<double>(states.cols());
}

// ---------------------------------------------------------------------------
// TabularEnv / TabularReward

TabularEnv::TabularEnv(TabularMDP mdp) : mdp_(std::move(mdp)) {
  mdp_.validate();
  for (const auto& p : mdp_.P) {
    Mat c = p;
    for (int s = 0; s < mdp_.n_states; ++s)
      for (int t = 1; t < mdp_.n_states; ++t) c(s, t) += c(s, t - 1);
    cdf_.push_back(std::move(c));
  }
}

namespace {
int draw(const Eigen::Ref<const Eigen::RowVectorXd>& cdf, double u) {
  const Eigen::Index n = cdf.size();
  for (Eigen::Index i = 0; i < n; ++i)
    if (u < cdf[i]) return static_cast<int>(i);
  return static_cast<int>(n - 1);
}

int as_index(double v, int n, const char* what) {
  const long i = std::lround(v);
  if (i < 0 || i >= n || !std::isfinite(v)) throw InputError(std::string("tabular: invalid ") + what);
  return static_cast<int>(i);
}
}  // namespace

Vec TabularEnv::initial_state(Rng& rng) const {
  double c = 0.0;
  const double u = uniform01(rng);
  for (int s = 0; s < mdp_.n_states; ++s) {
    c += mdp_.p0[s];
    if (u < c) return Vec::Constant(1, s);
  }
  return Vec::Constant(1, mdp_.n_states - 1);
}

Mat TabularEnv::step_batch(const Mat& states, const Mat& actions, std::span<Rng> rngs) const {
  require(states.rows() == 1 && actions.rows() == 1 && states.cols() == actions.cols(),
          "TabularEnv::step_batch: shape mismatch");
  require(rngs.size() == static_cast<std::size_t>(states.cols()), "TabularEnv::step_batch: one rng per sample");
  Mat out(1, states.cols());
  for (Eigen::Index i = 0; i < states.cols(); ++i) {
    const int s = as_index(states(0, i), mdp_.n_states, "state");
    const int a = as_index(actions(0, i), mdp_.n_actions, "action");
    out(0, i) = draw(cdf_[static_cast<std::size_t>(a)].row(s), uniform01(rngs[static_cast<std::size_t>(i)]));
  }
  count(static_cast<std::uint64_t>(states.cols()));
  return out;
}

std::unique_ptr<envs::Environment> TabularEnv::clone() const {
  return std::make_unique<TabularEnv>(mdp_);
}

double TabularReward::value(const Vec& psi, const Eigen::Ref<const Vec>& s, const Eigen::Ref<const Vec>& a,
                            const Eigen::Ref<const Vec>& s_next) const {
  require(psi.size() == mdp_.k, "TabularReward: psi dimension mismatch");
  const int row = as_index(s[0], mdp_.n_states, "state") * mdp_.n_actions + as_index(a[0], mdp_.n_actions, "action");
  const int col = as_index(s_next[0], mdp_.n_states, "state");
  double r = 0.0;
  for (int j = 0; j < mdp_.k; ++j) r += psi[j] * mdp_.features[j](row, col);
  return r;
}

void TabularReward::accumulate_grad_psi(const Vec& psi, const Eigen::Ref<const Vec>& s,
                                        const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& s_next,
                                        double scale, Eigen::Ref<Vec> out) const {
  require(psi.size() == mdp_.k && out.size() == mdp_.k, "TabularReward: psi dimension mismatch");
  const int row = as_index(s[0], mdp_.n_states, "state") * mdp_.n_actions + as_index(a[0], mdp_.n_actions, "action");
  const int col = as_index(s_next[0], mdp_.n_states, "state");
  for (int j = 0; j < mdp_.k; ++j) out[j] += scale * mdp_.features[j](row, col);
}

// ---------------------------------------------------------------------------
// Exact quantities

Mat action_probabilities(const TabularMDP& mdp, const Vec& theta) {
  require(theta.size() == mdp.param_dim(), "oracle: theta dimension mismatch");
  require(theta.allFinite(), "oracle: theta is not finite");
  return SoftmaxPolicy(mdp.n_states, mdp.n_actions).probabilities(theta);
}

Mat expected_reward(const TabularMDP& mdp, const Vec& psi) {
  require(psi.size() == mdp.k, "oracle: psi dimension mismatch");
  Mat r = Mat::Zero(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int j = 0; j < mdp.k; ++j)
        r(s, a) += psi[j] * mdp.P[a].row(s).dot(mdp.features[j].row(s * mdp.n_actions + a));
  return r;
}

namespace {

Mat policy_transition(const TabularMDP& mdp, const Mat& pi) {
  Mat p = Mat::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) p.row(s) += pi(s, a) * mdp.P[a].row(s);
  return p;
}

Vec policy_reward(const TabularMDP& mdp, const Mat& pi, const Vec& psi, double beta) {
  const Mat r = expected_reward(mdp, psi);
  Vec out(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    double v = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) {
      v += pi(s, a) * r(s, a);
      if (beta != 0.0 && pi(s, a) > 0.0) v -= beta * pi(s, a) * std::log(pi(s, a));
    }
    out[s] = v;
  }
  return out;
}

Vec solve_checked(const Mat& a, const Vec& b) {
  Eigen::PartialPivLU<Mat> lu(a);
  if (!(lu.rcond() > 1e-12)) throw NumericError("oracle: policy evaluation system is singular or ill-conditioned");
  Vec x = lu.solve(b);
  if (!x.allFinite()) throw NumericError("oracle: policy evaluation produced non-finite values");
  return x;
}

Vec state_distribution(const TabularMDP& mdp, const Mat& pi) {
  const Mat pp = policy_transition(mdp, pi);
  const Mat sys = Mat::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * pp.transpose();
  return solve_checked(sys, mdp.p0);
}

}  // namespace

Vec state_values(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta) {
  mdp.validate();
  const Mat pi = action_probabilities(mdp, theta);
  const Mat sys = Mat::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * policy_transition(mdp, pi);
  return solve_checked(sys, policy_reward(mdp, pi, psi, beta));
}

double exact_return(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta) {
  return mdp.p0.dot(state_values(mdp, theta, psi, beta));
}

Mat occupancy(const TabularMDP& mdp, const Vec& theta) {
  mdp.validate();
  const Mat pi = action_probabilities(mdp, theta);
  const Vec d = state_distribution(mdp, pi);
  return d.asDiagonal() * pi;
}

double occupancy_return(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta) {
  const Mat occ = occupancy(mdp, theta);
  const Mat pi = action_probabilities(mdp, theta);
  const Mat r = expected_reward(mdp, psi);
  double total = (occ.array() * r.array()).sum();
  if (beta != 0.0) total -= beta * (occ.array() * pi.array().log()).sum();
  return total;
}

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  require(h > 0.0, "fd_gradient: step must be positive");
  Vec g(x.size());
  Vec y = x;
  const auto central = [&](Eigen::Index i, double step) {
    y[i] = x[i] + step;
    const double fp = f(y);
    y[i] = x[i] - step;
    const double fm = f(y);
    y[i] = x[i];
    return (fp - fm) / (2.0 * step);
  };
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d1 = central(i, h);
    const double d2 = central(i, 0.5 * h);
    g[i] = (4.0 * d2 - d1) / 3.0;
  }
  return g;
}

Vec exact_grad(const TabularMDP& mdp, const Vec& theta, const Vec& psi, Wrt wrt, double beta) {
  if (wrt == Wrt::theta)
    return fd_gradient([&](const Vec& t) { return exact_return(mdp, t, psi, beta); }, theta);
  return fd_gradient([&](const Vec& q) { return exact_return(mdp, theta, q, beta); }, psi);
}

Vec analytic_grad_psi(const TabularMDP& mdp, const Vec& theta) {
  const Mat occ = occupancy(mdp, theta);
  Vec g = Vec::Zero(mdp.k);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int j = 0; j < mdp.k; ++j)
        g[j] += occ(s, a) * mdp.P[a].row(s).dot(mdp.features[j].row(s * mdp.n_actions + a));
  return g;
}

Vec analytic_grad_theta(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta) {
  mdp.validate();
  const Mat pi = action_probabilities(mdp, theta);
  const Mat r = expected_reward(mdp, psi);
  const Mat sys = Mat::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * policy_transition(mdp, pi);
  const Vec v = solve_checked(sys, policy_reward(mdp, pi, psi, beta));
  const Vec d = state_distribution(mdp, pi);
  Vec g(mdp.param_dim());
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double q = r(s, a) + mdp.gamma * mdp.P[a].row(s).dot(v);
      const double ent = beta != 0.0 && pi(s, a) > 0.0 ? beta * std::log(pi(s, a)) : 0.0;
      g[s * mdp.n_actions + a] = d[s] * pi(s, a) * (q - ent - v[s]);
    }
  return g;
}

Mat exact_hessian(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta, double h) {
  const Eigen::Index p = theta.size();
  Mat hess(p, p);
  Vec t = theta;
  for (Eigen::Index i = 0; i < p; ++i) {
    t[i] = theta[i] + h;
    const Vec gp = analytic_grad_theta(mdp, t, psi, beta);
    t[i] = theta[i] - h;
    const Vec gm = analytic_grad_theta(mdp, t, psi, beta);
    t[i] = theta[i];
    hess.col(i) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (hess + hess.transpose());
}

Mat exact_mixed(const TabularMDP& mdp, const Vec& theta, const Vec& psi, double beta) {
  // The gradient is affine in psi, so unit differences are exact.
  Mat b(theta.size(), mdp.k);
  Vec q = psi;
  for (int j = 0; j < mdp.k; ++j) {
    q[j] = psi[j] + 0.5;
    const Vec gp = analytic_grad_theta(mdp, theta, q, beta);
    q[j] = psi[j] - 0.5;
    const Vec gm = analytic_grad_theta(mdp, theta, q, beta);
    q[j] = psi[j];
    b.col(j) = gp - gm;
  }
  return b;
}

Mat fd_hessian(const std::function<double(const Vec&)>& f, const Vec& theta, double delta) {
  require(delta > 0.0, "fd_hessian: delta must be positive");
  const Eigen::Index p = theta.size();
  Mat h(p, p);
  const double f0 = f(theta);
  Vec x = theta;
  for (Eigen::Index i = 0; i < p; ++i) {
    x[i] = theta[i] + delta;
    const double fp = f(x);
    x[i] = theta[i] - delta;
    const double fm = f(x);
    x[i] = theta[i];
    h(i, i) = (fp - 2.0 * f0 + fm) / (delta * delta);
    for (Eigen::Index j = i + 1; j < p; ++j) {
      double acc = 0.0;
      for (const double si : {1.0, -1.0})
        for (const double sj : {1.0, -1.0}) {
          x[i] = theta[i] + si * delta;
          x[j] = theta[j] + sj * delta;
          acc += si * sj * f(x);
        }
      x[i] = theta[i];
      x[j] = theta[j];
      h(i, j) = h(j, i) = acc / (4.0 * delta * delta);
    }
  }
  return 0.5 * (h + h.transpose());
}

Mat softmax_jacobian(const TabularMDP& mdp, const Vec& theta) {
  const Mat pi = action_probabilities(mdp, theta);
  const int m = mdp.n_actions;
  Mat j = Mat::Zero(mdp.param_dim(), mdp.param_dim());
  for (int s = 0; s < mdp.n_states; ++s)
    for (int b = 0; b < m; ++b)
      for (int a = 0; a < m; ++a) j(s * m + b, s * m + a) = pi(s, b) * ((a == b ? 1.0 : 0.0) - pi(s, a));
  return j;
}

namespace {

/// Orthonormal basis of the logit space with the per-state constant shifts removed.
Mat gauge_free_basis(int n_states, int n_actions) {
  const int m = n_actions;
  Mat block = Eigen::HouseholderQR<Mat>(Mat::Ones(m, 1)).householderQ() * Mat::Identity(m, m);
  Mat q = Mat::Zero(n_states * m, n_states * (m - 1));
  for (int s = 0; s < n_states; ++s) q.block(s * m, s * (m - 1), m, m - 1) = block.rightCols(m - 1);
  return q;
}

}  // namespace

Vec resolve_inner(const TabularMDP& mdp, const Vec& psi, double beta, const Vec& init, const ResolveBudget& budget) {
  require(beta > 0.0, "resolve_inner: beta must be positive");
  require(init.size() == mdp.param_dim(), "resolve_inner: init dimension mismatch");
  mdp.validate();
  const Mat basis = gauge_free_basis(mdp.n_states, mdp.n_actions);
  const Mat r = expected_reward(mdp, psi);

  // Natural-gradient ascent: the Fisher-preconditioned step on softmax logits
  // is theta += eta * soft_advantage / beta, which (unlike the plain gradient)
  // does not stall where a rarely visited state's policy has saturated.
  Vec theta = init;
  double gnorm = std::numeric_limits<double>::infinity();
  double resid = gnorm;
  for (int it = 0; it < budget.max_iters; ++it) {
    const Mat pi = action_probabilities(mdp, theta);
    const Mat sys = Mat::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * policy_transition(mdp, pi);
    const Vec v = solve_checked(sys, policy_reward(mdp, pi, psi, beta));
    Mat log_pi(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
      const auto row = theta.segment(s * mdp.n_actions, mdp.n_actions);
      const double mx = row.maxCoeff();
      log_pi.row(s) = (row.array() - mx - std::log((row.array() - mx).exp().sum())).transpose();
    }
    Vec adv(mdp.param_dim());
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a)
        adv[s * mdp.n_actions + a] = r(s, a) + mdp.gamma * mdp.P[a].row(s).dot(v) - beta * log_pi(s, a) - v[s];
    resid = adv.cwiseAbs().maxCoeff();
    gnorm = analytic_grad_theta(mdp, theta, psi, beta).norm();
    if (gnorm < budget.tol && resid < std::sqrt(budget.tol)) return theta;

    if (resid < 1e-6 && basis.cols() > 0) {
      const Vec g = analytic_grad_theta(mdp, theta, psi, beta);
      const Mat hr = basis.transpose() * exact_hessian(mdp, theta, psi, beta) * basis;
      const Vec dr = hr.fullPivLu().solve(-(basis.transpose() * g));
      const Vec cand = theta + basis * dr;
      if (cand.allFinite() && analytic_grad_theta(mdp, cand, psi, beta).norm() < gnorm) {
        theta = cand;
        continue;
      }
    }
    if (!adv.allFinite()) break;
    theta += adv / beta;
    for (int s = 0; s < mdp.n_states; ++s) {
      auto row = theta.segment(s * mdp.n_actions, mdp.n_actions);
      row.array() -= row.maxCoeff();
    }
  }
  std::ostringstream msg;
  msg << "resolve_inner: budget exhausted with gradient norm " << gnorm << " (soft advantage " << resid << ")";
  throw NumericError(msg.str());
}

Mat assemble_reinforce_hessian(const TabularMDP& mdp, const Vec& theta, const rollout::TrajectoryBatch& batch,
                               const Vec& psi) {
  require(!batch.empty(), "assemble_reinforce_hessian: empty batch");
  const Mat pi = action_probabilities(mdp, theta);
  const int m = mdp.n_actions;
  const int p = mdp.param_dim();
  Mat h = Mat::Zero(p, p);
  for (const auto& tr : batch.trajectories) {
    Vec g = Vec::Zero(p);
    Mat second = Mat::Zero(p, p);
    double ret = 0.0;
    double disc = 1.0;
    for (int t = 0; t < tr.length(); ++t) {
      const int s = static_cast<int>(std::lround(tr.states(0, t)));
      const int a = static_cast<int>(std::lround(tr.actions(0, t)));
      const int s2 = static_cast<int>(std::lround(tr.states(0, t + 1)));
      for (int b = 0; b < m; ++b) {
        g[s * m + b] += (a == b ? 1.0 : 0.0) - pi(s, b);
        for (int c = 0; c < m; ++c) second(s * m + b, s * m + c) -= (b == c ? pi(s, b) : 0.0) - pi(s, b) * pi(s, c);
      }
      for (int j = 0; j < mdp.k; ++j) ret += disc * psi[j] * mdp.features[j](s * m + a, s2);
      disc *= mdp.gamma;
    }
    h += (g * g.transpose() + second) * ret;
  }
  return h / static_cast<double>(batch.size());
}

}  // namespace admrl::oracle
