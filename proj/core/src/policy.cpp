#include "admrl/policy.hpp"

#include <memory>

#include <numbers>

namespace admrl::policy {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)
}

std::function<Vec(const Vec&)> Policy::fisher_operator(const Vec& theta, const Mat& states) const {
  return [this, theta, states](const Vec& x) { return fisher_vp(theta, states, x); };
}

void Policy::check_theta(const Vec& theta) const {
  if (theta.size() != param_dim()) {
    throw InputError("policy: parameter vector has size " + std::to_string(theta.size()) + ", expected " +
                     std::to_string(param_dim()));
  }
}

Vec sample_action(const Policy& policy, const Vec& theta, const Vec& state, Rng& rng) {
  require(state.allFinite(), "sample_action: non-finite state");
  Mat s = state;
  Rng* r = &rng;
  return policy.sample(theta, s, std::span<Rng>(r, 1)).col(0);
}

double log_prob(const Policy& policy, const Vec& theta, const Vec& state, const Vec& action) {
  return policy.log_prob(theta, Mat(state), Mat(action))[0];
}

Vec grad_log_prob(const Policy& policy, const Vec& theta, const Vec& state, const Vec& action) {
  return policy.scores(theta, Mat(state), Mat(action)).col(0);
}

// ---------------------------------------------------------------------------

GaussianMlpPolicy::GaussianMlpPolicy(GaussianArch arch) : arch_(std::move(arch)) {
  require(arch_.obs_dim >= 1 && arch_.act_dim >= 1, "GaussianMlpPolicy: bad dimensions");
  if (arch_.input_scale.size() == 0) arch_.input_scale = Vec::Ones(arch_.obs_dim);
  require(arch_.input_scale.size() == arch_.obs_dim, "GaussianMlpPolicy: input_scale dimension mismatch");
  std::vector<int> sizes;
  sizes.push_back(arch_.obs_dim);
  for (int h : arch_.hidden) sizes.push_back(h);
  sizes.push_back(arch_.act_dim);
  net_ = Mlp(std::move(sizes));
}

Vec GaussianMlpPolicy::initial_params(Rng& rng) const {
  Vec theta = Vec::Zero(param_dim());
  net_.init_orthogonal({theta.data(), static_cast<std::size_t>(net_.param_count())}, 1.0, kInitOutputGain, rng);
  theta.tail(arch_.act_dim).setConstant(kInitLogStd);
  return theta;
}

Vec GaussianMlpPolicy::zero_params() const {
  return Vec::Zero(param_dim());
}

Mat GaussianMlpPolicy::scaled(const Mat& states) const {
  require(states.rows() == arch_.obs_dim, "GaussianMlpPolicy: state dimension mismatch");
  return arch_.input_scale.asDiagonal() * states;
}

Mat GaussianMlpPolicy::mean(const Vec& theta, const Mat& states) const {
  check_theta(theta);
  return net_.forward(net_params(theta), scaled(states));
}

Mat GaussianMlpPolicy::sample(const Vec& theta, const Mat& states, std::span<Rng> rngs) const {
  require(static_cast<Eigen::Index>(rngs.size()) == states.cols(), "sample: one rng per state required");
  Mat a = mean(theta, states);
  const Vec std = log_std(theta).array().exp();
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    for (Eigen::Index j = 0; j < a.rows(); ++j) {
      a(j, i) += std[j] * standard_normal(rngs[static_cast<std::size_t>(i)]);
    }
  }
  return a;
}

Vec GaussianMlpPolicy::log_prob(const Vec& theta, const Mat& states, const Mat& actions) const {
  const Mat mu = mean(theta, states);
  require(actions.rows() == arch_.act_dim && actions.cols() == states.cols(), "log_prob: action shape mismatch");
  const Vec ls = log_std(theta);
  const Mat u = (actions - mu).array().colwise() * (-ls).array().exp();
  const double norm = ls.sum() + arch_.act_dim * kHalfLog2Pi;
  return (-0.5 * u.array().square().colwise().sum() - norm).matrix().transpose();
}

Mat GaussianMlpPolicy::scores(const Vec& theta, const Mat& states, const Mat& actions) const {
  check_theta(theta);
  Mlp::Cache cache;
  const Mat mu = net_.forward(net_params(theta), scaled(states), &cache);
  const Vec inv_var = (-2.0 * log_std(theta)).array().exp();
  const Mat diff = actions - mu;
  const Mat g = diff.array().colwise() * inv_var.array();
  Mat out(param_dim(), states.cols());
  out.topRows(net_.param_count()) = net_.per_sample_grads(net_params(theta), cache, g);
  out.bottomRows(arch_.act_dim) = (diff.array().square().colwise() * inv_var.array() - 1.0).matrix();
  return out;
}

Vec GaussianMlpPolicy::weighted_score(const Vec& theta, const Mat& states, const Mat& actions,
                                      const Vec& w) const {
  check_theta(theta);
  require(w.size() == states.cols(), "weighted_score: weight count mismatch");
  Mlp::Cache cache;
  const Mat mu = net_.forward(net_params(theta), scaled(states), &cache);
  const Vec inv_var = (-2.0 * log_std(theta)).array().exp();
  const Mat diff = actions - mu;
  const Mat g = (diff.array().colwise() * inv_var.array()).rowwise() * w.transpose().array();
  Vec out = Vec::Zero(param_dim());
  net_.backward(net_params(theta), cache, g, {out.data(), static_cast<std::size_t>(net_.param_count())});
  out.tail(arch_.act_dim) =
      ((diff.array().square().colwise() * inv_var.array() - 1.0).rowwise() * w.transpose().array())
          .rowwise()
          .sum();
  return out;
}

Vec GaussianMlpPolicy::logp_hvp(const Vec& theta, const Mat& states, const Mat& actions, const Vec& w,
                                const Vec& x) const {
  check_theta(theta);
  if (x.size() != param_dim()) throw InputError("logp_hvp: direction has wrong dimension");
  require(w.size() == states.cols(), "logp_hvp: weight count mismatch");
  const int np = net_.param_count();
  const auto xs = std::span<const double>(x.data(), static_cast<std::size_t>(np));
  const Vec x_ls = x.tail(arch_.act_dim);

  Mlp::Cache cache;
  const Mat mu = net_.forward(net_params(theta), scaled(states), &cache);
  std::vector<Mat> r_inputs;
  const Mat r_mu = net_.jvp(net_params(theta), xs, cache, &r_inputs);

  const Vec inv_var = (-2.0 * log_std(theta)).array().exp();
  const Mat diff = actions - mu;
  const Mat g = diff.array().colwise() * inv_var.array();  // d logp / d mu
  // directional derivative of g along x
  const Mat r_g = -(r_mu.array().colwise() * inv_var.array()) - 2.0 * (g.array().colwise() * x_ls.array());

  const auto wt = w.transpose().array();
  const Mat delta = g.array().rowwise() * wt;
  const Mat r_delta = r_g.array().rowwise() * wt;

  Vec out = Vec::Zero(param_dim());
  net_.r_backward(net_params(theta), xs, cache, r_inputs, delta, r_delta,
                  {out.data(), static_cast<std::size_t>(np)});
  // d/dx of (u^2 - 1) along x: -2 g r_mu - 2 u^2 x_ls
  const Mat u2 = diff.array().square().colwise() * inv_var.array();
  const Mat r_ls = -2.0 * g.array() * r_mu.array() - 2.0 * (u2.array().colwise() * x_ls.array());
  out.tail(arch_.act_dim) = (r_ls.array().rowwise() * wt).rowwise().sum();
  return out;
}

Vec GaussianMlpPolicy::fisher_vp(const Vec& theta, const Mat& states, const Vec& x) const {
  return fisher_operator(theta, states)(x);
}

std::function<Vec(const Vec&)> GaussianMlpPolicy::fisher_operator(const Vec& theta, const Mat& states) const {
  check_theta(theta);
  auto cache = std::make_shared<Mlp::Cache>();
  net_.forward(net_params(theta), scaled(states), cache.get());
  const Vec inv_var = (-2.0 * log_std(theta)).array().exp() / static_cast<double>(states.cols());
  return [this, theta, cache, inv_var](const Vec& x) -> Vec {
    require(x.size() == param_dim(), "fisher_vp: direction has wrong dimension");
    const int np = net_.param_count();
    std::vector<Mat> r_inputs;
    const Mat r_mu = net_.jvp(net_params(theta), {x.data(), static_cast<std::size_t>(np)}, *cache, &r_inputs);
    const Mat delta = r_mu.array().colwise() * inv_var.array();
    Vec out = Vec::Zero(param_dim());
    net_.backward(net_params(theta), *cache, delta, {out.data(), static_cast<std::size_t>(np)});
    out.tail(arch_.act_dim) = 2.0 * x.tail(arch_.act_dim);
    return out;
  };
}

double GaussianMlpPolicy::mean_kl(const Vec& theta_old, const Vec& theta_new, const Mat& states) const {
  const Mat mu_o = mean(theta_old, states);
  const Mat mu_n = mean(theta_new, states);
  const Vec lo = log_std(theta_old);
  const Vec ln = log_std(theta_new);
  const Vec var_o = (2.0 * lo).array().exp();
  const Vec inv2var_n = 0.5 * (-2.0 * ln).array().exp();
  const Mat sq = (mu_o - mu_n).array().square();
  const Mat per = ((sq.array().colwise() + var_o.array()).colwise() * inv2var_n.array()).colwise() +
                  (ln - lo).array() - 0.5;
  return per.sum() / static_cast<double>(states.cols());
}

// ---------------------------------------------------------------------------

nlohmann::json arch_to_json(const GaussianArch& arch) {
  nlohmann::json j;
  j["obs_dim"] = arch.obs_dim;
  j["act_dim"] = arch.act_dim;
  j["hidden"] = arch.hidden;
  j["input_scale"] = std::vector<double>(arch.input_scale.data(), arch.input_scale.data() + arch.input_scale.size());
  return j;
}

GaussianArch arch_from_json(const nlohmann::json& j) {
  GaussianArch a;
  a.obs_dim = j.at("obs_dim").get<int>();
  a.act_dim = j.at("act_dim").get<int>();
  a.hidden = j.at("hidden").get<std::vector<int>>();
  if (j.contains("input_scale")) {
    const auto v = j.at("input_scale").get<std::vector<double>>();
    a.input_scale = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return a;
}

nlohmann::json to_json(const GaussianArch& arch, const Vec& theta) {
  nlohmann::json j;
  j["arch"] = arch_to_json(arch);
  j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  return j;
}

std::pair<GaussianArch, Vec> gaussian_from_json(const nlohmann::json& j) {
  GaussianArch arch = arch_from_json(j.at("arch"));
  const auto v = j.at("theta").get<std::vector<double>>();
  Vec theta = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  const GaussianMlpPolicy check(arch);
  if (theta.size() != check.param_dim()) throw InputError("policy checkpoint: theta size does not match arch");
  return {check.arch(), theta};
}

}  // namespace admrl::policy
