#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "admrl/mlp.hpp"
#include "admrl/types.hpp"

namespace admrl::policy {

/// A parameterized stochastic policy pi_theta(a|s). The object describes the
/// architecture only; every operation is a pure function of the flat
/// parameter vector passed in. Batches are column-per-sample.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual int param_dim() const = 0;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;

  /// Fresh random parameters.
  virtual Vec initial_params(Rng& rng) const = 0;

  /// Column i is drawn using rngs[i].
  virtual Mat sample(const Vec& theta, const Mat& states, std::span<Rng> rngs) const = 0;

  virtual Vec log_prob(const Vec& theta, const Mat& states, const Mat& actions) const = 0;

  /// p x n; column i is d log pi(a_i|s_i) / d theta.
  virtual Mat scores(const Vec& theta, const Mat& states, const Mat& actions) const = 0;

  /// sum_i w_i d log pi(a_i|s_i) / d theta.
  virtual Vec weighted_score(const Vec& theta, const Mat& states, const Mat& actions, const Vec& w) const = 0;

  /// (d^2 / d theta d theta^T  sum_i w_i log pi(a_i|s_i)) x
  virtual Vec logp_hvp(const Vec& theta, const Mat& states, const Mat& actions, const Vec& w,
                       const Vec& x) const = 0;

  /// Mean over the states of the Fisher information (expectation over the
  /// policy's own actions) applied to x.
  virtual Vec fisher_vp(const Vec& theta, const Mat& states, const Vec& x) const = 0;

  /// x -> fisher_vp(theta, states, x) for repeated products at a fixed
  /// (theta, states); implementations may cache the forward pass.
  virtual std::function<Vec(const Vec&)> fisher_operator(const Vec& theta, const Mat& states) const;

  /// mean_i KL(pi_old(.|s_i) || pi_new(.|s_i))
  virtual double mean_kl(const Vec& theta_old, const Vec& theta_new, const Mat& states) const = 0;

 protected:
  void check_theta(const Vec& theta) const;
};

// Single-sample conveniences.
Vec sample_action(const Policy& policy, const Vec& theta, const Vec& state, Rng& rng);
double log_prob(const Policy& policy, const Vec& theta, const Vec& state, const Vec& action);
Vec grad_log_prob(const Policy& policy, const Vec& theta, const Vec& state, const Vec& action);

struct GaussianArch {
  int obs_dim = 4;
  int act_dim = 2;
  std::vector<int> hidden{32};
  /// Fixed elementwise scaling applied to states before the network.
  Vec input_scale;

  bool operator==(const GaussianArch&) const = default;
};

/// Diagonal Gaussian with an MLP mean network and a state-independent
/// log-std vector. theta = [network params | log_std].
class GaussianMlpPolicy final : public Policy {
 public:
  /// Initialization defaults: hidden layers orthogonal gain 1, output layer
  /// orthogonal gain 0.1, log_std = -0.5.
  static constexpr double kInitOutputGain = 0.1;
  static constexpr double kInitLogStd = -0.5;

  explicit GaussianMlpPolicy(GaussianArch arch);

  const GaussianArch& arch() const { return arch_; }
  const Mlp& network() const { return net_; }

  int param_dim() const override { return net_.param_count() + arch_.act_dim; }
  int obs_dim() const override { return arch_.obs_dim; }
  int act_dim() const override { return arch_.act_dim; }

  Vec initial_params(Rng& rng) const override;
  Vec zero_params() const;

  Mat mean(const Vec& theta, const Mat& states) const;
  Vec log_std(const Vec& theta) const { return theta.tail(arch_.act_dim); }

  Mat sample(const Vec& theta, const Mat& states, std::span<Rng> rngs) const override;
  Vec log_prob(const Vec& theta, const Mat& states, const Mat& actions) const override;
  Mat scores(const Vec& theta, const Mat& states, const Mat& actions) const override;
  Vec weighted_score(const Vec& theta, const Mat& states, const Mat& actions, const Vec& w) const override;
  Vec logp_hvp(const Vec& theta, const Mat& states, const Mat& actions, const Vec& w,
               const Vec& x) const override;
  Vec fisher_vp(const Vec& theta, const Mat& states, const Vec& x) const override;
  std::function<Vec(const Vec&)> fisher_operator(const Vec& theta, const Mat& states) const override;
  double mean_kl(const Vec& theta_old, const Vec& theta_new, const Mat& states) const override;

 private:
  Mat scaled(const Mat& states) const;
  std::span<const double> net_params(const Vec& theta) const {
    return {theta.data(), static_cast<std::size_t>(net_.param_count())};
  }

  GaussianArch arch_;
  Mlp net_;
};

/// Checkpoint format: {"arch": {...layer sizes...}, "theta": [...]}.
nlohmann::json to_json(const GaussianArch& arch, const Vec& theta);
std::pair<GaussianArch, Vec> gaussian_from_json(const nlohmann::json& j);

nlohmann::json arch_to_json(const GaussianArch& arch);
GaussianArch arch_from_json(const nlohmann::json& j);

}  // namespace admrl::policy
