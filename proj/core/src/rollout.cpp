#include "admrl/rollout.hpp"

#include "admrl/json_util.hpp"

namespace admrl::rollout {

std::string to_string(Source s) {
  return s == Source::real ? "real" : "virtual";
}

std::size_t TrajectoryBatch::total_steps() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += static_cast<std::size_t>(t.length());
  return n;
}

TrajectoryBatch collect(const envs::Dynamics& dynamics, const policy::Policy& policy, const Vec& theta, int n_traj,
                        int horizon, Rng& rng, double noise_std) {
  require(horizon >= 1, "collect: horizon must be >= 1");
  require(n_traj >= 0, "collect: negative trajectory count");
  require(noise_std >= 0.0, "collect: negative noise");
  TrajectoryBatch batch;
  batch.source = dynamics.is_real() ? Source::real : Source::virtual_model;
  batch.policy_id = fingerprint(theta);
  if (n_traj == 0) return batch;

  const int d = dynamics.state_dim();
  const int m = dynamics.action_dim();
  const auto n = static_cast<std::size_t>(n_traj);
  std::vector<Rng> rngs;
  rngs.reserve(n);
  batch.trajectories.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t seed = rng();
    rngs.emplace_back(seed);
    auto& tr = batch.trajectories[i];
    tr.seed = seed;
    tr.source = batch.source;
    tr.states.resize(d, horizon + 1);
    tr.actions.resize(m, horizon);
    tr.applied.resize(m, horizon);
  }

  const Vec lo = dynamics.action_lo();
  const Vec hi = dynamics.action_hi();
  Mat S(d, n_traj);
  for (std::size_t i = 0; i < n; ++i) {
    S.col(static_cast<Eigen::Index>(i)) = dynamics.initial_state(rngs[i]);
    batch.trajectories[i].states.col(0) = S.col(static_cast<Eigen::Index>(i));
  }
  for (int t = 0; t < horizon; ++t) {
    const Mat A = policy.sample(theta, S, rngs);
    Mat applied = A;
    if (noise_std > 0.0) {
      for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) applied(j, static_cast<Eigen::Index>(i)) += noise_std * standard_normal(rngs[i]);
    }
    applied = applied.cwiseMax(lo.replicate(1, n_traj)).cwiseMin(hi.replicate(1, n_traj));
    S = dynamics.step_batch(S, applied, rngs);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      auto& tr = batch.trajectories[i];
      tr.actions.col(t) = A.col(c);
      tr.applied.col(t) = applied.col(c);
      tr.states.col(t + 1) = S.col(c);
    }
  }
  return batch;
}

namespace {
void check_gamma(double gamma) {
  require(gamma >= 0.0 && gamma < 1.0, "discount must lie in [0, 1)");
}
}  // namespace

double return_of(const Trajectory& traj, const envs::RewardModel& reward, const Vec& psi, double gamma) {
  check_gamma(gamma);
  double total = 0.0;
  double disc = 1.0;
  for (int t = 0; t < traj.length(); ++t) {
    total += disc * reward.value(psi, traj.states.col(t), traj.applied.col(t), traj.states.col(t + 1));
    disc *= gamma;
  }
  return total;
}

Vec return_grad_psi(const Trajectory& traj, const envs::RewardModel& reward, const Vec& psi, double gamma) {
  check_gamma(gamma);
  Vec g = Vec::Zero(reward.task_dim());
  double disc = 1.0;
  for (int t = 0; t < traj.length(); ++t) {
    reward.accumulate_grad_psi(psi, traj.states.col(t), traj.applied.col(t), traj.states.col(t + 1), disc, g);
    disc *= gamma;
  }
  return g;
}

double mean_return(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi, double gamma) {
  if (batch.empty()) throw InputError("mean_return: empty batch");
  double s = 0.0;
  for (const auto& t : batch.trajectories) s += return_of(t, reward, psi, gamma);
  return s / static_cast<double>(batch.size());
}

Vec mean_return_grad_psi(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi,
                         double gamma) {
  if (batch.empty()) throw InputError("mean_return_grad_psi: empty batch");
  Vec g = Vec::Zero(reward.task_dim());
  for (const auto& t : batch.trajectories) g += return_grad_psi(t, reward, psi, gamma);
  return g / static_cast<double>(batch.size());
}

namespace {
std::vector<std::size_t> step_offsets(const TrajectoryBatch& batch) {
  std::vector<std::size_t> off;
  off.reserve(batch.size());
  std::size_t acc = 0;
  for (const auto& t : batch.trajectories) {
    off.push_back(acc);
    acc += static_cast<std::size_t>(t.length());
  }
  return off;
}
}  // namespace

StepWeights reward_to_go(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi,
                         double gamma) {
  check_gamma(gamma);
  StepWeights w;
  w.offsets = step_offsets(batch);
  w.values.resize(static_cast<Eigen::Index>(batch.total_steps()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& tr = batch.trajectories[i];
    double acc = 0.0;
    for (int t = tr.length() - 1; t >= 0; --t) {
      acc = reward.value(psi, tr.states.col(t), tr.applied.col(t), tr.states.col(t + 1)) + gamma * acc;
      w.values[w.index(i, t)] = acc;
    }
  }
  return w;
}

FeatureMap polynomial_features() {
  return [](const Eigen::Ref<const Vec>& s) {
    const auto d = s.size();
    Vec f(1 + d + d * (d + 1) / 2);
    f[0] = 1.0;
    f.segment(1, d) = s;
    Eigen::Index k = 1 + d;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i; j < d; ++j) f[k++] = s[i] * s[j];
    return f;
  };
}

StepWeights advantages(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi, double gamma,
                       const FeatureMap& features) {
  if (batch.empty()) throw InputError("advantages: empty batch");
  StepWeights w = reward_to_go(batch, reward, psi, gamma);

  // Accumulate the normal equations so memory is independent of batch size.
  const Eigen::Index nf = features(batch.trajectories.front().states.col(0)).size();
  Mat gram = Mat::Zero(nf, nf);
  Vec rhs = Vec::Zero(nf);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& tr = batch.trajectories[i];
    for (int t = 0; t < tr.length(); ++t) {
      const Vec f = features(tr.states.col(t));
      gram.selfadjointView<Eigen::Lower>().rankUpdate(f);
      rhs += f * w.values[w.index(i, t)];
    }
  }
  gram = gram.selfadjointView<Eigen::Lower>();
  const double scale = gram.diagonal().tail(nf - 1).cwiseAbs().maxCoeff();
  for (Eigen::Index j = 1; j < nf; ++j) gram(j, j) += 1e-8 * (1.0 + scale);
  const Vec coef = gram.ldlt().solve(rhs);
  if (!coef.allFinite()) throw NumericError("advantages: baseline fit failed");

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& tr = batch.trajectories[i];
    for (int t = 0; t < tr.length(); ++t) w.values[w.index(i, t)] -= features(tr.states.col(t)).dot(coef);
  }
  return w;
}

StepWeights advantage_grad_psi(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi,
                               double gamma) {
  if (batch.empty()) throw InputError("advantage_grad_psi: empty batch");
  check_gamma(gamma);
  StepWeights w;
  w.offsets = step_offsets(batch);
  const int k = reward.task_dim();
  w.grads = Mat::Zero(k, static_cast<Eigen::Index>(batch.total_steps()));
  Vec acc(k);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& tr = batch.trajectories[i];
    acc.setZero();
    for (int t = tr.length() - 1; t >= 0; --t) {
      acc *= gamma;
      reward.accumulate_grad_psi(psi, tr.states.col(t), tr.applied.col(t), tr.states.col(t + 1), 1.0, acc);
      w.grads.col(w.index(i, t)) = acc;
    }
  }
  return w;
}

void append_to_dataset(const TrajectoryBatch& batch, dyn_model::TransitionDataset& dataset, int tag) {
  for (const auto& tr : batch.trajectories) {
    for (int t = 0; t < tr.length(); ++t) dataset.append(tr.states.col(t), tr.applied.col(t), tr.states.col(t + 1), tag);
  }
}

nlohmann::json to_json(const TrajectoryBatch& batch) {
  nlohmann::json trajs = nlohmann::json::array();
  for (const auto& t : batch.trajectories) {
    trajs.push_back({{"seed", t.seed},
                     {"states", mat_to_json(t.states)},
                     {"actions", mat_to_json(t.actions)},
                     {"applied", mat_to_json(t.applied)}});
  }
  return {{"source", to_string(batch.source)}, {"policy_id", batch.policy_id}, {"trajectories", trajs}};
}

TrajectoryBatch batch_from_json(const nlohmann::json& j) {
  TrajectoryBatch b;
  const auto src = j.at("source").get<std::string>();
  if (src != "real" && src != "virtual") throw InputError("trajectory batch: bad source '" + src + "'");
  b.source = src == "real" ? Source::real : Source::virtual_model;
  b.policy_id = j.at("policy_id").get<std::uint64_t>();
  for (const auto& t : j.at("trajectories")) {
    Trajectory tr;
    tr.seed = t.at("seed").get<std::uint64_t>();
    tr.source = b.source;
    tr.states = mat_from_json(t.at("states"));
    tr.actions = mat_from_json(t.at("actions"));
    tr.applied = mat_from_json(t.at("applied"));
    if (tr.states.cols() != tr.actions.cols() + 1) throw InputError("trajectory: |states| != |actions| + 1");
    b.trajectories.push_back(std::move(tr));
  }
  return b;
}

}  // namespace admrl::rollout
