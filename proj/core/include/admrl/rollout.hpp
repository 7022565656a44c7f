#pragma once

#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "admrl/dyn_model.hpp"
#include "admrl/envs.hpp"
#include "admrl/policy.hpp"
#include "admrl/types.hpp"

namespace admrl::rollout {

enum class Source { real, virtual_model };

std::string to_string(Source s);

/// One rollout. Rewards are deliberately not stored: returns are recomputed
/// under whatever task parameters the caller asks about.
struct Trajectory {
  Mat states;   // d x (H + 1)
  Mat actions;  // m x H, samples of pi_theta (score functions are taken at these)
  Mat applied;  // m x H, what the dynamics received (exploration noise added, clipped to the box)
  Source source = Source::real;
  std::uint64_t seed = 0;

  int length() const { return static_cast<int>(actions.cols()); }
};

struct TrajectoryBatch {
  std::vector<Trajectory> trajectories;
  Source source = Source::real;
  std::uint64_t policy_id = 0;  // fingerprint of the theta that generated the batch

  std::size_t size() const { return trajectories.size(); }
  bool empty() const { return trajectories.empty(); }
  std::size_t total_steps() const;
};

/// Roll pi_theta on `dynamics`. Each trajectory draws its own seed from `rng`
/// and uses a private stream from then on. Exploration noise of standard
/// deviation noise_std is added to the executed action only.
TrajectoryBatch collect(const envs::Dynamics& dynamics, const policy::Policy& policy, const Vec& theta, int n_traj,
                        int horizon, Rng& rng, double noise_std = 0.0);

double return_of(const Trajectory& traj, const envs::RewardModel& reward, const Vec& psi, double gamma);
Vec return_grad_psi(const Trajectory& traj, const envs::RewardModel& reward, const Vec& psi, double gamma);

double mean_return(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi, double gamma);
Vec mean_return_grad_psi(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi,
                         double gamma);

/// Per-step quantities laid out trajectory-major: step t of trajectory i is
/// at offsets[i] + t.
struct StepWeights {
  Vec values;
  Mat grads;  // k x N, only filled by advantage_grad_psi
  std::vector<std::size_t> offsets;

  Eigen::Index index(std::size_t traj, int t) const { return static_cast<Eigen::Index>(offsets[traj]) + t; }
};

/// G_t = sum_{t' >= t} gamma^{t'-t} r_t'
StepWeights reward_to_go(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi,
                         double gamma);

using FeatureMap = std::function<Vec(const Eigen::Ref<const Vec>&)>;

/// [1, s_i, s_i s_j (i <= j)]
FeatureMap polynomial_features();

/// Reward-to-go minus a least-squares state-value baseline (intercept
/// unpenalized, tiny ridge on the remaining features) refit on this batch.
StepWeights advantages(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi, double gamma,
                       const FeatureMap& features = polynomial_features());

/// d A_t / d psi with the baseline held psi-constant: the psi-gradient of the
/// reward-to-go. Returned in StepWeights::grads.
StepWeights advantage_grad_psi(const TrajectoryBatch& batch, const envs::RewardModel& reward, const Vec& psi,
                               double gamma);

void append_to_dataset(const TrajectoryBatch& batch, dyn_model::TransitionDataset& dataset, int tag);

nlohmann::json to_json(const TrajectoryBatch& batch);
TrajectoryBatch batch_from_json(const nlohmann::json& j);

}  // namespace admrl::rollout
