#include <gtest/gtest.h>

#include "admrl/rollout.hpp"
#include "test_util.hpp"

namespace admrl::rollout {
namespace {

using test::vec2;

/// A 1-D trajectory whose linear_state rewards under psi = 1 are the given
/// next-state values.
Trajectory scripted(const std::vector<double>& rewards) {
  Trajectory tr;
  const auto h = static_cast<Eigen::Index>(rewards.size());
  tr.states = Mat::Zero(1, h + 1);
  for (Eigen::Index t = 0; t < h; ++t) tr.states(0, t + 1) = rewards[static_cast<std::size_t>(t)];
  tr.actions = Mat::Zero(1, h);
  tr.applied = tr.actions;
  return tr;
}

envs::RewardFamily identity_linear(int dim) {
  return envs::RewardFamily::linear_state(envs::NormStats{Vec::Zero(dim), Vec::Ones(dim)});
}

/// r = c regardless of psi.
class ConstantReward final : public envs::RewardModel {
 public:
  explicit ConstantReward(double c) : c_(c) {}
  int task_dim() const override { return 2; }
  double value(const Vec&, const Eigen::Ref<const Vec>&, const Eigen::Ref<const Vec>&,
               const Eigen::Ref<const Vec>&) const override {
    return c_;
  }
  void accumulate_grad_psi(const Vec&, const Eigen::Ref<const Vec>&, const Eigen::Ref<const Vec>&,
                           const Eigen::Ref<const Vec>&, double, Eigen::Ref<Vec>) const override {}

 private:
  double c_;
};

struct Fixture {
  envs::PointMass2D env;
  policy::GaussianMlpPolicy pi{policy::GaussianArch{4, 2, {16}, Vec()}};
  Vec theta;
  Fixture() {
    Rng rng(42);
    theta = pi.initial_params(rng);
  }
  TrajectoryBatch batch(int n, int h, std::uint64_t seed, double noise = 0.0) {
    Rng rng(seed);
    return collect(env, pi, theta, n, h, rng, noise);
  }
};

TEST(Collect, EmptyBatchTakesNoSamples) {
  Fixture f;
  const auto b = f.batch(0, 10, 1);
  EXPECT_TRUE(b.empty());
  EXPECT_EQ(f.env.real_steps(), 0u);
}

TEST(Collect, CountsRealSamplesAndTagsProvenance) {
  Fixture f;
  const auto b = f.batch(5, 13, 1);
  EXPECT_EQ(b.total_steps(), 65u);
  EXPECT_EQ(f.env.real_steps(), 65u);
  EXPECT_EQ(b.source, Source::real);
  EXPECT_EQ(b.policy_id, fingerprint(f.theta));
  for (const auto& tr : b.trajectories) {
    EXPECT_EQ(tr.states.cols(), 14);
    EXPECT_EQ(tr.length(), 13);
  }
}

TEST(Collect, VirtualCollectionNeverTouchesRealCounter) {
  Fixture f;
  Rng rng(2);
  const auto model = dyn_model::DynModel::random({4, 2, {32}}, rng);
  const dyn_model::ModelDynamics dyn(model, f.env);
  const auto b = collect(dyn, f.pi, f.theta, 40, 50, rng);
  EXPECT_EQ(b.source, Source::virtual_model);
  EXPECT_EQ(b.total_steps(), 2000u);
  EXPECT_EQ(f.env.real_steps(), 0u);
}

TEST(Collect, SameSeedSameBatch) {
  Fixture f;
  EXPECT_EQ(to_json(f.batch(4, 20, 9, 0.1)), to_json(f.batch(4, 20, 9, 0.1)));
  EXPECT_NE(to_json(f.batch(4, 20, 9, 0.1)), to_json(f.batch(4, 20, 10, 0.1)));
}

TEST(Collect, ExplorationNoiseOnlyAffectsAppliedActions) {
  Fixture f;
  const auto b = f.batch(3, 30, 4, 0.5);
  for (const auto& tr : b.trajectories) {
    EXPECT_GT((tr.applied - tr.actions.cwiseMax(-1.0).cwiseMin(1.0)).norm(), 0.0);
    EXPECT_LE(tr.applied.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Collect, RejectsBadArguments) {
  Fixture f;
  Rng rng(0);
  EXPECT_THROW(collect(f.env, f.pi, f.theta, 1, 0, rng), InputError);
  EXPECT_THROW(collect(f.env, f.pi, f.theta, -1, 5, rng), InputError);
  EXPECT_THROW(collect(f.env, f.pi, f.theta, 1, 5, rng, -0.1), InputError);
}

TEST(ReturnOf, DiscountedSum) {
  const auto r = identity_linear(1);
  EXPECT_DOUBLE_EQ(return_of(scripted({1, 2}), r, Vec::Ones(1), 0.5), 2.0);
  EXPECT_DOUBLE_EQ(return_of(scripted({1.5, 2}), r, Vec::Ones(1), 0.0), 1.5);
  EXPECT_THROW(return_of(scripted({1}), r, Vec::Ones(1), 1.0), InputError);
}

TEST(ReturnOf, ExactlyLinearInPsiForLinearFamily) {
  Fixture f;
  const auto b = f.batch(3, 25, 5);
  const auto r = identity_linear(4);
  Rng rng(6);
  for (const auto& tr : b.trajectories) {
    const Vec p1 = test::random_vec(4, rng), p2 = test::random_vec(4, rng);
    const double lhs = return_of(tr, r, 2.0 * p1 - 3.0 * p2, 0.9);
    const double rhs = 2.0 * return_of(tr, r, p1, 0.9) - 3.0 * return_of(tr, r, p2, 0.9);
    EXPECT_NEAR(lhs, rhs, 1e-11 * (1.0 + std::abs(lhs)));
  }
}

TEST(ReturnGradPsi, PsiIndependentRewardGivesZero) {
  Fixture f;
  const auto b = f.batch(2, 10, 7);
  EXPECT_TRUE(return_grad_psi(b.trajectories[0], ConstantReward(3.0), vec2(1, 2), 0.9).isZero(0.0));
}

TEST(ReturnGradPsi, LinearFamilyIsDiscountedStateSum) {
  Fixture f;
  const auto b = f.batch(1, 12, 8);
  const auto& tr = b.trajectories[0];
  const auto r = identity_linear(4);
  Vec expect = Vec::Zero(4);
  double disc = 1.0;
  for (int t = 0; t < tr.length(); ++t) {
    expect += disc * tr.states.col(t + 1);
    disc *= 0.8;
  }
  Rng rng(1);
  EXPECT_LT(test::rel_err(return_grad_psi(tr, r, test::random_vec(4, rng), 0.8), expect), 1e-14);
}

TEST(ReturnGradPsi, MatchesFiniteDifferencesOnFrozenBatch) {
  Fixture f;
  const auto b = f.batch(8, 40, 9, 0.2);
  const auto r = envs::point_mass_velocity_reward();
  const Vec psi = vec2(0.37, -0.21);
  const Vec g = mean_return_grad_psi(b, r, psi, 0.99);
  const double h = 1e-7;
  for (int i = 0; i < 2; ++i) {
    Vec hi = psi, lo = psi;
    hi[i] += h;
    lo[i] -= h;
    const double fd = (mean_return(b, r, hi, 0.99) - mean_return(b, r, lo, 0.99)) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-6 * (1.0 + std::abs(fd)));
  }
}

TEST(RewardToGo, SuffixSums) {
  TrajectoryBatch b;
  b.trajectories.push_back(scripted({1, 2, 4}));
  b.trajectories.push_back(scripted({3}));
  const auto w = reward_to_go(b, identity_linear(1), Vec::Ones(1), 0.5);
  EXPECT_DOUBLE_EQ(w.values[w.index(0, 0)], 1 + 0.5 * 2 + 0.25 * 4);
  EXPECT_DOUBLE_EQ(w.values[w.index(0, 1)], 2 + 0.5 * 4);
  EXPECT_DOUBLE_EQ(w.values[w.index(0, 2)], 4.0);
  EXPECT_DOUBLE_EQ(w.values[w.index(1, 0)], 3.0);
}

TEST(Advantages, SingleStepTrajectoriesAreCenteredRewards) {
  std::vector<double> rs{1.0, -2.0, 0.5, 4.0, 3.0};
  TrajectoryBatch b;
  for (double r : rs) b.trajectories.push_back(scripted({r}));
  const auto w = advantages(b, identity_linear(1), Vec::Ones(1), 0.0);
  const double mean = 6.5 / 5.0;
  for (std::size_t i = 0; i < rs.size(); ++i) EXPECT_NEAR(w.values[w.index(i, 0)], rs[i] - mean, 1e-6);
  EXPECT_NEAR(w.values.mean(), 0.0, 1e-9);
}

TEST(Advantages, HorizonOneOnEnvironmentEqualsCenteredImmediateRewards) {
  Fixture f;
  const auto b = f.batch(50, 1, 10, 0.3);
  const auto r = envs::point_mass_velocity_reward();
  const Vec psi = vec2(1, -1);
  const auto w = advantages(b, r, psi, 0.0);
  const auto rtg = reward_to_go(b, r, psi, 0.0);
  const double mean = rtg.values.mean();
  for (Eigen::Index i = 0; i < w.values.size(); ++i) EXPECT_NEAR(w.values[i], rtg.values[i] - mean, 1e-6);
}

TEST(Advantages, ZeroRewardsGiveZeroAdvantages) {
  Fixture f;
  const auto b = f.batch(6, 20, 11);
  const auto w = advantages(b, ConstantReward(0.0), vec2(0, 0), 0.99);
  EXPECT_TRUE(w.values.isZero(0.0));
}

TEST(Advantages, BaselineWithInterceptCentersAdvantages) {
  Fixture f;
  const auto b = f.batch(20, 30, 12, 0.2);
  const auto w = advantages(b, envs::point_mass_velocity_reward(), vec2(2, 1), 0.99);
  const auto rtg = reward_to_go(b, envs::point_mass_velocity_reward(), vec2(2, 1), 0.99);
  EXPECT_LT(std::abs(w.values.mean()), 1e-6 * (1.0 + rtg.values.cwiseAbs().mean()));
}

TEST(AdvantageGradPsi, PsiIndependentRewardGivesZero) {
  Fixture f;
  const auto b = f.batch(3, 10, 13);
  EXPECT_TRUE(advantage_grad_psi(b, ConstantReward(1.0), vec2(0, 0), 0.9).grads.isZero(0.0));
}

TEST(AdvantageGradPsi, LastStepEqualsRewardGradient) {
  Fixture f;
  const auto b = f.batch(3, 15, 14, 0.2);
  const auto r = envs::point_mass_velocity_reward();
  const Vec psi = vec2(0.3, 0.2);
  const auto w = advantage_grad_psi(b, r, psi, 0.9);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& tr = b.trajectories[i];
    const int t = tr.length() - 1;
    EXPECT_EQ(Vec(w.grads.col(w.index(i, t))),
              r.grad_psi(psi, tr.states.col(t), tr.applied.col(t), tr.states.col(t + 1)));
  }
}

TEST(AdvantageGradPsi, MatchesFiniteDifferencesOfRewardToGo) {
  Fixture f;
  const auto b = f.batch(4, 20, 15, 0.2);
  const auto r = envs::point_mass_velocity_reward();
  const Vec psi = vec2(-0.41, 0.13);
  const auto w = advantage_grad_psi(b, r, psi, 0.95);
  const double h = 1e-7;
  for (int k = 0; k < 2; ++k) {
    Vec hi = psi, lo = psi;
    hi[k] += h;
    lo[k] -= h;
    const Vec fd = (reward_to_go(b, r, hi, 0.95).values - reward_to_go(b, r, lo, 0.95).values) / (2 * h);
    EXPECT_LT((w.grads.row(k).transpose() - fd).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Accounting, RecomputationsTakeNoRealSamples) {
  Fixture f;
  const auto b = f.batch(5, 20, 16);
  const auto before = f.env.real_steps();
  const auto r = envs::point_mass_velocity_reward();
  for (int i = 0; i < 5; ++i) {
    const Vec psi = vec2(i, -i);
    mean_return(b, r, psi, 0.99);
    mean_return_grad_psi(b, r, psi, 0.99);
    advantages(b, r, psi, 0.99);
    advantage_grad_psi(b, r, psi, 0.99);
  }
  EXPECT_EQ(f.env.real_steps(), before);
}

TEST(Dataset, AppendKeepsTransitionsAndTag) {
  Fixture f;
  const auto b = f.batch(2, 5, 17, 0.1);
  dyn_model::TransitionDataset d(4, 2);
  append_to_dataset(b, d, 3);
  ASSERT_EQ(d.size(), 10u);
  EXPECT_EQ(d.tags().front(), 3);
  EXPECT_EQ(Vec(d.actions().col(6)), Vec(b.trajectories[1].applied.col(1)));
  EXPECT_EQ(Vec(d.next_states().col(6)), Vec(b.trajectories[1].states.col(2)));
}

TEST(Serialization, BatchJsonRoundTrip) {
  Fixture f;
  const auto b = f.batch(3, 7, 18, 0.1);
  EXPECT_EQ(to_json(batch_from_json(to_json(b))), to_json(b));
  EXPECT_EQ(to_string(Source::virtual_model), "virtual");
}

}  // namespace
}  // namespace admrl::rollout
