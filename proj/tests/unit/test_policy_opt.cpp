#include <gtest/gtest.h>

#include "admrl/oracle.hpp"
#include "admrl/policy_opt.hpp"
#include "test_util.hpp"

namespace admrl::policy_opt {
namespace {

using test::vec2;

class ZeroReward final : public envs::RewardModel {
 public:
  int task_dim() const override { return 2; }
  double value(const Vec&, const Eigen::Ref<const Vec>&, const Eigen::Ref<const Vec>&,
               const Eigen::Ref<const Vec>&) const override {
    return 0.0;
  }
  void accumulate_grad_psi(const Vec&, const Eigen::Ref<const Vec>&, const Eigen::Ref<const Vec>&,
                           const Eigen::Ref<const Vec>&, double, Eigen::Ref<Vec>) const override {}
};

struct PointMassSetup {
  envs::PointMass2D env;
  policy::GaussianMlpPolicy pi{policy::GaussianArch{4, 2, {16}, (Vec(4) << 0.05, 0.05, 0.5, 0.5).finished()}};
  envs::RewardFamily reward = envs::point_mass_velocity_reward();
  dyn_model::TransitionDataset data{4, 2};

  PointMassSetup() {
    Rng rng(30);
    const Vec theta = pi.initial_params(rng);
    rollout::append_to_dataset(rollout::collect(env, pi, theta, 10, 100, rng, 0.3), data, 0);
    env.reset_counter();
  }

  InnerContext ctx(int n_trpo = 500) const {
    InnerContext c{env, pi, reward};
    c.trpo.n_trpo = n_trpo;
    return c;
  }
};

TEST(TrpoStep, ZeroAdvantagesLeaveThetaUnchanged) {
  PointMassSetup s;
  Rng rng(1);
  const Vec theta = s.pi.initial_params(rng);
  const auto batch = rollout::collect(s.env, s.pi, theta, 5, 20, rng);
  const auto r = trpo_step(s.pi, theta, batch, ZeroReward(), vec2(0, 0), 0.99, TrpoConfig{});
  EXPECT_EQ(r.theta, theta);
  EXPECT_FALSE(r.accepted);
}

TEST(TrpoStep, SampledKlNeverExceedsLimit) {
  PointMassSetup s;
  TrpoConfig cfg;
  int accepted = 0;
  for (int inst = 0; inst < 100; ++inst) {
    Rng rng(mix_seed(2, inst));
    const Vec theta = s.pi.initial_params(rng);
    Vec psi = test::random_vec(2, rng, 2.0);
    const auto batch = rollout::collect(s.env, s.pi, theta, 4, 50, rng, 0.1);
    cfg.kl_limit = 0.002 * (1 + inst % 10);
    cfg.fisher_subsample = 1 + inst % 7;
    const auto r = trpo_step(s.pi, theta, batch, s.reward, psi, 0.99, cfg);
    Mat states(4, static_cast<Eigen::Index>(batch.total_steps()));
    Eigen::Index c = 0;
    for (const auto& tr : batch.trajectories)
      for (int t = 0; t < tr.length(); ++t) states.col(c++) = tr.states.col(t);
    const double kl = s.pi.mean_kl(theta, r.theta, states);
    EXPECT_LE(kl, 1.5 * cfg.kl_limit) << "instance " << inst;
    if (r.accepted) {
      ++accepted;
      EXPECT_DOUBLE_EQ(kl, r.kl);
      EXPECT_GE(r.improvement, 0.0);
    }
  }
  EXPECT_GT(accepted, 50);
}

TEST(TrpoStep, ImprovesTabularReturnOverIterations) {
  const auto mdp = oracle::TabularMDP::random(3);
  const oracle::SoftmaxPolicy pi(mdp.n_states, mdp.n_actions);
  const oracle::TabularEnv env(mdp);
  const oracle::TabularReward reward(mdp);
  const Vec psi = vec2(1.0, -0.5);
  Vec theta = Vec::Zero(pi.param_dim());
  const double start = oracle::exact_return(mdp, theta, psi);
  Rng rng(4);
  TrpoConfig cfg;
  cfg.kl_limit = 0.02;
  cfg.fisher_subsample = 1;
  for (int it = 0; it < 30; ++it) {
    const auto batch = rollout::collect(env, pi, theta, 200, 30, rng);
    theta = trpo_step(pi, theta, batch, reward, psi, mdp.gamma, cfg).theta;
  }
  const Vec opt = oracle::resolve_inner(mdp, psi, 1e-3, Vec::Zero(pi.param_dim()));
  const double best = oracle::exact_return(mdp, opt, psi);
  const double end = oracle::exact_return(mdp, theta, psi);
  EXPECT_GT(end, start + 0.5 * (best - start));
}

TEST(TrpoStep, RejectsEmptyBatchAndBadConfig) {
  PointMassSetup s;
  Rng rng(5);
  const Vec theta = s.pi.initial_params(rng);
  EXPECT_THROW(trpo_step(s.pi, theta, rollout::TrajectoryBatch{}, s.reward, vec2(0, 0), 0.99, TrpoConfig{}),
               InputError);
  TrpoConfig bad;
  bad.fisher_subsample = 0;
  EXPECT_THROW(validate(bad), InputError);
  bad = TrpoConfig{};
  bad.kl_limit = -1;
  EXPECT_THROW(validate(bad), InputError);
}

TEST(VirtualTraining, NeverStepsTheRealEnvironment) {
  PointMassSetup s;
  Rng rng(6);
  auto model = dyn_model::DynModel::random({4, 2, {32}}, rng);
  const auto r = virtual_training(s.ctx(), s.pi.initial_params(rng), model, vec2(1, 1), s.data, {2, 10, 3}, rng);
  EXPECT_EQ(r.trpo_steps, 6);
  EXPECT_EQ(s.env.real_steps(), 0u);
  const auto z = zero_shot_adapt(s.ctx(), model, vec2(-1, 1), s.data, 2, {1, 10, 2}, rng);
  ASSERT_TRUE(z.has_value());
  EXPECT_EQ(s.env.real_steps(), 0u);
}

TEST(VirtualTraining, ZeroIterationsAreANoOp) {
  PointMassSetup s;
  Rng rng(7);
  auto model = dyn_model::DynModel::random({4, 2, {32}}, rng);
  const auto before = model.to_json();
  const Vec theta = s.pi.initial_params(rng);
  const auto r = virtual_training(s.ctx(), theta, model, vec2(1, 1), s.data, {0, 10, 3}, rng);
  EXPECT_EQ(r.theta, theta);
  EXPECT_EQ(model.to_json(), before);
}

TEST(VirtualTraining, EmptyDatasetIsStateError) {
  PointMassSetup s;
  Rng rng(8);
  auto model = dyn_model::DynModel::zeros({4, 2, {8}});
  const dyn_model::TransitionDataset empty(4, 2);
  EXPECT_THROW(virtual_training(s.ctx(), s.pi.initial_params(rng), model, vec2(0, 0), empty, {1, 1, 1}, rng),
               StateError);
  EXPECT_FALSE(zero_shot_adapt(s.ctx(), model, vec2(0, 0), empty, 3, {1, 1, 1}, rng).has_value());
}

TEST(VirtualTraining, ImprovesModelReturn) {
  PointMassSetup s;
  Rng rng(9);
  auto model = dyn_model::DynModel::random({4, 2, {32}}, rng);
  const Vec theta0 = s.pi.initial_params(rng);
  const Vec psi = vec2(1.0, -1.0);
  const auto r = virtual_training(s.ctx(1000), theta0, model, psi, s.data, {3, 100, 10}, rng);
  const dyn_model::ModelDynamics dyn(model, s.env);
  Rng eval_rng(10);
  const double before = rollout::mean_return(rollout::collect(dyn, s.pi, theta0, 20, 100, eval_rng), s.reward, psi, 0.99);
  Rng eval_rng2(10);
  const double after = rollout::mean_return(rollout::collect(dyn, s.pi, r.theta, 20, 100, eval_rng2), s.reward, psi, 0.99);
  EXPECT_GT(after, before);
}

TEST(FirstOrderResidual, ShrinksAsZeroShotAdaptationConverges) {
  const auto mdp = oracle::TabularMDP::random(11);
  const oracle::SoftmaxPolicy pi(mdp.n_states, mdp.n_actions);
  const oracle::TabularEnv env(mdp);
  const oracle::TabularReward reward(mdp);
  const Vec psi = vec2(0.5, 1.0);
  const Vec opt = oracle::resolve_inner(mdp, psi, 1e-6, Vec::Zero(pi.param_dim()));
  Rng rng(12);
  const auto near_opt = rollout::collect(env, pi, opt, 4000, 40, rng);
  const auto at_zero = rollout::collect(env, pi, Vec::Zero(pi.param_dim()), 4000, 40, rng);
  EXPECT_LT(first_order_residual(pi, opt, near_opt, reward, psi, mdp.gamma),
            first_order_residual(pi, Vec::Zero(pi.param_dim()), at_zero, reward, psi, mdp.gamma));
}

TEST(Serialization, ConfigRoundTrips) {
  TrpoConfig c;
  c.kl_limit = 0.03;
  c.fisher_subsample = 3;
  const auto back = trpo_from_json(to_json(c));
  EXPECT_EQ(back.kl_limit, 0.03);
  EXPECT_EQ(back.fisher_subsample, 3);
  const auto b = budget_from_json(to_json(VirtualTrainingBudget{4, 5, 6}));
  EXPECT_EQ(b.n, 4);
  EXPECT_EQ(b.n_model, 5);
  EXPECT_EQ(b.n_policy, 6);
}

}  // namespace
}  // namespace admrl::policy_opt
