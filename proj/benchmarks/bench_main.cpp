#include <benchmark/benchmark.h>

#include "admrl/dyn_model.hpp"
#include "admrl/envs.hpp"
#include "admrl/policy.hpp"
#include "admrl/policy_opt.hpp"
#include "admrl/rollout.hpp"
#include "admrl/task_grad.hpp"

namespace {

using namespace admrl;

struct PointMassBench {
  envs::PointMass2D env;
  policy::GaussianMlpPolicy pi{policy::GaussianArch{4, 2, {32}, (Vec(4) << 0.05, 0.05, 0.5, 0.5).finished()}};
  envs::RewardFamily reward = envs::point_mass_velocity_reward();
  Vec theta;
  Vec psi = (Vec(2) << 1.0, -2.0).finished();

  PointMassBench() {
    Rng rng(1);
    theta = pi.initial_params(rng);
  }
};

void BM_RealRollout(benchmark::State& state) {
  PointMassBench b;
  Rng rng(2);
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(rollout::collect(b.env, b.pi, b.theta, n, 100, rng, 0.1));
  state.SetItemsProcessed(state.iterations() * n * 100);
}
BENCHMARK(BM_RealRollout)->Arg(10)->Arg(100);

void BM_ModelRollout(benchmark::State& state) {
  PointMassBench b;
  Rng rng(3);
  const auto model = dyn_model::DynModel::random({4, 2, {64}}, rng);
  const dyn_model::ModelDynamics dyn(model, b.env);
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(rollout::collect(dyn, b.pi, b.theta, n, 100, rng));
  state.SetItemsProcessed(state.iterations() * n * 100);
}
BENCHMARK(BM_ModelRollout)->Arg(10)->Arg(100);

void BM_HessianVectorProduct(benchmark::State& state) {
  PointMassBench b;
  Rng rng(4);
  const auto batch = rollout::collect(b.env, b.pi, b.theta, static_cast<int>(state.range(0)), 100, rng);
  const task_grad::HessianOperator h(b.pi, b.theta, batch, b.reward, b.psi, 0.99);
  const Vec x = Vec::Ones(b.pi.param_dim());
  for (auto _ : state) benchmark::DoNotOptimize(h.apply(x));
}
BENCHMARK(BM_HessianVectorProduct)->Arg(20)->Arg(100);

void BM_ConjugateGradient(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(5);
  Mat a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = standard_normal(rng);
  a = (a + a.transpose()).eval();
  Vec rhs(n);
  for (auto& v : rhs) v = standard_normal(rng);
  task_grad::CGConfig cfg;
  cfg.damping = 0.0;
  for (auto _ : state)
    benchmark::DoNotOptimize(task_grad::cg_solve([&](const Vec& x) { return Vec(a * x); }, rhs, cfg));
}
BENCHMARK(BM_ConjugateGradient)->Arg(50)->Arg(500);

void BM_TrpoStep(benchmark::State& state) {
  PointMassBench b;
  Rng rng(6);
  const auto batch = rollout::collect(b.env, b.pi, b.theta, static_cast<int>(state.range(0)), 100, rng, 0.1);
  const policy_opt::TrpoConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(policy_opt::trpo_step(b.pi, b.theta, batch, b.reward, b.psi, 0.99, cfg));
}
BENCHMARK(BM_TrpoStep)->Arg(20)->Arg(100);

void BM_ModelFit(benchmark::State& state) {
  PointMassBench b;
  Rng rng(7);
  dyn_model::TransitionDataset data(4, 2);
  rollout::append_to_dataset(rollout::collect(b.env, b.pi, b.theta, 20, 100, rng, 0.3), data, 0);
  auto model = dyn_model::DynModel::random({4, 2, {64}}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(dyn_model::fit(model, data, 100, rng));
}
BENCHMARK(BM_ModelFit);

}  // namespace

BENCHMARK_MAIN();
