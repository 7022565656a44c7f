#include <gtest/gtest.h>

#include "admrl/dyn_model.hpp"
#include "test_util.hpp"

namespace admrl::dyn_model {
namespace {

TransitionDataset point_mass_data(int n, Rng& rng) {
  envs::PointMass2D env;
  TransitionDataset d(4, 2);
  for (int i = 0; i < n; ++i) {
    Vec s(4);
    s << 2 * standard_normal(rng), 2 * standard_normal(rng), 8 * uniform01(rng) - 4, 8 * uniform01(rng) - 4;
    Vec a(2);
    a << 2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1;
    d.append(s, a, env.step(s, a, rng), 0);
  }
  return d;
}

const ModelArch kArch{4, 2, {64}};

TEST(TransitionDataset, AppendOnlyAndTagged) {
  TransitionDataset d(2, 1);
  d.append(Vec::Ones(2), Vec::Zero(1), Vec::Constant(2, 2.0), 3);
  d.append(Vec::Zero(2), Vec::Ones(1), Vec::Constant(2, 5.0), 7);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.tags(), (std::vector<int>{3, 7}));
  EXPECT_EQ(d.next_states().col(1), Vec::Constant(2, 5.0));
  EXPECT_EQ(d.states().col(0), Vec::Ones(2));
  EXPECT_THROW(d.append(Vec::Ones(3), Vec::Zero(1), Vec::Ones(2), 0), InputError);
}

TEST(TransitionDataset, CsvAndJsonRoundTrip) {
  Rng rng(1);
  const auto d = point_mass_data(37, rng);
  test::TempDir dir("dataset");
  d.save_csv(dir.path() / "d.csv");
  const auto c = TransitionDataset::load_csv(dir.path() / "d.csv", 4, 2);
  EXPECT_EQ(c.states(), d.states());
  EXPECT_EQ(c.actions(), d.actions());
  EXPECT_EQ(c.next_states(), d.next_states());
  EXPECT_EQ(c.tags(), d.tags());
  const auto j = TransitionDataset::from_json(d.to_json());
  EXPECT_EQ(j.next_states(), d.next_states());
}

TEST(DynModel, ZeroNetworkPredictsIdentity) {
  const auto m = DynModel::zeros(kArch);
  Rng rng(2);
  const Vec s = test::random_vec(4, rng), a = test::random_vec(2, rng);
  EXPECT_EQ(m.predict(s, a), s);
}

TEST(DynModel, FitLearnsPointMassDynamics) {
  Rng rng(3);
  const auto train = point_mass_data(2000, rng);
  const auto holdout = point_mass_data(500, rng);
  auto m = DynModel::random(kArch, rng);
  fit(m, train, 4000, rng);
  EXPECT_LT(model_error(m, holdout), 1e-4);
}

TEST(DynModel, ZeroStepsLeaveModelUnchanged) {
  Rng rng(4);
  const auto d = point_mass_data(50, rng);
  auto m = DynModel::random(kArch, rng);
  const auto before = m.to_json();
  EXPECT_TRUE(fit(m, d, 0, rng).losses.empty());
  EXPECT_EQ(m.to_json(), before);
}

TEST(DynModel, FitOnEmptyDatasetIsStateError) {
  Rng rng(5);
  auto m = DynModel::zeros(kArch);
  EXPECT_THROW(fit(m, TransitionDataset(4, 2), 10, rng), StateError);
  EXPECT_THROW(model_error(m, TransitionDataset(4, 2)), InputError);
}

TEST(DynModel, DuplicatedTriplesGiveSameLossTrajectory) {
  Rng data_rng(6);
  const auto d = point_mass_data(300, data_rng);
  TransitionDataset twice(4, 2);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    for (int k = 0; k < 2; ++k) twice.append(d.states().col(c), d.actions().col(c), d.next_states().col(c), 0);
  }
  Rng init(7);
  auto m1 = DynModel::random(kArch, init);
  auto m2 = m1;
  Rng r1(8), r2(8);
  const auto l1 = fit(m1, d, 200, r1).losses;
  const auto l2 = fit(m2, twice, 200, r2).losses;
  ASSERT_EQ(l1.size(), l2.size());
  for (std::size_t i = 0; i < l1.size(); ++i) EXPECT_NEAR(l1[i], l2[i], 1e-9 * (1.0 + l1[i]));
}

TEST(DynModel, SmoothedTrainingLossIsNonIncreasing) {
  Rng rng(9);
  const auto d = point_mass_data(2000, rng);
  auto m = DynModel::random(kArch, rng);
  const auto losses = fit(m, d, 2000, rng).losses;
  const int w = 50;
  double prev = 1e300;
  for (std::size_t start = 0; start + w <= losses.size(); start += w) {
    double mean = 0.0;
    for (int i = 0; i < w; ++i) mean += losses[start + i] / w;
    EXPECT_LE(mean, prev * 1.05) << "window starting at " << start;
    prev = std::min(prev, mean);
  }
  EXPECT_LT(normalized_loss(m, d), losses.front());
}

TEST(DynModel, PredictedDeltaIsBoundedByHeadAndNormalization) {
  Rng rng(10);
  const auto d = point_mass_data(200, rng);
  auto m = DynModel::random(kArch, rng);
  fit(m, d, 100, rng);
  const int hidden = kArch.hidden.back();
  const Vec& phi = m.phi();
  const Vec b = phi.tail(4);
  const Eigen::Map<const Mat> w(phi.data() + phi.size() - 4 - 4 * hidden, 4, hidden);
  const Vec bound = m.output_norm().mu.cwiseAbs() +
                    m.output_norm().sigma.cwiseProduct(w.cwiseAbs().rowwise().sum() + b.cwiseAbs());
  for (int i = 0; i < 200; ++i) {
    const Vec s = test::random_vec(4, rng, 50.0), a = test::random_vec(2, rng, 50.0);
    const Vec delta = m.predict(s, a) - s;
    EXPECT_TRUE((delta.cwiseAbs().array() <= bound.array() + 1e-9).all());
  }
}

TEST(DynModel, JsonRoundTripPreservesPredictions) {
  Rng rng(11);
  const auto d = point_mass_data(100, rng);
  auto m = DynModel::random(kArch, rng);
  fit(m, d, 20, rng);
  const auto back = DynModel::from_json(m.to_json());
  EXPECT_EQ(back.predict_batch(d.states(), d.actions()), m.predict_batch(d.states(), d.actions()));
}

TEST(ModelError, PerfectModelHasZeroErrorOnItsOwnPredictions) {
  Rng rng(12);
  auto m = DynModel::random(kArch, rng);
  const auto d = point_mass_data(64, rng);
  fit(m, d, 10, rng);
  TransitionDataset own(4, 2);
  for (Eigen::Index i = 0; i < 64; ++i)
    own.append(d.states().col(i), d.actions().col(i), m.predict(d.states().col(i), d.actions().col(i)), 0);
  EXPECT_LT(model_error(m, own), 1e-24);
  EXPECT_GT(model_error(DynModel::zeros(kArch), d), 0.0);
}

TEST(ModelDynamics, IsVirtualAndClipsActions) {
  Rng rng(13);
  envs::PointMass2D env;
  auto m = DynModel::random(kArch, rng);
  const ModelDynamics dyn(m, env);
  EXPECT_FALSE(dyn.is_real());
  const Mat s = test::random_mat(4, 3, rng);
  std::vector<Rng> rngs(3);
  EXPECT_EQ(dyn.step_batch(s, Mat::Constant(2, 3, 9.0), rngs), m.predict_batch(s, Mat::Ones(2, 3)));
  EXPECT_EQ(env.real_steps(), 0u);
}

}  // namespace
}  // namespace admrl::dyn_model
