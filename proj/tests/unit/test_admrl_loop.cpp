#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "admrl/admrl_loop.hpp"
#include "test_util.hpp"
#include "tiny_config.hpp"

namespace admrl::loop {
namespace {

namespace fs = std::filesystem;
using test::tiny_config;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t expected_real_steps(const RunConfig& c) {
  return static_cast<std::uint64_t>((c.n_tasks - 1) * c.n_slbo + c.first_task_slbo) *
         static_cast<std::uint64_t>(c.n_collect);
}

RunState run_in_memory(const RunConfig& c) {
  const auto comp = make_components(c);
  auto state = initial_state(c, comp);
  while (state.next_task < c.n_tasks) run_task(c, comp, state);
  return state;
}

TEST(SampleTask, UniformStaysInBoxAndIsCentered) {
  const envs::TaskBox box(test::vec2(-3, -1), test::vec2(3, 5));
  Rng rng(1);
  Vec sum = Vec::Zero(2);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Vec psi = sample_task(Sampler::uniform, box, rng).psi;
    ASSERT_TRUE(box.contains(psi));
    sum += psi;
  }
  const Vec mean = sum / n;
  for (int i = 0; i < 2; ++i) EXPECT_LT(std::abs(mean[i] - box.center()[i]), 0.1 * (box.hi()[i] - box.lo()[i]));
}

TEST(SampleTask, GaussianDrawsOutsideAreProjectedToBoundary) {
  const envs::TaskBox box(Vec::Constant(2, -0.5), Vec::Constant(2, 0.5));
  Rng rng(2);
  int on_boundary = 0;
  for (int i = 0; i < 500; ++i) {
    const Vec psi = sample_task(Sampler::gaussian, box, rng, 1.0).psi;
    ASSERT_TRUE(box.contains(psi));
    if ((psi.cwiseAbs().array() == 0.5).any()) ++on_boundary;
  }
  EXPECT_GT(on_boundary, 250);
}

TEST(SampleTask, FixedSeedGivesIdenticalSequence) {
  const envs::TaskBox box(Vec::Constant(2, -3), Vec::Constant(2, 3));
  for (auto s : {Sampler::uniform, Sampler::gaussian}) {
    Rng a(3), b(3);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_task(s, box, a).psi, sample_task(s, box, b).psi);
  }
}

TEST(SampleTask, AdversarialIsNotADistribution) {
  const envs::TaskBox box(Vec::Constant(2, -3), Vec::Constant(2, 3));
  Rng rng(4);
  EXPECT_THROW(sample_task(Sampler::adversarial, box, rng), InputError);
}

TEST(RunTask, SingleTaskSkipsZeroShotAndGradient) {
  auto c = tiny_config();
  c.n_tasks = 1;
  const auto s = run_in_memory(c);
  ASSERT_EQ(s.records.size(), 1u);
  EXPECT_TRUE(s.records[0].zero_shot_skipped);
  EXPECT_FALSE(s.records[0].grad.has_value());
  EXPECT_LT(s.records[0].gate_residual, 0.0);
  EXPECT_EQ(s.records[0].slbo_iterations, c.first_task_slbo);
}

TEST(RunTask, RecordsAreCompleteForEverySampler) {
  for (auto sampler : {Sampler::adversarial, Sampler::uniform, Sampler::gaussian}) {
    const auto c = tiny_config(sampler);
    const auto s = run_in_memory(c);
    ASSERT_EQ(s.records.size(), 3u);
    for (std::size_t t = 1; t < s.records.size(); ++t) {
      const auto& r = s.records[t];
      EXPECT_FALSE(r.zero_shot_skipped);
      EXPECT_EQ(r.grad.has_value(), sampler == Sampler::adversarial);
      if (sampler == Sampler::adversarial) {
        EXPECT_GE(r.gate_residual, 0.0);
        EXPECT_EQ(r.gate_ok, r.gate_residual <= c.tol_inner);
      }
      EXPECT_TRUE(c.task_box().contains(r.next_psi));
      EXPECT_EQ(r.psi, s.records[t - 1].next_psi);
    }
  }
}

TEST(RunTask, RealSampleAccountingIsExactAndEqualAcrossSamplers) {
  for (auto sampler : {Sampler::adversarial, Sampler::uniform, Sampler::gaussian}) {
    const auto c = tiny_config(sampler);
    const auto comp = make_components(c);
    auto state = initial_state(c, comp);
    while (state.next_task < c.n_tasks) run_task(c, comp, state);
    EXPECT_EQ(state.real_steps, expected_real_steps(c));
    EXPECT_EQ(comp.env->real_steps(), expected_real_steps(c));
    EXPECT_EQ(state.dataset.size(), expected_real_steps(c));
  }
}

TEST(RunTask, FreshRolloutCostsTwoExtraCollectionsPerAdversarialTask) {
  auto c = tiny_config();
  c.fresh_rollout = true;
  const auto s = run_in_memory(c);
  EXPECT_EQ(s.real_steps, expected_real_steps(c) + 2u * (c.n_tasks - 1) * c.n_collect);
}

TEST(RunTask, DatasetIsAppendOnly) {
  const auto c = tiny_config(Sampler::uniform);
  const auto comp = make_components(c);
  auto state = initial_state(c, comp);
  run_task(c, comp, state);
  const Mat prefix = state.dataset.next_states();
  const auto tags = state.dataset.tags();
  run_task(c, comp, state);
  ASSERT_GT(state.dataset.size(), tags.size());
  EXPECT_EQ(Mat(state.dataset.next_states().leftCols(prefix.cols())), prefix);
  EXPECT_TRUE(std::equal(tags.begin(), tags.end(), state.dataset.tags().begin()));
  EXPECT_EQ(state.dataset.tags().back(), 1);
}

TEST(Run, WritesResolvedConfigLogAndCheckpoints) {
  test::TempDir dir("run_layout");
  const auto c = tiny_config();
  run(c, dir.path());
  EXPECT_EQ(config_from_json(nlohmann::json::parse(slurp(dir.path() / "config.json"))).n_tasks, c.n_tasks);
  EXPECT_EQ(slurp(dir.path() / "config.json"), to_json(c).dump(2) + "\n");
  std::istringstream log(slurp(dir.path() / "log.jsonl"));
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    EXPECT_EQ(nlohmann::json::parse(line).at("task").get<int>(), lines);
    ++lines;
  }
  EXPECT_EQ(lines, c.n_tasks);
  for (int t = 0; t < c.n_tasks; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "task_%03d.ckpt", t);
    EXPECT_TRUE(fs::exists(dir.path() / "state" / name));
  }
  EXPECT_TRUE(fs::exists(dir.path() / "state" / "dataset.csv"));
}

TEST(Run, ReproducesLogBitwiseFromConfigAndSeed) {
  test::TempDir a("repro_a"), b("repro_b");
  const auto c = tiny_config();
  run(c, a.path());
  const auto stored = load_config(a.path() / "config.json");
  run(stored, b.path());
  EXPECT_EQ(slurp(a.path() / "log.jsonl"), slurp(b.path() / "log.jsonl"));
  EXPECT_EQ(slurp(a.path() / "state" / "task_002.ckpt"), slurp(b.path() / "state" / "task_002.ckpt"));
}

TEST(Run, DifferentSeedsDiffer) {
  test::TempDir a("seed_a"), b("seed_b");
  run(tiny_config(Sampler::uniform, 0), a.path());
  run(tiny_config(Sampler::uniform, 1), b.path());
  EXPECT_NE(slurp(a.path() / "log.jsonl"), slurp(b.path() / "log.jsonl"));
}

TEST(Run, ResumeAfterInterruptionIsBitwiseIdentical) {
  const auto c = tiny_config();
  test::TempDir whole("resume_whole"), split("resume_split");
  const auto full = run(c, whole.path());

  RunOptions stop;
  stop.on_task = [](const TaskRecord& r) {
    if (r.task == 0) throw std::runtime_error("interrupted");
  };
  EXPECT_THROW(run(c, split.path(), stop), std::runtime_error);
  const auto resumed = run(c, split.path());

  EXPECT_EQ(slurp(whole.path() / "log.jsonl"), slurp(split.path() / "log.jsonl"));
  EXPECT_EQ(slurp(whole.path() / "state" / "task_002.ckpt"), slurp(split.path() / "state" / "task_002.ckpt"));
  EXPECT_EQ(slurp(whole.path() / "state" / "dataset.csv"), slurp(split.path() / "state" / "dataset.csv"));
  EXPECT_EQ(resumed.theta_final, full.theta_final);
}

TEST(Run, ResumeRefusesChangedConfig) {
  test::TempDir dir("resume_changed");
  auto c = tiny_config();
  c.n_tasks = 1;
  run(c, dir.path());
  c.alpha = 2.0;
  EXPECT_THROW(run(c, dir.path()), StateError);
  RunOptions fresh;
  fresh.resume = false;
  EXPECT_NO_THROW(run(c, dir.path(), fresh));
}

TEST(Run, LoadStateMatchesInMemoryState) {
  test::TempDir dir("load_state");
  const auto c = tiny_config(Sampler::gaussian);
  const auto s = run(c, dir.path());
  const auto l = load_state(c, dir.path());
  EXPECT_EQ(checkpoint_json(l), checkpoint_json(s));
  EXPECT_EQ(l.dataset.size(), s.dataset.size());
  EXPECT_EQ(l.psi, s.psi);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    config_from_json(nlohmann::json{{"n_taskz", 3}});
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("n_taskz"), std::string::npos);
  }
  try {
    config_from_json(nlohmann::json{{"trpo", {{"kl", 0.1}}}});
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("kl"), std::string::npos) << e.what();
  }
}

TEST(Config, OverridesParseJsonValues) {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "trpo.kl_limit=0.05");
  apply_override(j, "sampler=uniform");
  apply_override(j, "eval.adapt_samples=[2000,4000]");
  const auto c = config_from_json(j);
  EXPECT_EQ(c.trpo.kl_limit, 0.05);
  EXPECT_EQ(c.sampler, Sampler::uniform);
  EXPECT_EQ(c.eval.adapt_samples, (std::vector<int>{2000, 4000}));
  EXPECT_THROW(apply_override(j, "no_equals_sign"), InputError);
}

TEST(Config, JsonRoundTripIsLossless) {
  auto c = tiny_config(Sampler::gaussian, 7);
  c.trpo.fisher_subsample = 2;
  c.eval.ood_lo = {-4.0, -6.0};
  const auto j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)), j);
}

TEST(Config, ValidationRejectsInconsistentBudgets) {
  auto c = tiny_config();
  c.n_collect = 130;
  EXPECT_THROW(c.validate(), InputError);
  c = tiny_config();
  c.eval.adapt_samples = {150};
  EXPECT_THROW(c.validate(), InputError);
  c = tiny_config();
  c.task_hi = {3.0};
  EXPECT_THROW(c.validate(), InputError);
  c = tiny_config();
  c.eval.oracle_min_iters = c.eval.oracle_max_iters + 1;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Config, SamplerNames) {
  for (auto s : {Sampler::adversarial, Sampler::uniform, Sampler::gaussian})
    EXPECT_EQ(sampler_from_string(to_string(s)), s);
  EXPECT_THROW(sampler_from_string("mixed"), InputError);
}

TEST(TaskRecord, JsonRoundTrip) {
  const auto s = run_in_memory(tiny_config());
  for (const auto& r : s.records) EXPECT_EQ(to_json(task_record_from_json(to_json(r))), to_json(r));
}

}  // namespace
}  // namespace admrl::loop
