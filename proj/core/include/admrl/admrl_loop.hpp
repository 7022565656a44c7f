#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "admrl/dyn_model.hpp"
#include "admrl/envs.hpp"
#include "admrl/policy.hpp"
#include "admrl/policy_opt.hpp"
#include "admrl/task_grad.hpp"
#include "admrl/types.hpp"

namespace admrl::loop {

/// Reference budgets of the original experiments. Every default below is
/// derived from these; only the per-policy-step virtual sample count is
/// shrunk, through desk_scale.
struct ReferenceBudgets {
  static constexpr int n_zeroshot = 40;
  static constexpr int n_slbo = 3;
  static constexpr int first_task_slbo = 10;
  static constexpr int n_inner = 20;
  static constexpr int n_model = 100;
  static constexpr int n_policy = 20;
  static constexpr int n_trpo = 10000;
  static constexpr int cg_iters = 200;
  static constexpr double alpha = 4.0;
  static constexpr std::array<double, 6> alpha_sweep{1, 2, 4, 8, 16, 32};
};

enum class Sampler { adversarial, uniform, gaussian };

std::string to_string(Sampler s);
Sampler sampler_from_string(const std::string& s);

struct EvalConfig {
  int grid_size = 6;
  std::vector<double> ood_lo{-5.0, -5.0};
  std::vector<double> ood_hi{5.0, 5.0};
  int ood_grid_size = 6;
  std::vector<int> adapt_samples{2000, 4000, 6000};
  int eval_rollouts = 20;
  int oracle_min_iters = 300;
  int oracle_max_iters = 600;
  int oracle_plateau_window = 10;
  double oracle_plateau_tol = 0.005;
  int oracle_samples = 2000;  // real samples per oracle TRPO step
};

struct RunConfig {
  std::string env = "point_mass_2d";
  std::vector<double> task_lo{-3.0, -3.0};
  std::vector<double> task_hi{3.0, 3.0};
  std::vector<double> reward_coeffs{1.0, 1.0, 0.0};
  std::vector<int> reward_features{2, 3};
  Sampler sampler = Sampler::adversarial;
  double gaussian_sigma = 1.0;

  int n_tasks = 10;
  int n_slbo = ReferenceBudgets::n_slbo;
  int first_task_slbo = 3 * ReferenceBudgets::n_slbo;
  int n_collect = 2000;
  int n_inner = ReferenceBudgets::n_inner;
  int n_zeroshot = ReferenceBudgets::n_zeroshot;
  int n_model = ReferenceBudgets::n_model;
  int n_policy = ReferenceBudgets::n_policy;
  double alpha = ReferenceBudgets::alpha;
  double gamma = 0.99;
  int horizon = 100;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double desk_scale = 0.2;
  bool fresh_rollout = false;
  double noise_std = 0.1;
  double tol_inner = 1e-2;
  int gate_trajectories = 50;     // frozen virtual batch for the optimality gate
  int hessian_trajectories = 20;  // frozen virtual batch for the Hessian / mixed terms

  task_grad::CGConfig cg;
  policy_opt::TrpoConfig trpo;
  dyn_model::ModelArch model;
  dyn_model::FitConfig fit;
  policy::GaussianArch policy;
  EvalConfig eval;

  envs::TaskBox task_box() const;
  envs::TaskBox ood_box() const;
  policy_opt::VirtualTrainingBudget inner_budget() const { return {n_inner, n_model, n_policy}; }
  void validate() const;
};

/// The full default configuration. trpo.n_trpo is round(10000 * desk_scale)
/// unless given explicitly.
RunConfig default_config();
nlohmann::json to_json(const RunConfig& c);
/// Parses a (possibly partial) configuration on top of the defaults. Unknown
/// keys raise InputError naming the dotted key.
RunConfig config_from_json(const nlohmann::json& j);
/// "a.b.c=value"; the value is parsed as JSON when possible, otherwise kept
/// as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Objects owned per run and shared by training and evaluation.
struct Components {
  std::unique_ptr<envs::Environment> env;
  envs::RewardFamily reward;
  policy::GaussianMlpPolicy policy;

  policy_opt::InnerContext inner(const RunConfig& c) const;
};

Components make_components(const RunConfig& c);

envs::TaskParams sample_task(Sampler sampler, const envs::TaskBox& box, Rng& rng, double sigma = 1.0);

struct TaskRecord {
  int task = 0;
  Vec psi;
  Vec next_psi;
  Vec theta_hat;
  Vec theta_star;
  bool zero_shot_skipped = false;
  std::optional<task_grad::GradEstimate> grad;
  double gate_residual = -1.0;  // < 0 when not evaluated
  bool gate_ok = true;
  double return_hat = 0.0;   // mean real return of the first collection (theta_hat)
  double return_star = 0.0;  // mean real return of the last collection
  std::uint64_t real_steps = 0;  // cumulative after this task
  int slbo_iterations = 0;
  int trpo_rejected = 0;
};

nlohmann::json to_json(const TaskRecord& r);
TaskRecord task_record_from_json(const nlohmann::json& j);

struct RunState {
  dyn_model::DynModel model;
  Vec psi;
  dyn_model::TransitionDataset dataset;
  std::vector<TaskRecord> records;
  std::uint64_t real_steps = 0;
  int next_task = 0;
  Vec theta_final;
};

RunState initial_state(const RunConfig& c, const Components& comp);

/// One iteration of the outer loop on `state`. Real samples are drawn only
/// from comp.env.
const TaskRecord& run_task(const RunConfig& c, const Components& comp, RunState& state);

struct RunOptions {
  bool resume = true;
  /// Called after every task with the record just written.
  std::function<void(const TaskRecord&)> on_task;
};

/// Runs the outer loop inside `dir`: config.json, log.jsonl,
/// state/task_###.ckpt and state/dataset.csv. Resumes from the newest
/// checkpoint when one exists and resume is set.
RunState run(const RunConfig& c, const std::filesystem::path& dir, const RunOptions& opts = {});

/// Newest checkpoint in `dir`.
RunState load_state(const RunConfig& c, const std::filesystem::path& dir);

nlohmann::json checkpoint_json(const RunState& s);

}  // namespace admrl::loop
