#include "admrl/admrl_loop.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "admrl/json_util.hpp"
#include "admrl/rollout.hpp"

namespace admrl::loop {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Sampler s) {
  switch (s) {
    case Sampler::adversarial: return "adversarial";
    case Sampler::uniform: return "uniform";
    case Sampler::gaussian: return "gaussian";
  }
  return "adversarial";
}

Sampler sampler_from_string(const std::string& s) {
  if (s == "adversarial") return Sampler::adversarial;
  if (s == "uniform") return Sampler::uniform;
  if (s == "gaussian") return Sampler::gaussian;
  throw InputError("unknown sampler '" + s + "' (expected adversarial, uniform or gaussian)");
}

namespace {

Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

envs::TaskBox RunConfig::task_box() const {
  return {to_vec(task_lo), to_vec(task_hi)};
}

envs::TaskBox RunConfig::ood_box() const {
  return {to_vec(eval.ood_lo), to_vec(eval.ood_hi)};
}

void RunConfig::validate() const {
  require(n_tasks >= 1, "n_tasks must be >= 1");
  require(alpha > 0.0 && std::isfinite(alpha), "alpha must be > 0");
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  require(horizon >= 1, "horizon must be >= 1");
  require(n_slbo >= 1 && first_task_slbo >= 1, "n_slbo and first_task_slbo must be >= 1");
  require(n_collect >= horizon && n_collect % horizon == 0, "n_collect must be a positive multiple of horizon");
  require(n_inner >= 0 && n_zeroshot >= 0 && n_model >= 0 && n_policy >= 0, "budgets must be >= 0");
  require(desk_scale > 0.0, "desk_scale must be > 0");
  require(noise_std >= 0.0, "noise_std must be >= 0");
  require(tol_inner > 0.0, "tol_inner must be > 0");
  require(gaussian_sigma > 0.0, "gaussian_sigma must be > 0");
  require(gate_trajectories >= 1 && hessian_trajectories >= 1, "gate/hessian trajectory counts must be >= 1");
  require(cg.max_iters >= 1 && cg.damping >= 0.0 && cg.residual_tol > 0.0, "invalid cg settings");
  policy_opt::validate(trpo);
  require(task_lo.size() == task_hi.size() && !task_lo.empty(), "task_box lo/hi must have equal length");
  require(reward_features.size() == task_lo.size(), "reward.features must have one entry per task dimension");
  task_box();
  require(eval.grid_size >= 1 && eval.ood_grid_size >= 1, "grid sizes must be >= 1");
  require(eval.eval_rollouts >= 1, "eval.eval_rollouts must be >= 1");
  for (std::size_t i = 0; i < eval.adapt_samples.size(); ++i) {
    require(eval.adapt_samples[i] > 0 && eval.adapt_samples[i] % n_collect == 0,
            "eval.adapt_samples must be positive multiples of n_collect");
    require(i == 0 || eval.adapt_samples[i] > eval.adapt_samples[i - 1], "eval.adapt_samples must increase");
  }
  require(eval.oracle_min_iters >= 0 && eval.oracle_min_iters <= eval.oracle_max_iters,
          "eval.oracle_min_iters must lie in [0, oracle_max_iters]");
  require(eval.oracle_max_iters >= 1 && eval.oracle_plateau_window >= 1 && eval.oracle_samples >= horizon,
          "invalid oracle settings");
  ood_box();
}

RunConfig default_config() {
  RunConfig c;
  c.cg.max_iters = ReferenceBudgets::cg_iters;
  c.trpo.n_trpo = static_cast<int>(std::lround(ReferenceBudgets::n_trpo * c.desk_scale));
  c.model.hidden = {64};
  c.policy.hidden = {32};
  c.policy.input_scale = (Vec(4) << 0.05, 0.05, 0.5, 0.5).finished();
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["env"] = c.env;
  j["task_box"] = {{"lo", c.task_lo}, {"hi", c.task_hi}};
  j["reward"] = {{"coeffs", c.reward_coeffs}, {"features", c.reward_features}};
  j["sampler"] = to_string(c.sampler);
  j["gaussian_sigma"] = c.gaussian_sigma;
  j["n_tasks"] = c.n_tasks;
  j["n_slbo"] = c.n_slbo;
  j["first_task_slbo"] = c.first_task_slbo;
  j["n_collect"] = c.n_collect;
  j["n_inner"] = c.n_inner;
  j["n_zeroshot"] = c.n_zeroshot;
  j["n_model"] = c.n_model;
  j["n_policy"] = c.n_policy;
  j["alpha"] = c.alpha;
  j["gamma"] = c.gamma;
  j["horizon"] = c.horizon;
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["desk_scale"] = c.desk_scale;
  j["fresh_rollout"] = c.fresh_rollout;
  j["noise_std"] = c.noise_std;
  j["tol_inner"] = c.tol_inner;
  j["gate_trajectories"] = c.gate_trajectories;
  j["hessian_trajectories"] = c.hessian_trajectories;
  j["cg"] = {{"max_iters", c.cg.max_iters}, {"residual_tol", c.cg.residual_tol}, {"damping", c.cg.damping}};
  j["trpo"] = policy_opt::to_json(c.trpo);
  j["model"] = {{"hidden", c.model.hidden}, {"lr", c.fit.lr},       {"batch_size", c.fit.batch_size},
                {"beta1", c.fit.beta1},     {"beta2", c.fit.beta2}, {"eps", c.fit.eps}};
  std::vector<double> scale(c.policy.input_scale.data(), c.policy.input_scale.data() + c.policy.input_scale.size());
  j["policy"] = {{"hidden", c.policy.hidden}, {"input_scale", scale}};
  j["eval"] = {{"grid_size", c.eval.grid_size},
               {"ood_lo", c.eval.ood_lo},
               {"ood_hi", c.eval.ood_hi},
               {"ood_grid_size", c.eval.ood_grid_size},
               {"adapt_samples", c.eval.adapt_samples},
               {"eval_rollouts", c.eval.eval_rollouts},
               {"oracle_min_iters", c.eval.oracle_min_iters},
               {"oracle_max_iters", c.eval.oracle_max_iters},
               {"oracle_plateau_window", c.eval.oracle_plateau_window},
               {"oracle_plateau_tol", c.eval.oracle_plateau_tol},
               {"oracle_samples", c.eval.oracle_samples}};
  return j;
}

namespace {

void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw InputError("config" + (prefix.empty() ? "" : " key '" + prefix + "'") + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw InputError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

template <class T>
T field(const json& j, const std::string& key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError("config key '" + path + key + "' has an invalid value");
  }
}

}  // namespace

RunConfig config_from_json(const json& user) {
  json j = to_json(default_config());
  merge_checked(j, user, "");
  const bool explicit_trpo_samples = user.contains("trpo") && user["trpo"].is_object() &&
                                     user["trpo"].contains("n_trpo");

  RunConfig c = default_config();
  c.env = field<std::string>(j, "env", "");
  c.task_lo = field<std::vector<double>>(j["task_box"], "lo", "task_box.");
  c.task_hi = field<std::vector<double>>(j["task_box"], "hi", "task_box.");
  c.reward_coeffs = field<std::vector<double>>(j["reward"], "coeffs", "reward.");
  c.reward_features = field<std::vector<int>>(j["reward"], "features", "reward.");
  c.sampler = sampler_from_string(field<std::string>(j, "sampler", ""));
  c.gaussian_sigma = field<double>(j, "gaussian_sigma", "");
  c.n_tasks = field<int>(j, "n_tasks", "");
  c.n_slbo = field<int>(j, "n_slbo", "");
  c.first_task_slbo = field<int>(j, "first_task_slbo", "");
  c.n_collect = field<int>(j, "n_collect", "");
  c.n_inner = field<int>(j, "n_inner", "");
  c.n_zeroshot = field<int>(j, "n_zeroshot", "");
  c.n_model = field<int>(j, "n_model", "");
  c.n_policy = field<int>(j, "n_policy", "");
  c.alpha = field<double>(j, "alpha", "");
  c.gamma = field<double>(j, "gamma", "");
  c.horizon = field<int>(j, "horizon", "");
  c.seed = field<std::uint64_t>(j, "seed", "");
  c.seeds = field<std::vector<std::uint64_t>>(j, "seeds", "");
  c.desk_scale = field<double>(j, "desk_scale", "");
  c.fresh_rollout = field<bool>(j, "fresh_rollout", "");
  c.noise_std = field<double>(j, "noise_std", "");
  c.tol_inner = field<double>(j, "tol_inner", "");
  c.gate_trajectories = field<int>(j, "gate_trajectories", "");
  c.hessian_trajectories = field<int>(j, "hessian_trajectories", "");
  const json& cg = j["cg"];
  c.cg.max_iters = field<int>(cg, "max_iters", "cg.");
  c.cg.residual_tol = field<double>(cg, "residual_tol", "cg.");
  c.cg.damping = field<double>(cg, "damping", "cg.");
  const json& tr = j["trpo"];
  c.trpo.kl_limit = field<double>(tr, "kl_limit", "trpo.");
  c.trpo.cg_iters_inner = field<int>(tr, "cg_iters_inner", "trpo.");
  c.trpo.cg_damping = field<double>(tr, "cg_damping", "trpo.");
  c.trpo.backtrack_count = field<int>(tr, "backtrack_count", "trpo.");
  c.trpo.backtrack_ratio = field<double>(tr, "backtrack_ratio", "trpo.");
  c.trpo.fisher_subsample = field<int>(tr, "fisher_subsample", "trpo.");
  c.trpo.n_trpo = explicit_trpo_samples ? field<int>(tr, "n_trpo", "trpo.")
                                        : static_cast<int>(std::lround(ReferenceBudgets::n_trpo * c.desk_scale));
  const json& m = j["model"];
  c.model.hidden = field<std::vector<int>>(m, "hidden", "model.");
  c.fit.lr = field<double>(m, "lr", "model.");
  c.fit.batch_size = field<int>(m, "batch_size", "model.");
  c.fit.beta1 = field<double>(m, "beta1", "model.");
  c.fit.beta2 = field<double>(m, "beta2", "model.");
  c.fit.eps = field<double>(m, "eps", "model.");
  const json& p = j["policy"];
  c.policy.hidden = field<std::vector<int>>(p, "hidden", "policy.");
  c.policy.input_scale = to_vec(field<std::vector<double>>(p, "input_scale", "policy."));
  const json& e = j["eval"];
  c.eval.grid_size = field<int>(e, "grid_size", "eval.");
  c.eval.ood_lo = field<std::vector<double>>(e, "ood_lo", "eval.");
  c.eval.ood_hi = field<std::vector<double>>(e, "ood_hi", "eval.");
  c.eval.ood_grid_size = field<int>(e, "ood_grid_size", "eval.");
  c.eval.adapt_samples = field<std::vector<int>>(e, "adapt_samples", "eval.");
  c.eval.eval_rollouts = field<int>(e, "eval_rollouts", "eval.");
  c.eval.oracle_min_iters = field<int>(e, "oracle_min_iters", "eval.");
  c.eval.oracle_max_iters = field<int>(e, "oracle_max_iters", "eval.");
  c.eval.oracle_plateau_window = field<int>(e, "oracle_plateau_window", "eval.");
  c.eval.oracle_plateau_tol = field<double>(e, "oracle_plateau_tol", "eval.");
  c.eval.oracle_samples = field<int>(e, "oracle_samples", "eval.");
  for (int h : c.model.hidden) require(h >= 1, "model.hidden entries must be >= 1");
  for (int h : c.policy.hidden) require(h >= 1, "policy.hidden entries must be >= 1");
  c.validate();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InputError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw InputError("override key '" + key + "' is malformed");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw InputError("config " + path.string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

policy_opt::InnerContext Components::inner(const RunConfig& c) const {
  return policy_opt::InnerContext{*env, policy, reward, c.gamma, c.horizon, c.trpo, c.fit};
}

Components make_components(const RunConfig& c) {
  auto env = envs::make_environment(c.env);
  auto reward = envs::RewardFamily::velocity_match(c.reward_coeffs, c.reward_features);
  require(reward.task_dim() == static_cast<int>(c.task_lo.size()), "reward family and task box disagree on dimension");
  for (int f : c.reward_features)
    require(f >= 0 && f < env->state_dim(), "reward.features index outside the state");
  policy::GaussianArch arch;
  arch.obs_dim = env->state_dim();
  arch.act_dim = env->action_dim();
  arch.hidden = c.policy.hidden;
  arch.input_scale = c.policy.input_scale;
  require(arch.input_scale.size() == 0 || arch.input_scale.size() == arch.obs_dim,
          "policy.input_scale must be empty or have one entry per state coordinate");
  return Components{std::move(env), std::move(reward), policy::GaussianMlpPolicy(arch)};
}

envs::TaskParams sample_task(Sampler sampler, const envs::TaskBox& box, Rng& rng, double sigma) {
  Vec psi(box.dim());
  switch (sampler) {
    case Sampler::adversarial:
      throw InputError("sample_task: adversarial tasks come from the task gradient, not a distribution");
    case Sampler::uniform:
      for (int i = 0; i < box.dim(); ++i) psi[i] = box.lo()[i] + (box.hi()[i] - box.lo()[i]) * uniform01(rng);
      return envs::project_task(box, psi);
    case Sampler::gaussian:
      for (int i = 0; i < box.dim(); ++i) psi[i] = box.center()[i] + sigma * standard_normal(rng);
      return envs::project_task(box, psi);
  }
  throw InputError("sample_task: unknown sampler");
}

// ---------------------------------------------------------------------------
// Records

json to_json(const TaskRecord& r) {
  json j;
  j["task"] = r.task;
  j["psi"] = vec_to_json(r.psi);
  j["next_psi"] = vec_to_json(r.next_psi);
  j["theta_hat"] = vec_to_json(r.theta_hat);
  j["theta_star"] = vec_to_json(r.theta_star);
  j["zero_shot_skipped"] = r.zero_shot_skipped;
  j["grad"] = r.grad ? task_grad::to_json(*r.grad) : json(nullptr);
  j["gate_residual"] = r.gate_residual;
  j["gate_ok"] = r.gate_ok;
  j["return_hat"] = r.return_hat;
  j["return_star"] = r.return_star;
  j["real_steps"] = r.real_steps;
  j["slbo_iterations"] = r.slbo_iterations;
  j["trpo_rejected"] = r.trpo_rejected;
  return j;
}

TaskRecord task_record_from_json(const json& j) {
  TaskRecord r;
  r.task = j.at("task").get<int>();
  r.psi = vec_from_json(j.at("psi"));
  r.next_psi = vec_from_json(j.at("next_psi"));
  r.theta_hat = vec_from_json(j.at("theta_hat"));
  r.theta_star = vec_from_json(j.at("theta_star"));
  r.zero_shot_skipped = j.at("zero_shot_skipped").get<bool>();
  if (!j.at("grad").is_null()) r.grad = task_grad::grad_estimate_from_json(j.at("grad"));
  r.gate_residual = j.at("gate_residual").get<double>();
  r.gate_ok = j.at("gate_ok").get<bool>();
  r.return_hat = j.at("return_hat").get<double>();
  r.return_star = j.at("return_star").get<double>();
  r.real_steps = j.at("real_steps").get<std::uint64_t>();
  r.slbo_iterations = j.at("slbo_iterations").get<int>();
  r.trpo_rejected = j.at("trpo_rejected").get<int>();
  return r;
}

// ---------------------------------------------------------------------------
// Loop

namespace {

constexpr std::uint64_t kModelStream = 0x6d6f64656cULL;
constexpr std::uint64_t kPsiStream = 0x707369ULL;
constexpr std::uint64_t kTaskStream = 0x7461736bULL;

dyn_model::ModelArch model_arch(const RunConfig& c, const Components& comp) {
  dyn_model::ModelArch a;
  a.state_dim = comp.env->state_dim();
  a.action_dim = comp.env->action_dim();
  a.hidden = c.model.hidden;
  return a;
}

}  // namespace

RunState initial_state(const RunConfig& c, const Components& comp) {
  c.validate();
  Rng model_rng(mix_seed(c.seed, kModelStream));
  Rng psi_rng(mix_seed(c.seed, kPsiStream));
  RunState s{dyn_model::DynModel::random(model_arch(c, comp), model_rng),
             sample_task(Sampler::uniform, c.task_box(), psi_rng).psi,
             dyn_model::TransitionDataset(comp.env->state_dim(), comp.env->action_dim()),
             {},
             0,
             0,
             {}};
  return s;
}

const TaskRecord& run_task(const RunConfig& c, const Components& comp, RunState& state) {
  require(state.next_task < c.n_tasks, "run_task: all tasks already completed");
  const int task = state.next_task;
  Rng rng(mix_seed(c.seed, kTaskStream, static_cast<std::uint64_t>(task)));
  const auto inner = comp.inner(c);
  const envs::Environment& env = *comp.env;
  const std::uint64_t steps_before = env.real_steps();
  const envs::TaskBox box = c.task_box();
  const bool adversarial_update = c.sampler == Sampler::adversarial && task > 0;

  TaskRecord rec;
  rec.task = task;
  rec.psi = state.psi;

  // Zero-shot adaptation in the current model.
  Vec theta;
  const auto zs = policy_opt::zero_shot_adapt(inner, state.model, state.psi, state.dataset, c.n_zeroshot,
                                              c.inner_budget(), rng);
  if (zs) {
    theta = zs->theta;
    rec.trpo_rejected += zs->rejected_steps;
  } else {
    rec.zero_shot_skipped = true;
    theta = comp.policy.initial_params(rng);
  }
  rec.theta_hat = theta;

  // theta_hat is optimal for the model as it stands now, so the frozen
  // virtual batches are drawn before SLBO refits the model.
  std::optional<rollout::TrajectoryBatch> hessian_batch;
  if (adversarial_update) {
    const dyn_model::ModelDynamics virt(state.model, env);
    const auto gate_batch = rollout::collect(virt, comp.policy, theta, c.gate_trajectories, c.horizon, rng);
    rec.gate_residual = policy_opt::first_order_residual(comp.policy, theta, gate_batch, comp.reward, state.psi,
                                                         c.gamma);
    rec.gate_ok = rec.gate_residual <= c.tol_inner;
    if (!rec.gate_ok) {
      std::fprintf(stderr, "warning: task %d: inner optimality residual %.3e exceeds tol_inner %.1e\n", task,
                   rec.gate_residual, c.tol_inner);
    }
    hessian_batch = rollout::collect(virt, comp.policy, theta, c.hessian_trajectories, c.horizon, rng);
  }

  // SLBO on real samples.
  const int n_slbo = task == 0 ? c.first_task_slbo : c.n_slbo;
  const int n_traj = c.n_collect / c.horizon;
  std::optional<rollout::TrajectoryBatch> first_batch;
  rollout::TrajectoryBatch last_batch;
  for (int j = 0; j < n_slbo; ++j) {
    auto batch = rollout::collect(env, comp.policy, theta, n_traj, c.horizon, rng, c.noise_std);
    rollout::append_to_dataset(batch, state.dataset, task);
    const auto vt = policy_opt::virtual_training(inner, theta, state.model, state.psi, state.dataset,
                                                 c.inner_budget(), rng);
    rec.trpo_rejected += vt.rejected_steps;
    theta = vt.theta;
    if (!first_batch) first_batch = std::move(batch);
    else last_batch = std::move(batch);
  }
  if (n_slbo == 1) last_batch = *first_batch;
  rec.slbo_iterations = n_slbo;
  rec.theta_star = theta;
  rec.return_hat = rollout::mean_return(*first_batch, comp.reward, state.psi, c.gamma);
  rec.return_star = rollout::mean_return(last_batch, comp.reward, state.psi, c.gamma);

  // Task update.
  if (task == 0) {
    rec.next_psi = sample_task(c.sampler == Sampler::gaussian ? Sampler::gaussian : Sampler::uniform, box, rng,
                               c.gaussian_sigma)
                       .psi;
  } else if (c.sampler == Sampler::adversarial) {
    rollout::TrajectoryBatch star_batch;
    rollout::TrajectoryBatch hat_batch;
    const rollout::TrajectoryBatch* star = &last_batch;
    const rollout::TrajectoryBatch* hat = &*first_batch;
    if (c.fresh_rollout) {
      star_batch = rollout::collect(env, comp.policy, rec.theta_star, n_traj, c.horizon, rng, c.noise_std);
      hat_batch = rollout::collect(env, comp.policy, rec.theta_hat, n_traj, c.horizon, rng, c.noise_std);
      star = &star_batch;
      hat = &hat_batch;
    }
    const task_grad::TaskGradientInputs in{comp.policy,   comp.reward, state.psi, c.gamma, rec.theta_star,
                                           rec.theta_hat, *star,       *hat,      *hessian_batch, c.cg,
                                           !c.fresh_rollout};
    rec.grad = task_grad::task_gradient(in);
    rec.next_psi = task_grad::task_ascent_step(box, state.psi, rec.grad->total, c.alpha).psi;
  } else {
    rec.next_psi = sample_task(c.sampler, box, rng, c.gaussian_sigma).psi;
  }

  state.real_steps += env.real_steps() - steps_before;
  rec.real_steps = state.real_steps;
  state.psi = rec.next_psi;
  state.theta_final = rec.theta_star;
  state.next_task = task + 1;
  state.records.push_back(std::move(rec));
  return state.records.back();
}

json checkpoint_json(const RunState& s) {
  json j;
  j["version"] = 1;
  j["next_task"] = s.next_task;
  j["psi"] = vec_to_json(s.psi);
  j["model"] = s.model.to_json();
  j["dataset_size"] = s.dataset.size();
  j["real_steps"] = s.real_steps;
  j["theta_final"] = vec_to_json(s.theta_final);
  j["records"] = json::array();
  for (const auto& r : s.records) j["records"].push_back(to_json(r));
  return j;
}

namespace {

fs::path checkpoint_path(const fs::path& dir, int task) {
  char name[32];
  std::snprintf(name, sizeof(name), "task_%03d.ckpt", task);
  return dir / "state" / name;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string log_line(const TaskRecord& r) {
  json j = to_json(r);
  j.erase("theta_hat");
  j.erase("theta_star");
  return j.dump() + "\n";
}

dyn_model::TransitionDataset truncated(const dyn_model::TransitionDataset& d, std::size_t n) {
  if (d.size() == n) return d;
  if (d.size() < n) throw StateError("dataset file is shorter than the checkpoint records");
  dyn_model::TransitionDataset out(d.state_dim(), d.action_dim());
  const auto s = d.states();
  const auto a = d.actions();
  const auto s2 = d.next_states();
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    out.append(s.col(c), a.col(c), s2.col(c), d.tags()[i]);
  }
  return out;
}

int newest_checkpoint(const fs::path& dir) {
  int best = -1;
  const fs::path sd = dir / "state";
  if (!fs::exists(sd)) return best;
  for (const auto& e : fs::directory_iterator(sd)) {
    const std::string name = e.path().filename().string();
    int t = -1;
    if (std::sscanf(name.c_str(), "task_%d.ckpt", &t) == 1 && name.size() == 13 && t > best) best = t;
  }
  return best;
}

}  // namespace

RunState load_state(const RunConfig& c, const fs::path& dir) {
  const int t = newest_checkpoint(dir);
  if (t < 0) throw StateError("no checkpoint in " + dir.string());
  std::ifstream in(checkpoint_path(dir, t));
  if (!in) throw IoError("cannot read checkpoint " + checkpoint_path(dir, t).string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError("corrupt checkpoint " + checkpoint_path(dir, t).string());
  const Components comp = make_components(c);
  RunState s = initial_state(c, comp);
  s.next_task = j.at("next_task").get<int>();
  s.psi = vec_from_json(j.at("psi"));
  s.model = dyn_model::DynModel::from_json(j.at("model"));
  s.real_steps = j.at("real_steps").get<std::uint64_t>();
  s.theta_final = vec_from_json(j.at("theta_final"));
  for (const auto& r : j.at("records")) s.records.push_back(task_record_from_json(r));
  const auto n = j.at("dataset_size").get<std::size_t>();
  if (n > 0) {
    s.dataset = truncated(dyn_model::TransitionDataset::load_csv(dir / "state" / "dataset.csv",
                                                                 comp.env->state_dim(), comp.env->action_dim()),
                          n);
  }
  return s;
}

RunState run(const RunConfig& c, const fs::path& dir, const RunOptions& opts) {
  c.validate();
  fs::create_directories(dir / "state");
  const std::string cfg_text = to_json(c).dump(2) + "\n";
  const fs::path cfg_path = dir / "config.json";

  const Components comp = make_components(c);
  RunState state = initial_state(c, comp);
  if (opts.resume && newest_checkpoint(dir) >= 0) {
    std::ifstream in(cfg_path);
    std::stringstream existing;
    existing << in.rdbuf();
    if (existing.str() != cfg_text)
      throw StateError("cannot resume " + dir.string() + ": config differs from the stored config.json");
    state = load_state(c, dir);
  } else {
    for (const auto& e : fs::directory_iterator(dir / "state")) fs::remove(e.path());
  }
  write_text(cfg_path, cfg_text);

  std::string log;
  for (const auto& r : state.records) log += log_line(r);
  write_text(dir / "log.jsonl", log);

  while (state.next_task < c.n_tasks) {
    const TaskRecord& rec = run_task(c, comp, state);
    state.dataset.save_csv(dir / "state" / "dataset.csv");
    write_text(checkpoint_path(dir, rec.task), checkpoint_json(state).dump() + "\n");
    std::ofstream out(dir / "log.jsonl", std::ios::app);
    if (!out) throw IoError("cannot append to log.jsonl");
    out << log_line(rec);
    if (opts.on_task) opts.on_task(rec);
  }
  return state;
}

}  // namespace admrl::loop
